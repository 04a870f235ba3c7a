//! Laboratory for countable MDPs with liminf point, total and mean payoff
//! objectives.

pub mod analysis;
pub mod constructions;
pub mod harness;
pub mod label;
pub mod mdp;
pub mod montecarlo;
pub mod payoff;
pub mod run;
pub mod schedule;
pub mod solver;
pub mod strategy;
pub mod transforms;

pub use label::StateRef;
pub use mdp::{LazyMdp, Prob, Successors};
pub use run::RunRecord;
