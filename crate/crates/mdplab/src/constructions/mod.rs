//! MDP families built from a parameter schedule, a name registry, and
//! structural verdict adapters.

pub mod binarize;
pub mod chain;
pub mod infbranch;
pub mod ri;

use std::str::FromStr;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::mdp::{EventKind, LazyMdp, SharedMdp};
use crate::payoff::{horizon_verdict, Certificate, PayoffKind, Verdict};
use crate::run::RunRecord;
use crate::schedule::{ParamSchedule, ScheduleError};

pub use binarize::{BinChain, BinRi};
pub use chain::ChainFamily;
pub use infbranch::{InfBranch, Puterman};
pub use ri::RewardImplicit;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
    #[error("run does not belong to family {0}")]
    FamilyMismatch(String),
    #[error("cannot binarize: {0}")]
    Binarize(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum FamilyKind {
    Chain,
    Restart,
    RewardImplicit,
    RewardImplicitRestart,
    InfBranch,
    Puterman,
    BinarizedChain,
    BinarizedRewardImplicit,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 8] = [
        FamilyKind::Chain,
        FamilyKind::Restart,
        FamilyKind::RewardImplicit,
        FamilyKind::RewardImplicitRestart,
        FamilyKind::InfBranch,
        FamilyKind::Puterman,
        FamilyKind::BinarizedChain,
        FamilyKind::BinarizedRewardImplicit,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FamilyKind::Chain => "chain",
            FamilyKind::Restart => "restart",
            FamilyKind::RewardImplicit => "reward-implicit",
            FamilyKind::RewardImplicitRestart => "reward-implicit-restart",
            FamilyKind::InfBranch => "inf-branch",
            FamilyKind::Puterman => "puterman",
            FamilyKind::BinarizedChain => "binarized:chain",
            FamilyKind::BinarizedRewardImplicit => "binarized:reward-implicit",
        }
    }

    pub fn uses_schedule(self) -> bool {
        !matches!(self, FamilyKind::InfBranch | FamilyKind::Puterman)
    }

    fn has_restarts(self) -> bool {
        matches!(self, FamilyKind::Restart | FamilyKind::RewardImplicitRestart)
    }
}

impl FromStr for FamilyKind {
    type Err = ConstructionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FamilyKind::ALL.into_iter().find(|k| k.id() == s).ok_or_else(|| ConstructionError::UnknownFamily(s.into()))
    }
}

/// A constructed family together with its kind.
#[derive(Clone)]
pub struct Family {
    pub kind: FamilyKind,
    pub mdp: SharedMdp,
}

/// Builds a registered family. `exact` selects rational probabilities where
/// the schedule supports them.
pub fn build(kind: FamilyKind, schedule: Arc<ParamSchedule>, exact: bool) -> Result<Family, ConstructionError> {
    let mdp: SharedMdp = match kind {
        FamilyKind::Chain => Arc::new(ChainFamily::new(schedule, false, exact)),
        FamilyKind::Restart => Arc::new(ChainFamily::new(schedule, true, exact)),
        FamilyKind::RewardImplicit => Arc::new(RewardImplicit::new(schedule, false, exact)),
        FamilyKind::RewardImplicitRestart => Arc::new(RewardImplicit::new(schedule, true, exact)),
        FamilyKind::InfBranch => Arc::new(InfBranch),
        FamilyKind::Puterman => Arc::new(Puterman),
        FamilyKind::BinarizedChain => Arc::new(BinChain::new(schedule, exact)?),
        FamilyKind::BinarizedRewardImplicit => Arc::new(BinRi::new(schedule, exact)),
    };
    Ok(Family { kind, mdp })
}

/// Builds a family by registry name and schedule preset name.
pub fn build_named(family: &str, schedule: &str, exact: bool) -> Result<Family, ConstructionError> {
    let kind: FamilyKind = family.parse()?;
    build(kind, Arc::new(ParamSchedule::preset(schedule)?), exact)
}

/// Strategy property declared by the caller of a verdict adapter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StrategyClaim {
    /// Mimics the observed branch in every gadget entered at or after `from`.
    MimicFrom(i64),
}

#[derive(Clone, Debug, Serialize)]
pub struct AdapterReport {
    pub verdict: Verdict,
    pub restarts: u64,
    /// Whether every gadget of the last row was played by mimicking.
    pub last_row_mimic: Option<bool>,
    pub marked: u64,
}

/// Per gadget traversal: (row, gadget, observed branch, controlled branch).
pub fn gadget_plays(kind: FamilyKind, run: &RunRecord) -> Vec<(i64, i64, i64, i64)> {
    let mut out = Vec::new();
    let mut pending: Option<(i64, i64, i64)> = None;
    let mut prev_was_p = false;
    for s in &run.states {
        let a: Vec<i64> = (0..s.arity()).map(|i| s.int(i).unwrap_or(i64::MIN)).collect();
        let name = s.name().unwrap_or("");
        let obs = match (kind, name) {
            (FamilyKind::Chain | FamilyKind::BinarizedChain, "a") => Some((0, a[0], a[1])),
            (FamilyKind::Restart, "a") => Some((a[0], a[2], a[3])),
            (FamilyKind::RewardImplicit | FamilyKind::BinarizedRewardImplicit, "p") if a[2] == 1 && !prev_was_p => {
                Some((0, a[0], a[1]))
            }
            (FamilyKind::RewardImplicitRestart, "p") if a[3] == 1 && !prev_was_p => Some((a[0], a[1], a[2])),
            _ => None,
        };
        let choice = match (kind, name) {
            (FamilyKind::Chain | FamilyKind::BinarizedChain, "b") => Some((0, a[0], a[1])),
            (FamilyKind::Restart, "b") => Some((a[0], a[2], a[3])),
            (FamilyKind::RewardImplicit, "q") => Some((0, a[0], a[1])),
            (FamilyKind::RewardImplicitRestart, "q") => Some((a[0], a[1], a[2])),
            (FamilyKind::BinarizedRewardImplicit, "dn") if a[2] == 0 => Some((0, a[0], a[1])),
            _ => None,
        };
        prev_was_p = name == "p";
        if let Some(o) = obs {
            pending = Some(o);
        }
        if let (Some((row, n, j)), Some((prow, pn, i))) = (choice, pending) {
            if row == prow && n == pn {
                out.push((row, n, i, j));
                pending = None;
            }
        }
    }
    out
}

/// Family-specific certificates on top of the generic horizon verdict.
pub fn verdict_adapter(
    family: &Family,
    run: &RunRecord,
    claim: Option<&StrategyClaim>,
) -> Result<AdapterReport, ConstructionError> {
    let kind = family.kind;
    if run.states.iter().take(1).any(|s| family.mdp.successors(s).is_err()) {
        return Err(ConstructionError::FamilyMismatch(kind.id().into()));
    }
    let threshold = BigRational::zero();
    let base = horizon_verdict(run, PayoffKind::MeanPayoff, &threshold);
    let restarts = run.restarts();
    let marked = run.count_events(|k| matches!(k, EventKind::Marked)) as u64;
    let plays = gadget_plays(kind, run);
    let last_row = plays.iter().map(|p| p.0).max().unwrap_or(0);
    let mimic_from = |from: i64, row: Option<i64>| {
        plays.iter().filter(|p| row.is_none_or(|r| p.0 == r) && p.1 >= from).all(|p| p.2 == p.3)
    };
    let last_row_mimic = kind.has_restarts().then(|| mimic_from(i64::MIN, Some(last_row)));
    if base.is_lose() {
        return Ok(AdapterReport { verdict: base, restarts, last_row_mimic, marked });
    }
    let verdict = match (kind, claim) {
        (FamilyKind::Restart | FamilyKind::RewardImplicitRestart, Some(StrategyClaim::MimicFrom(from)))
            if mimic_from(*from, Some(last_row)) =>
        {
            Verdict::WinCertified(Certificate::Conditional {
                rule: format!("restart-count={restarts};last-row-mimic"),
                tail_bound: "P(another restart) <= 1/2 per row".into(),
            })
        }
        (
            FamilyKind::Chain
            | FamilyKind::BinarizedChain
            | FamilyKind::RewardImplicit
            | FamilyKind::BinarizedRewardImplicit,
            Some(StrategyClaim::MimicFrom(from)),
        ) if mimic_from(*from, None) => Verdict::WinCertified(Certificate::Adapter("mimic-without-sink".into())),
        _ => base,
    };
    Ok(AdapterReport { verdict, restarts, last_row_mimic, marked })
}
