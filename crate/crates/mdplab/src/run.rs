use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;

use crate::label::StateRef;
use crate::mdp::{Event, EventKind, LazyMdp, MdpError, Reward};

/// Finite run prefix with exact accumulated reward.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub states: Vec<StateRef>,
    pub rewards: Vec<Reward>,
    pub total_reward: BigRational,
    pub steps: u64,
    pub events: Vec<Event>,
    /// Set when the run stopped early because it entered an absorbing sink.
    pub absorbed: bool,
}

impl RunRecord {
    pub fn new(initial: StateRef) -> Self {
        RunRecord {
            states: vec![initial],
            rewards: Vec::new(),
            total_reward: BigRational::zero(),
            steps: 0,
            events: Vec::new(),
            absorbed: false,
        }
    }

    pub fn last(&self) -> &StateRef {
        self.states.last().expect("run has an initial state")
    }

    pub fn push(&mut self, t: StateRef, r: Reward) {
        self.total_reward += &r;
        self.rewards.push(r);
        self.states.push(t);
        self.steps += 1;
    }

    pub fn recomputed_total(&self) -> BigRational {
        self.rewards.iter().fold(BigRational::zero(), |acc, r| acc + r)
    }

    /// Checks the consecutive-transition and reward-sum invariants.
    pub fn check(&self, mdp: &dyn LazyMdp) -> Result<(), MdpError> {
        if self.steps as usize != self.rewards.len() || self.states.len() != self.rewards.len() + 1 {
            return Err(MdpError::Construction("run length mismatch".into()));
        }
        for (i, r) in self.rewards.iter().enumerate() {
            let expect = mdp.reward(&self.states[i], &self.states[i + 1])?;
            if &expect != r {
                return Err(MdpError::Construction(format!("reward mismatch at step {}", i + 1)));
            }
        }
        if self.recomputed_total() != self.total_reward {
            return Err(MdpError::Construction("total reward drift".into()));
        }
        Ok(())
    }

    pub fn first_event(&self, pred: impl Fn(&EventKind) -> bool) -> Option<&Event> {
        self.events.iter().find(|e| pred(&e.kind))
    }

    pub fn count_events(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    pub fn sink_step(&self) -> Option<u64> {
        self.first_event(|k| matches!(k, EventKind::Sink)).map(|e| e.step)
    }

    pub fn restarts(&self) -> u64 {
        self.count_events(|k| matches!(k, EventKind::Restart { .. })) as u64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub total_reward: String,
    pub last: String,
    pub events: Vec<Event>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        RunSummary {
            steps: r.steps,
            total_reward: r.total_reward.to_string(),
            last: r.last().to_string(),
            events: r.events.clone(),
        }
    }
}
