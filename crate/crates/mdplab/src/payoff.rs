//! Point, total and mean payoff sequences and horizon-limited verdicts.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::run::RunRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PayoffKind {
    PointPayoff,
    TotalPayoff,
    MeanPayoff,
}

impl PayoffKind {
    pub const ALL: [PayoffKind; 3] = [PayoffKind::PointPayoff, PayoffKind::TotalPayoff, PayoffKind::MeanPayoff];
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayoffError {
    #[error("run has no transitions")]
    EmptyRun,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Certificate {
    /// Entered the flagged losing sink.
    Sink,
    /// A construction adapter rule, identified by name.
    Adapter(String),
    /// Adapter rule that holds under a stated analytic tail bound.
    Conditional { rule: String, tail_bound: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DipStats {
    /// Minimum of the payoff sequence over the prefix.
    pub window_min: Option<String>,
    pub last_dip: Option<u64>,
    pub dips: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    WinCertified(Certificate),
    LoseCertified(Certificate, u64),
    Undetermined(DipStats),
}

impl Verdict {
    pub fn is_win(&self) -> bool {
        matches!(self, Verdict::WinCertified(_))
    }
    pub fn is_lose(&self) -> bool {
        matches!(self, Verdict::LoseCertified(..))
    }
}

/// Payoffs at steps 1..=run.steps.
pub fn payoff_sequence(run: &RunRecord, kind: PayoffKind) -> Result<Vec<BigRational>, PayoffError> {
    if run.rewards.is_empty() {
        return Err(PayoffError::EmptyRun);
    }
    Ok(sequence_of(&run.rewards, kind))
}

pub fn sequence_of(rewards: &[BigRational], kind: PayoffKind) -> Vec<BigRational> {
    match kind {
        PayoffKind::PointPayoff => rewards.to_vec(),
        PayoffKind::TotalPayoff => {
            let mut acc = BigRational::zero();
            rewards
                .iter()
                .map(|r| {
                    acc += r;
                    acc.clone()
                })
                .collect()
        }
        PayoffKind::MeanPayoff => {
            let mut acc = BigRational::zero();
            rewards
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    acc += r;
                    &acc / BigRational::from_integer(BigInt::from(i + 1))
                })
                .collect()
        }
    }
}

/// 1-based steps whose payoff is ≤ `bound`.
pub fn dip_events(run: &RunRecord, kind: PayoffKind, bound: &BigRational) -> Vec<u64> {
    if run.rewards.is_empty() {
        return Vec::new();
    }
    sequence_of(&run.rewards, kind)
        .iter()
        .enumerate()
        .filter(|(_, v)| *v <= bound)
        .map(|(i, _)| i as u64 + 1)
        .collect()
}

fn dip_stats(run: &RunRecord, kind: PayoffKind, threshold: &BigRational) -> DipStats {
    if run.rewards.is_empty() {
        return DipStats::default();
    }
    let seq = sequence_of(&run.rewards, kind);
    let mut stats = DipStats::default();
    let mut min: Option<&BigRational> = None;
    for (i, v) in seq.iter().enumerate() {
        if min.is_none_or(|m| v < m) {
            min = Some(v);
        }
        if v < threshold {
            stats.dips += 1;
            stats.last_dip = Some(i as u64 + 1);
        }
    }
    stats.window_min = min.map(|m| m.to_string());
    stats
}

/// Lose if the run entered the losing sink; otherwise undetermined with dip
/// statistics. Wins are only issued by construction adapters.
pub fn horizon_verdict(run: &RunRecord, kind: PayoffKind, threshold: &BigRational) -> Verdict {
    if let Some(step) = run.sink_step() {
        return Verdict::LoseCertified(Certificate::Sink, step);
    }
    Verdict::Undetermined(dip_stats(run, kind, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::StateRef;
    use crate::mdp::int;

    fn run_with(rewards: &[BigRational]) -> RunRecord {
        let mut r = RunRecord::new(StateRef::atom("x"));
        for w in rewards {
            r.push(StateRef::atom("x"), w.clone());
        }
        r
    }

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn sequences() {
        let r = run_with(&[int(2), int(0), int(1)]);
        assert_eq!(payoff_sequence(&r, PayoffKind::MeanPayoff).unwrap(), vec![int(2), int(1), int(1)]);
        let r = run_with(&[int(-1), int(1), int(-1), int(1)]);
        assert_eq!(payoff_sequence(&r, PayoffKind::TotalPayoff).unwrap(), vec![int(-1), int(0), int(-1), int(0)]);
        let pts = vec![q(-1, 2), q(-1, 3), q(-1, 4)];
        assert_eq!(payoff_sequence(&run_with(&pts), PayoffKind::PointPayoff).unwrap(), pts);
        assert_eq!(payoff_sequence(&run_with(&[]), PayoffKind::PointPayoff), Err(PayoffError::EmptyRun));
    }

    #[test]
    fn dips_on_mean() {
        // rewards 0, -4, 5 give means 0, -2, 1/3
        let r = run_with(&[int(0), int(-4), int(5)]);
        assert_eq!(dip_events(&r, PayoffKind::MeanPayoff, &int(-1)), vec![2]);
    }

    #[test]
    fn undetermined_counts() {
        let mut rw = vec![int(0); 10];
        rw[2] = int(-1);
        rw[8] = int(-1);
        let r = run_with(&rw);
        match horizon_verdict(&r, PayoffKind::PointPayoff, &int(0)) {
            Verdict::Undetermined(s) => {
                assert_eq!(s.dips, 2);
                assert_eq!(s.last_dip, Some(9));
            }
            v => panic!("{v:?}"),
        }
    }
}
