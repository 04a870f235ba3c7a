//! Two small hand-built families: the infinitely branching co-Büchi example
//! and the loop chain without optimal memoryless strategies.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::label::StateRef;
use crate::mdp::{int, Branch, ChoiceList, Event, EventKind, LazyMdp, MdpError, Prob, Reward, RunMonitor, SuccessorDist, Successors};

/// Controlled `s` offers `r(i)`, i ≥ 1. `r(i)` moves to `t` with probability
/// 2^-i (reward −1) and back to `s` otherwise; `t` returns to `s` with +1.
#[derive(Default)]
pub struct InfBranch;

pub fn half_power(i: u64) -> Prob {
    if i < 63 {
        Prob::ratio(1, 1u64 << i)
    } else {
        Prob::exact(BigRational::new(BigInt::one(), BigInt::one() << i))
    }
}

impl InfBranch {
    fn r_index(s: &StateRef) -> Option<u64> {
        if s.is("r") && s.arity() == 1 {
            s.int(0).filter(|&i| i >= 1).map(|i| i as u64)
        } else {
            None
        }
    }

    fn known(s: &StateRef) -> bool {
        (s.is("s") || s.is("t")) && s.arity() == 0 || Self::r_index(s).is_some()
    }
}

impl LazyMdp for InfBranch {
    fn name(&self) -> String {
        "inf-branch".into()
    }

    fn initial(&self) -> StateRef {
        StateRef::atom("s")
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        if !Self::known(s) {
            return Err(MdpError::UnknownState(s.to_string()));
        }
        Ok(if s.is("s") {
            Successors::Controlled(ChoiceList::lazy(|idx| StateRef::ints("r", &[idx as i64 + 1])))
        } else if s.is("t") {
            Successors::Random(SuccessorDist::dirac(StateRef::atom("s")))
        } else {
            let i = Self::r_index(s).expect("checked");
            let hit = half_power(i);
            let miss = Prob::exact(BigRational::one() - hit.to_rational());
            Successors::Random(SuccessorDist::finite(vec![
                Branch { target: StateRef::atom("t"), prob: hit },
                Branch { target: StateRef::atom("s"), prob: miss },
            ]))
        })
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        if !Self::known(s) {
            return Err(MdpError::UnknownState(s.to_string()));
        }
        if s.is("s") && Self::r_index(t).is_some() {
            return Ok(BigRational::zero());
        }
        if s.is("t") && t.is("s") && t.arity() == 0 {
            return Ok(int(1));
        }
        if Self::r_index(s).is_some() && t.arity() == 0 {
            if t.is("t") {
                return Ok(int(-1));
            }
            if t.is("s") {
                return Ok(BigRational::zero());
            }
        }
        Err(nat())
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(MarkT)
    }
}

struct MarkT;

impl RunMonitor for MarkT {
    fn observe(&mut self, _s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        if t.is("t") {
            out.push(Event { kind: EventKind::Marked, step });
        }
    }
}

/// `s(k)` loops with reward −1/k or moves to `s(k+1)` with reward −1.
#[derive(Default)]
pub struct Puterman;

impl Puterman {
    fn index(s: &StateRef) -> Option<i64> {
        (s.is("s") && s.arity() == 1).then(|| s.int(0)).flatten().filter(|&k| k >= 1)
    }
}

impl LazyMdp for Puterman {
    fn name(&self) -> String {
        "puterman".into()
    }

    fn initial(&self) -> StateRef {
        StateRef::ints("s", &[1])
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        let k = Self::index(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        Ok(Successors::Controlled(ChoiceList::finite(vec![s.clone(), StateRef::ints("s", &[k + 1])])))
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let k = Self::index(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        match Self::index(t) {
            Some(j) if j == k => Ok(BigRational::new(BigInt::from(-1), BigInt::from(k))),
            Some(j) if j == k + 1 => Ok(int(-1)),
            _ => Err(MdpError::NotATransition(s.to_string(), t.to_string())),
        }
    }
}

/// Exact trajectory statistics of the loop schedule "loop L_k times in s_k".
#[derive(Clone, Debug)]
pub struct LoopTrajectory {
    /// (k, steps, total) at the move out of s_k.
    pub phase_ends: Vec<(i64, BigInt, BigRational)>,
}

impl LoopTrajectory {
    /// Phases are evaluated in closed form: inside a phase the increments are
    /// constant, so the running mean is monotone between phase boundaries.
    pub fn new(loops: impl Fn(i64) -> BigInt, max_steps: &BigInt) -> Self {
        let mut steps = BigInt::zero();
        let mut total = BigRational::zero();
        let mut phase_ends = Vec::new();
        let mut k = 1i64;
        loop {
            let l = loops(k);
            let next = &steps + &l + 1;
            if &next > max_steps {
                break;
            }
            total += BigRational::new(-l.clone(), BigInt::from(k)) - BigRational::one();
            steps = next;
            phase_ends.push((k, steps.clone(), total.clone()));
            k += 1;
        }
        LoopTrajectory { phase_ends }
    }

    pub fn means(&self) -> Vec<BigRational> {
        self.phase_ends.iter().map(|(_, n, t)| t / BigRational::from_integer(n.clone())).collect()
    }

    /// Smallest running mean over the whole phase k+1 (entered after leaving
    /// s_k): by monotonicity it is attained at one of the phase endpoints.
    pub fn min_mean_in_phase(&self, idx: usize) -> Option<BigRational> {
        let m = self.means();
        let end = m.get(idx)?.clone();
        let start = if idx == 0 { end.clone() } else { m[idx - 1].clone() };
        Some(if start < end { start } else { end })
    }
}
