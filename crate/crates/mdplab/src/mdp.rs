//! Countable MDPs presented by on-demand successor generation.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, LazyLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::label::StateRef;

pub type Reward = BigRational;

/// Mass that lazily enumerated supports must reach: 1 − 2^-40.
pub const ENUM_MASS: f64 = 1.0 - 1.0 / (1u64 << 40) as f64;
/// Hard cap on the number of entries enumerated from a lazy support.
pub const ENUM_CAP: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MdpError {
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("{0} -> {1} is not a transition")]
    NotATransition(String, String),
    #[error("{0}")]
    Construction(String),
}

static ONE: LazyLock<Arc<BigRational>> = LazyLock::new(|| Arc::new(BigRational::one()));

/// A probability: always a float, optionally an exact rational as well.
#[derive(Clone, Debug)]
pub struct Prob {
    pub value: f64,
    pub exact: Option<Arc<BigRational>>,
}

impl Prob {
    pub fn one() -> Prob {
        Prob { value: 1.0, exact: Some(ONE.clone()) }
    }

    pub fn float(value: f64) -> Prob {
        Prob { value, exact: None }
    }

    pub fn exact(r: BigRational) -> Prob {
        Prob { value: rat_to_f64(&r), exact: Some(Arc::new(r)) }
    }

    pub fn ratio(num: u64, den: u64) -> Prob {
        Prob::exact(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// Exact value if known, else the float converted exactly.
    pub fn to_rational(&self) -> BigRational {
        match &self.exact {
            Some(r) => (**r).clone(),
            None => BigRational::from_float(self.value).unwrap_or_else(BigRational::zero),
        }
    }
}

pub fn rat_to_f64(r: &BigRational) -> f64 {
    match r.to_f64() {
        Some(v) if v.is_finite() => v,
        _ => {
            // ratio of huge integers: scale down by bit length first
            let nb = r.numer().bits() as i64;
            let db = r.denom().bits() as i64;
            let shift = (nb.max(db) - 60).max(0) as u64;
            let n = (r.numer() >> shift).to_f64().unwrap_or(0.0);
            let d = (r.denom() >> shift).to_f64().unwrap_or(1.0);
            if d == 0.0 {
                if n >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }
            } else {
                n / d
            }
        }
    }
}

pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn big(v: BigInt) -> BigRational {
    BigRational::from_integer(v)
}

pub type LazyFn<T> = Arc<dyn Fn(u64) -> T + Send + Sync>;

/// Finite list or lazily enumerable sequence.
#[derive(Clone)]
pub enum Support<T> {
    Finite(Vec<T>),
    Lazy(LazyFn<T>),
}

impl<T: Clone> Support<T> {
    pub fn get(&self, idx: u64) -> Option<T> {
        match self {
            Support::Finite(v) => v.get(idx as usize).cloned(),
            Support::Lazy(f) => Some(f(idx)),
        }
    }

    pub fn finite_len(&self) -> Option<usize> {
        match self {
            Support::Finite(v) => Some(v.len()),
            Support::Lazy(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub target: StateRef,
    pub prob: Prob,
}

/// Result of inverse-CDF sampling.
#[derive(Clone, Debug)]
pub struct Sampled {
    pub index: usize,
    pub target: StateRef,
    /// Residual uniform `(u − F_before)/p`, reusable as a fresh draw.
    pub residual: f64,
    /// Set when `u` fell beyond the enumerated mass of a lazy support.
    pub tail_truncated: bool,
}

#[derive(Clone)]
pub struct SuccessorDist {
    pub support: Support<Branch>,
}

impl SuccessorDist {
    pub fn finite(entries: Vec<Branch>) -> Self {
        SuccessorDist { support: Support::Finite(entries) }
    }

    pub fn lazy(f: impl Fn(u64) -> Branch + Send + Sync + 'static) -> Self {
        SuccessorDist { support: Support::Lazy(Arc::new(f)) }
    }

    pub fn dirac(t: StateRef) -> Self {
        Self::finite(vec![Branch { target: t, prob: Prob::one() }])
    }

    /// Entries up to cumulative mass `ENUM_MASS` (all entries when finite).
    pub fn enumerate(&self) -> Vec<Branch> {
        match &self.support {
            Support::Finite(v) => v.clone(),
            Support::Lazy(f) => {
                let mut out = Vec::new();
                let mut acc = 0.0;
                let mut i = 0;
                while acc < ENUM_MASS && i < ENUM_CAP {
                    let b = f(i);
                    acc += b.prob.value;
                    out.push(b);
                    i += 1;
                }
                out
            }
        }
    }

    /// Inverse-CDF sample. Mass beyond the enumerated prefix collapses onto
    /// the last enumerated entry.
    pub fn sample(&self, u: f64) -> Sampled {
        let mut acc = 0.0;
        let mut last: Option<(usize, Branch, f64)> = None;
        let mut i = 0u64;
        loop {
            let b = match self.support.get(i) {
                Some(b) => b,
                None => break,
            };
            let p = b.prob.value;
            if p > 0.0 && u < acc + p {
                let residual = ((u - acc) / p).clamp(0.0, 1.0 - f64::EPSILON);
                return Sampled { index: i as usize, target: b.target, residual, tail_truncated: false };
            }
            acc += p;
            last = Some((i as usize, b, acc));
            i += 1;
            if matches!(self.support, Support::Lazy(_)) && (acc >= ENUM_MASS || i >= ENUM_CAP) {
                break;
            }
        }
        let (index, b, _) = last.expect("distribution with no entries");
        let lazy = matches!(self.support, Support::Lazy(_));
        Sampled { index, target: b.target, residual: 0.5, tail_truncated: lazy }
    }
}

#[derive(Clone)]
pub struct ChoiceList {
    pub support: Support<StateRef>,
}

impl ChoiceList {
    pub fn finite(v: Vec<StateRef>) -> Self {
        ChoiceList { support: Support::Finite(v) }
    }

    pub fn lazy(f: impl Fn(u64) -> StateRef + Send + Sync + 'static) -> Self {
        ChoiceList { support: Support::Lazy(Arc::new(f)) }
    }

    pub fn get(&self, idx: usize) -> Option<StateRef> {
        self.support.get(idx as u64)
    }

    pub fn len(&self) -> Option<usize> {
        self.support.finite_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// Index of `t` among the choices; lazy lists are searched up to `ENUM_CAP`.
    pub fn position(&self, t: &StateRef) -> Option<usize> {
        match &self.support {
            Support::Finite(v) => v.iter().position(|x| x == t),
            Support::Lazy(f) => (0..ENUM_CAP).find(|&i| &f(i) == t).map(|i| i as usize),
        }
    }
}

#[derive(Clone)]
pub enum Successors {
    Controlled(ChoiceList),
    Random(SuccessorDist),
}

impl Successors {
    pub fn is_controlled(&self) -> bool {
        matches!(self, Successors::Controlled(_))
    }

    /// Targets of a finite structure, or the enumerated prefix of a lazy one.
    pub fn targets(&self, cap: usize) -> Vec<StateRef> {
        match self {
            Successors::Controlled(c) => match &c.support {
                Support::Finite(v) => v.clone(),
                Support::Lazy(f) => (0..cap as u64).map(|i| f(i)).collect(),
            },
            Successors::Random(d) => match &d.support {
                Support::Finite(v) => v.iter().map(|b| b.target.clone()).collect(),
                Support::Lazy(_) => d.enumerate().into_iter().take(cap).map(|b| b.target).collect(),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Successors::Controlled(c) => matches!(c.support, Support::Finite(_)),
            Successors::Random(d) => matches!(d.support, Support::Finite(_)),
        }
    }
}

/// Events flagged on runs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Entered the losing sink region.
    Sink,
    /// Started restart row `row` (1-based count of restarts).
    Restart { row: u64 },
    /// Controlled branch `chose` exceeded the observed random branch.
    Mistake { gadget: i64, observed: i64, chose: i64 },
    /// Left gadget `gadget` towards the next gadget.
    GadgetDone { gadget: i64 },
    /// Visit of a marked state (e.g. `t` in the infinitely branching family).
    Marked,
    /// Left the skip lane into a gadget.
    LaneExit { gadget: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    /// Transition index (1-based) whose target triggered the event.
    pub step: u64,
}

/// Per-run observer that flags construction-specific events.
pub trait RunMonitor: Send {
    fn observe(&mut self, s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>);
}

/// Flags only losing-sink entry.
pub struct SinkMonitor<'a, M: ?Sized> {
    mdp: &'a M,
    inside: bool,
}

impl<M: LazyMdp + ?Sized> RunMonitor for SinkMonitor<'_, M> {
    fn observe(&mut self, _s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        let sink = self.mdp.is_losing_sink(t);
        if sink && !self.inside {
            out.push(Event { kind: EventKind::Sink, step });
        }
        self.inside = sink;
    }
}

pub trait LazyMdp: Send + Sync {
    fn name(&self) -> String;
    fn initial(&self) -> StateRef;
    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError>;
    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError>;

    /// Reward of a transition already known to exist; constructions may skip
    /// the membership check.
    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        self.reward(s, t)
    }

    fn is_controlled(&self, s: &StateRef) -> Result<bool, MdpError> {
        Ok(self.successors(s)?.is_controlled())
    }

    /// States from which every continuation falsifies all three objectives.
    fn is_losing_sink(&self, _s: &StateRef) -> bool {
        false
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(SinkMonitor { mdp: self, inside: false })
    }
}

impl<M: LazyMdp + ?Sized> LazyMdp for Arc<M> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn initial(&self) -> StateRef {
        (**self).initial()
    }
    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        (**self).successors(s)
    }
    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        (**self).reward(s, t)
    }
    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        (**self).reward_unchecked(s, t)
    }
    fn is_controlled(&self, s: &StateRef) -> Result<bool, MdpError> {
        (**self).is_controlled(s)
    }
    fn is_losing_sink(&self, s: &StateRef) -> bool {
        (**self).is_losing_sink(s)
    }
    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        (**self).monitor()
    }
}

pub type SharedMdp = Arc<dyn LazyMdp>;

/// Same MDP started from another state.
pub struct Rooted<M> {
    pub inner: M,
    pub root: StateRef,
}

pub fn rooted<M: LazyMdp>(inner: M, root: StateRef) -> Rooted<M> {
    Rooted { inner, root }
}

impl<M: LazyMdp> LazyMdp for Rooted<M> {
    fn name(&self) -> String {
        format!("{}@{}", self.inner.name(), self.root)
    }
    fn initial(&self) -> StateRef {
        self.root.clone()
    }
    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        self.inner.successors(s)
    }
    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        self.inner.reward(s, t)
    }
    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        self.inner.reward_unchecked(s, t)
    }
    fn is_losing_sink(&self, s: &StateRef) -> bool {
        self.inner.is_losing_sink(s)
    }
    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        self.inner.monitor()
    }
}

pub fn successors(mdp: &dyn LazyMdp, s: &StateRef) -> Result<Successors, MdpError> {
    mdp.successors(s)
}

pub fn reward(mdp: &dyn LazyMdp, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
    mdp.reward(s, t)
}

pub fn sample_successor(dist: &SuccessorDist, u: f64) -> Sampled {
    dist.sample(u)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    NoSuccessor { state: String },
    Normalization { state: String, mass: f64 },
    NonPositive { state: String, target: String },
    RewardUndefined { state: String, target: String, error: String },
    Unknown { state: String, error: String },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub probed: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} states probed, {} violations", self.probed, self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {v:?}")?;
        }
        Ok(())
    }
}

/// Checks nonemptiness, normalization and reward definedness on `probe`.
pub fn validate_mdp<'a>(mdp: &dyn LazyMdp, probe: impl IntoIterator<Item = &'a StateRef>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for s in probe {
        if !seen.insert(s.clone()) {
            continue;
        }
        report.probed += 1;
        let succ = match mdp.successors(s) {
            Ok(x) => x,
            Err(e) => {
                report.violations.push(Violation::Unknown { state: s.to_string(), error: e.to_string() });
                continue;
            }
        };
        let targets = succ.targets(64);
        if targets.is_empty() {
            report.violations.push(Violation::NoSuccessor { state: s.to_string() });
            continue;
        }
        if let Successors::Random(d) = &succ {
            let entries = d.enumerate();
            let mut exact_sum = Some(BigRational::zero());
            let mut sum = 0.0;
            for b in &entries {
                sum += b.prob.value;
                if b.prob.value <= 0.0 {
                    report.violations.push(Violation::NonPositive { state: s.to_string(), target: b.target.to_string() });
                }
                exact_sum = match (exact_sum, &b.prob.exact) {
                    (Some(acc), Some(p)) => Some(acc + &**p),
                    _ => None,
                };
            }
            let finite = matches!(d.support, Support::Finite(_));
            let bad = match (&exact_sum, finite) {
                (Some(x), true) => !x.is_one(),
                (_, true) => (sum - 1.0).abs() > 1e-9,
                (_, false) => sum < ENUM_MASS - 1e-12 || sum > 1.0 + 1e-9,
            };
            if bad {
                report.violations.push(Violation::Normalization { state: s.to_string(), mass: sum });
            }
        }
        for t in targets {
            if let Err(e) = mdp.reward(s, &t) {
                report.violations.push(Violation::RewardUndefined {
                    state: s.to_string(),
                    target: t.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    report
}

/// Breadth-first set of states reachable within `depth` steps, capped.
pub fn reachable(mdp: &dyn LazyMdp, depth: usize, cap: usize) -> Result<Vec<StateRef>, MdpError> {
    let mut seen = HashSet::new();
    let mut order = vec![mdp.initial()];
    seen.insert(mdp.initial());
    let mut frontier = order.clone();
    for _ in 0..depth {
        let mut next = Vec::new();
        for s in &frontier {
            for t in mdp.successors(s)?.targets(16) {
                if seen.len() >= cap {
                    return Ok(order);
                }
                if seen.insert(t.clone()) {
                    order.push(t.clone());
                    next.push(t);
                }
            }
        }
        frontier = next;
    }
    Ok(order)
}
