//! Unit-reward, degree-2 versions of the chain and reward-implicit families.
//!
//! Fan-outs over k(n)+1 branches become complete binary trees of depth
//! D = ⌈log2(k(n)+1)⌉ with all leaves at depth D. Rewards of size R become
//! paths of unit edges. In the chain family every reward edge of gadget n is
//! stretched to K = k(n)·m_n edges, and the lane column of gadget n is padded
//! to the same length 2D + 2K, so all paths to a state still share a length.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, Zero};

use crate::label::StateRef;
use crate::mdp::{int, Branch, ChoiceList, Event, EventKind, LazyMdp, MdpError, Prob, Reward, RunMonitor, SuccessorDist, Successors};
use crate::schedule::ParamSchedule;

use super::ri::RewardImplicit;
use super::ConstructionError;

/// Depth of the binary tree over `leaves` leaves.
pub fn tree_depth(leaves: u32) -> u32 {
    let mut d = 0;
    while (1u64 << d) < leaves as u64 {
        d += 1;
    }
    d.max(1)
}

/// Leaf range `[lo, hi]` below tree node (d, p), clipped to `0..=k`.
fn leaf_range(depth: u32, d: u32, p: i64, k: i64) -> Option<(i64, i64)> {
    let width = 1i64 << (depth - d);
    let lo = p * width;
    (lo <= k).then(|| (lo, (lo + width - 1).min(k)))
}

fn mass(probs: &[Prob], lo: i64, hi: i64, exact: bool) -> Prob {
    if exact {
        let mut acc = BigRational::zero();
        for p in &probs[lo as usize..=hi as usize] {
            acc += p.to_rational();
        }
        Prob::exact(acc)
    } else {
        Prob::float(probs[lo as usize..=hi as usize].iter().map(|p| p.value).sum())
    }
}

fn ratio(a: &Prob, b: &Prob, exact: bool) -> Prob {
    if exact {
        Prob::exact(a.to_rational() / b.to_rational())
    } else {
        Prob::float(a.value / b.value)
    }
}

/// Children (d+1, 2p) and (d+1, 2p+1) of a tree node that still cover leaves.
fn children(depth: u32, d: u32, p: i64, k: i64) -> Vec<i64> {
    [2 * p, 2 * p + 1].into_iter().filter(|&c| leaf_range(depth, d + 1, c, k).is_some()).collect()
}

/// Random split at tree node (d, p) weighted by the leaf masses.
fn random_split(depth: u32, d: u32, p: i64, probs: &[Prob], exact: bool) -> Vec<(i64, Prob)> {
    let k = probs.len() as i64 - 1;
    let (lo, hi) = leaf_range(depth, d, p, k).expect("node covers leaves");
    let total = mass(probs, lo, hi, exact);
    let kids = children(depth, d, p, k);
    if total.value <= 0.0 {
        return vec![(kids[0], Prob::one())];
    }
    kids.into_iter()
        .filter_map(|c| {
            let (a, b) = leaf_range(depth, d + 1, c, k)?;
            let m = mass(probs, a, b, exact);
            (m.value > 0.0).then(|| (c, ratio(&m, &total, exact)))
        })
        .collect()
}

fn big(v: i64) -> BigInt {
    BigInt::from(v)
}

fn small(x: &BigInt) -> Option<i64> {
    i64::try_from(x).ok()
}

/// Exact per-gadget outcome law: (observed branch, net gadget reward, ⊥) → probability.
pub type OutcomeLaw = BTreeMap<(i64, BigInt, bool), BigRational>;

/// Enumerates all paths of a gadget from `start` under a controller that
/// steers towards branch `j`, until `end(state)` holds.
pub fn enumerate_gadget(
    mdp: &dyn LazyMdp,
    start: &StateRef,
    steer: &dyn Fn(&StateRef, &[StateRef]) -> usize,
    observe: &dyn Fn(&StateRef) -> Option<i64>,
    end: &dyn Fn(&StateRef) -> Option<bool>,
) -> Result<OutcomeLaw, MdpError> {
    let mut law = OutcomeLaw::new();
    // (state, prob, reward, observed)
    let mut stack = vec![(start.clone(), BigRational::one(), BigInt::zero(), None::<i64>)];
    while let Some((s, p, r, obs)) = stack.pop() {
        // walk deterministic stretches without pushing
        let (mut s, mut r, mut obs) = (s, r, obs);
        loop {
            if s != *start {
                if let Some(bot) = end(&s) {
                    let key = (obs.unwrap_or(-1), r.clone(), bot);
                    *law.entry(key).or_insert_with(BigRational::zero) += &p;
                    break;
                }
            }
            let succ = mdp.successors(&s)?;
            let next: Vec<(StateRef, BigRational)> = match &succ {
                Successors::Controlled(_) => {
                    let opts = succ.targets(64);
                    vec![(opts[steer(&s, &opts)].clone(), BigRational::one())]
                }
                Successors::Random(d) => d.enumerate().into_iter().map(|b| (b.target, b.prob.to_rational())).collect(),
            };
            if next.len() == 1 {
                let (t, _) = next.into_iter().next().expect("one successor");
                r += mdp.reward(&s, &t)?.to_integer();
                obs = obs.or_else(|| observe(&t));
                s = t;
                continue;
            }
            for (t, q) in next {
                let rr = &r + mdp.reward(&s, &t)?.to_integer();
                let o = obs.or_else(|| observe(&t));
                stack.push((t, &p * q, rr, o));
            }
            break;
        }
    }
    Ok(law)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum BcPos {
    Start,
    /// Random tree node; d = 0 is `s(n)`, d = D is the leaf `a(n,p)`.
    Ts { n: i64, d: u32, p: i64 },
    U { n: i64, i: i64, t: BigInt },
    /// Controlled tree node; d = 0 is `c(n)`, d = D is the leaf `b(n,p)`.
    Tc { n: i64, d: u32, p: i64 },
    V { n: i64, j: i64, t: BigInt },
    W { n: i64, h: BigInt },
    Z { n: i64, t: i64 },
    Bot,
}

/// Binarized gadget chain.
pub struct BinChain {
    pub schedule: Arc<ParamSchedule>,
    pub exact: bool,
}

impl BinChain {
    pub fn new(schedule: Arc<ParamSchedule>, exact: bool) -> Result<Self, ConstructionError> {
        let b = BinChain { schedule, exact };
        let ns = b.schedule.nstar;
        for n in ns..ns + 64 {
            if b.exit_height(n).is_negative() {
                return Err(ConstructionError::Binarize(format!("lane column of gadget {n} too short for its refund")));
            }
        }
        Ok(b)
    }

    fn k(&self, n: i64) -> i64 {
        self.schedule.k(n).expect("k") as i64
    }

    fn depth(&self, n: i64) -> u32 {
        tree_depth(self.k(n) as u32 + 1)
    }

    fn m(&self, n: i64) -> BigInt {
        self.schedule.m_chain(n).expect("gadget index")
    }

    /// Number of unit edges replacing one reward edge of gadget n.
    pub fn stretch(&self, n: i64) -> BigInt {
        big(self.k(n)) * self.m(n)
    }

    /// Length of gadget n (and of its lane column).
    pub fn gadget_len(&self, n: i64) -> BigInt {
        big(2 * self.depth(n) as i64) + 2 * self.stretch(n)
    }

    fn refund(&self, n: i64) -> i64 {
        n - self.schedule.nstar
    }

    fn exit_height(&self, n: i64) -> BigInt {
        self.gadget_len(n) - 1 - self.refund(n)
    }

    fn label(&self, p: &BcPos) -> StateRef {
        match p {
            BcPos::Start => StateRef::atom("start"),
            BcPos::Ts { n, d: 0, .. } => StateRef::ints("s", &[*n]),
            BcPos::Ts { n, d, p } if *d == self.depth(*n) => StateRef::ints("a", &[*n, *p]),
            BcPos::Ts { n, d, p } => StateRef::ints("ts", &[*n, *d as i64, *p]),
            BcPos::U { n, i, t } => StateRef::big("u", &[big(*n), big(*i), t.clone()]),
            BcPos::Tc { n, d: 0, .. } => StateRef::ints("c", &[*n]),
            BcPos::Tc { n, d, p } if *d == self.depth(*n) => StateRef::ints("b", &[*n, *p]),
            BcPos::Tc { n, d, p } => StateRef::ints("tc", &[*n, *d as i64, *p]),
            BcPos::V { n, j, t } => StateRef::big("v", &[big(*n), big(*j), t.clone()]),
            BcPos::W { n, h } => StateRef::big("w", &[big(*n), h.clone()]),
            BcPos::Z { n, t } => StateRef::ints("z", &[*n, *t]),
            BcPos::Bot => StateRef::atom("bot"),
        }
    }

    fn parse(&self, s: &StateRef) -> Option<BcPos> {
        let a = s.bigints()?;
        let ns = self.schedule.nstar;
        let n = a.first().and_then(small);
        if let Some(n) = n {
            if n < ns {
                return None;
            }
        }
        let kk = |n: i64| self.k(n);
        let dd = |n: i64| self.depth(n);
        let p = match (s.name()?, a.len()) {
            ("start", 0) => BcPos::Start,
            ("bot", 0) => BcPos::Bot,
            ("s", 1) => BcPos::Ts { n: n?, d: 0, p: 0 },
            ("c", 1) => BcPos::Tc { n: n?, d: 0, p: 0 },
            ("a", 2) | ("b", 2) | ("ts", 3) | ("tc", 3) => {
                let n = n?;
                let (d, p) = if a.len() == 2 { (dd(n), small(&a[1])?) } else { (u32::try_from(small(&a[1])?).ok()?, small(&a[2])?) };
                if a.len() == 3 && (d == 0 || d >= dd(n)) {
                    return None;
                }
                leaf_range(dd(n), d, p, kk(n)).filter(|_| p >= 0)?;
                if s.is("a") || s.is("ts") {
                    BcPos::Ts { n, d, p }
                } else {
                    BcPos::Tc { n, d, p }
                }
            }
            ("u", 3) | ("v", 3) => {
                let n = n?;
                let i = small(&a[1])?;
                let t = a[2].clone();
                if !(0..=kk(n)).contains(&i) || t < BigInt::one() || t >= self.stretch(n) {
                    return None;
                }
                if s.is("u") {
                    BcPos::U { n, i, t }
                } else {
                    BcPos::V { n, j: i, t }
                }
            }
            ("w", 2) => {
                let n = n?;
                let h = a[1].clone();
                if h.is_negative() || h >= self.gadget_len(n) {
                    return None;
                }
                BcPos::W { n, h }
            }
            ("z", 2) => {
                let n = n?;
                let t = small(&a[1])?;
                if !(1..=self.refund(n)).contains(&t) {
                    return None;
                }
                BcPos::Z { n, t }
            }
            _ => return None,
        };
        Some(p)
    }

    /// Successor of a unit-edge stretch entered from `from`: edge index `idx`.
    fn stretch_target(&self, n: i64, idx: BigInt, up: bool, i: i64) -> BcPos {
        if idx == self.stretch(n) {
            if up {
                BcPos::Tc { n, d: 0, p: 0 }
            } else {
                BcPos::Ts { n: n + 1, d: 0, p: 0 }
            }
        } else if up {
            BcPos::U { n, i, t: idx }
        } else {
            BcPos::V { n, j: i, t: idx }
        }
    }

    fn lane_exit(&self, n: i64) -> BcPos {
        if self.refund(n) == 0 {
            BcPos::Ts { n: n + 1, d: 0, p: 0 }
        } else {
            BcPos::Z { n, t: 1 }
        }
    }

    fn succ(&self, p: &BcPos) -> Successors {
        let l = |q: BcPos| self.label(&q);
        let ns = self.schedule.nstar;
        let dirac = |q: BcPos| Successors::Random(SuccessorDist::dirac(self.label(&q)));
        match p.clone() {
            BcPos::Start => Successors::Controlled(ChoiceList::finite(vec![
                l(BcPos::Ts { n: ns, d: 0, p: 0 }),
                l(BcPos::W { n: ns, h: BigInt::zero() }),
            ])),
            BcPos::Ts { n, d, p } if d == self.depth(n) => dirac(self.stretch_target(n, BigInt::one(), true, p)),
            BcPos::Ts { n, d, p } => {
                let k = self.k(n);
                let probs: Vec<Prob> =
                    (0..=k).map(|i| self.schedule.delta(i as u32, n, self.exact).expect("branch")).collect();
                let depth = self.depth(n);
                Successors::Random(SuccessorDist::finite(
                    random_split(depth, d, p, &probs, self.exact)
                        .into_iter()
                        .map(|(c, prob)| Branch { target: l(BcPos::Ts { n, d: d + 1, p: c }), prob })
                        .collect(),
                ))
            }
            BcPos::U { n, i, t } => dirac(self.stretch_target(n, t + 1, true, i)),
            BcPos::Tc { n, d, p } if d == self.depth(n) => {
                let eps = self.schedule.epsilon(p as u32, n, self.exact).expect("branch");
                let next = l(self.stretch_target(n, BigInt::one(), false, p));
                if eps.value == 0.0 {
                    return Successors::Random(SuccessorDist::dirac(next));
                }
                let keep = if self.exact && eps.exact.is_some() {
                    Prob::exact(BigRational::one() - eps.to_rational())
                } else {
                    Prob::float(1.0 - eps.value)
                };
                Successors::Random(SuccessorDist::finite(vec![
                    Branch { target: next, prob: keep },
                    Branch { target: l(BcPos::Bot), prob: eps },
                ]))
            }
            BcPos::Tc { n, d, p } => Successors::Controlled(ChoiceList::finite(
                children(self.depth(n), d, p, self.k(n)).into_iter().map(|c| l(BcPos::Tc { n, d: d + 1, p: c })).collect(),
            )),
            BcPos::V { n, j, t } => dirac(self.stretch_target(n, t + 1, false, j)),
            BcPos::W { n, h } => {
                let top = self.gadget_len(n) - 1;
                let cont = if h == top { BcPos::W { n: n + 1, h: BigInt::zero() } } else { BcPos::W { n, h: &h + 1 } };
                if h == self.exit_height(n) {
                    Successors::Controlled(ChoiceList::finite(vec![l(cont), l(self.lane_exit(n))]))
                } else {
                    dirac(cont)
                }
            }
            BcPos::Z { n, t } => {
                if t == self.refund(n) {
                    dirac(BcPos::Ts { n: n + 1, d: 0, p: 0 })
                } else {
                    dirac(BcPos::Z { n, t: t + 1 })
                }
            }
            BcPos::Bot => dirac(BcPos::Bot),
        }
    }

    fn edge_reward(&self, p: &BcPos, q: &BcPos) -> Option<Reward> {
        let unit_signed = |n: i64, i: i64, idx: BigInt, sign: i64| {
            if idx <= big(i) * self.m(n) && i > 0 {
                Some(int(sign))
            } else {
                Some(BigRational::zero())
            }
        };
        match (p, q) {
            // stretch edges: reward ±1 for the first i·m_n edges
            (BcPos::Ts { n, d, p: i }, _) if *d == self.depth(*n) => unit_signed(*n, *i, BigInt::one(), 1),
            (BcPos::U { n, i, t }, _) => unit_signed(*n, *i, t + 1, 1),
            (BcPos::Tc { n, d, p: j }, BcPos::V { .. } | BcPos::Ts { .. }) if *d == self.depth(*n) => {
                unit_signed(*n, *j, BigInt::one(), -1)
            }
            (BcPos::Tc { .. }, BcPos::Bot) => Some(BigRational::zero()),
            (BcPos::V { n, j, t }, _) => unit_signed(*n, *j, t + 1, -1),
            (BcPos::W { .. }, BcPos::W { h, .. }) if h.is_zero() => Some(int(-1)),
            (BcPos::W { n, .. }, BcPos::Z { .. }) => Some(int(if self.refund(*n) > 0 { 1 } else { 0 })),
            (BcPos::Z { .. }, BcPos::Z { .. }) => Some(int(1)),
            (BcPos::Bot, BcPos::Bot) => Some(int(-1)),
            _ => Some(BigRational::zero()),
        }
    }

    /// Outcome law of gadget n when the controller plays branch `j`.
    pub fn gadget_law(&self, n: i64, j: i64) -> Result<OutcomeLaw, MdpError> {
        let depth = self.depth(n);
        let start = self.label(&BcPos::Ts { n, d: 0, p: 0 });
        let steer = |s: &StateRef, opts: &[StateRef]| match self.parse(s) {
            Some(BcPos::Tc { d, .. }) => opts
                .iter()
                .position(|o| matches!(self.parse(o), Some(BcPos::Tc { p, .. }) if j >> (depth - d - 1) == p))
                .unwrap_or(0),
            _ => 0,
        };
        let observe = |t: &StateRef| match self.parse(t) {
            Some(BcPos::Ts { d, p, .. }) if d == depth => Some(p),
            _ => None,
        };
        let end = |t: &StateRef| match self.parse(t) {
            Some(BcPos::Bot) => Some(true),
            Some(BcPos::Ts { n: m, d: 0, .. }) if m == n + 1 => Some(false),
            _ => None,
        };
        enumerate_gadget(self, &start, &steer, &observe, &end)
    }
}

impl LazyMdp for BinChain {
    fn name(&self) -> String {
        format!("binarized:chain[{}]", self.schedule.name())
    }

    fn initial(&self) -> StateRef {
        self.label(&BcPos::Start)
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        let p = self.parse(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        Ok(self.succ(&p))
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        let p = self.parse(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        let q = self.parse(t).ok_or_else(nat)?;
        if !self.succ(&p).targets(usize::MAX).contains(t) {
            return Err(nat());
        }
        self.edge_reward(&p, &q).ok_or_else(nat)
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        s.is("bot")
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(BinMonitor { observed: None, chain: true })
    }
}

/// Shared monitor: branch leaves are `a(n,i)` / `p(n,i,1,0)` and controlled
/// leaves `b(n,j)` / `dn(n,j,0)`.
struct BinMonitor {
    observed: Option<(i64, i64)>,
    chain: bool,
}

impl RunMonitor for BinMonitor {
    fn observe(&mut self, s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        let name = match t.name() {
            Some(x) => x,
            None => return,
        };
        let kind = match name {
            "a" if self.chain => {
                self.observed = Some((t.int(0).unwrap_or(-1), t.int(1).unwrap_or(-1)));
                return;
            }
            "p" if !self.chain && t.int(2) == Some(1) && !s.is("p") => {
                self.observed = Some((t.int(0).unwrap_or(-1), t.int(1).unwrap_or(-1)));
                return;
            }
            "b" if self.chain => (t.int(0), t.int(1)),
            "dn" if !self.chain && t.int(2) == Some(0) => (t.int(0), t.int(1)),
            "bot" if !s.is("bot") => {
                out.push(Event { kind: EventKind::Sink, step });
                return;
            }
            "s" => {
                let n = t.int(0).unwrap_or(0);
                let kind = if s.is("w") || s.is("z") || s.is("start") {
                    EventKind::LaneExit { gadget: n }
                } else {
                    EventKind::GadgetDone { gadget: n - 1 }
                };
                out.push(Event { kind, step });
                return;
            }
            _ => return,
        };
        if let (Some(n), Some(j), Some((m, i))) = (kind.0, kind.1, self.observed) {
            if m == n && j > i {
                out.push(Event { kind: EventKind::Mistake { gadget: n, observed: i, chose: j }, step });
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum BrPos {
    W { n: i64, r: BigInt },
    Z { n: i64, r: BigInt },
    Ts { n: i64, d: u32, p: i64 },
    P { n: i64, i: i64, t: BigInt },
    Tc { n: i64, d: u32, p: i64 },
    Dn { n: i64, j: i64, r: BigInt },
    Q { n: i64, j: i64 },
    Up { n: i64, j: i64, fail: bool, r: BigInt },
    Bot { r: BigInt },
}

/// Binarized reward-implicit chain; labels still end in the accumulated reward.
pub struct BinRi {
    pub base: RewardImplicit,
}

impl BinRi {
    pub fn new(schedule: Arc<ParamSchedule>, exact: bool) -> Self {
        BinRi { base: RewardImplicit::new(schedule, false, exact) }
    }

    fn k(&self, n: i64) -> i64 {
        self.base.schedule.k(n).expect("k") as i64
    }

    fn depth(&self, n: i64) -> u32 {
        tree_depth(self.k(n) as u32 + 1)
    }

    fn unit(&self, n: i64, j: i64) -> BigInt {
        Pow::pow(&self.base.schedule.m_ri(n).expect("gadget index"), j as u32)
    }

    fn label(&self, p: &BrPos) -> StateRef {
        let z = BigInt::zero();
        match p {
            BrPos::W { n, r } => StateRef::big("w", &[big(*n), r.clone()]),
            BrPos::Z { n, r } => StateRef::big("z", &[big(*n), r.clone()]),
            BrPos::Ts { n, d: 0, .. } => StateRef::ints("s", &[*n, 0]),
            BrPos::Ts { n, d, p } if *d == self.depth(*n) => StateRef::big("p", &[big(*n), big(*p), BigInt::one(), z]),
            BrPos::Ts { n, d, p } => StateRef::ints("ts", &[*n, *d as i64, *p, 0]),
            BrPos::P { n, i, t } => StateRef::big("p", &[big(*n), big(*i), t.clone(), z]),
            BrPos::Tc { n, d: 0, .. } => StateRef::ints("c", &[*n, 0]),
            BrPos::Tc { n, d, p } if *d == self.depth(*n) => StateRef::ints("dn", &[*n, *p, 0]),
            BrPos::Tc { n, d, p } => StateRef::ints("tc", &[*n, *d as i64, *p, 0]),
            BrPos::Dn { n, j, r } => StateRef::big("dn", &[big(*n), big(*j), r.clone()]),
            BrPos::Q { n, j } => StateRef::big("q", &[big(*n), big(*j), -self.unit(*n, *j)]),
            BrPos::Up { n, j, fail, r } => StateRef::big("up", &[big(*n), big(*j), big(*fail as i64), r.clone()]),
            BrPos::Bot { r } => StateRef::big("bot", &[r.clone()]),
        }
    }

    fn parse(&self, s: &StateRef) -> Option<BrPos> {
        let a = s.bigints()?;
        let ns = self.base.schedule.nstar;
        let n = a.first().and_then(small);
        if s.is("bot") {
            return (a.len() == 1 && !a[0].is_positive()).then(|| BrPos::Bot { r: a[0].clone() });
        }
        let n = n.filter(|&n| n >= ns)?;
        let k = self.k(n);
        let depth = self.depth(n);
        let last_zero = a.last().is_some_and(|x| x.is_zero());
        let p = match (s.name()?, a.len()) {
            ("w", 2) if !a[1].is_positive() => BrPos::W { n, r: a[1].clone() },
            ("z", 2) if a[1].is_negative() => BrPos::Z { n, r: a[1].clone() },
            ("s", 2) if last_zero => BrPos::Ts { n, d: 0, p: 0 },
            ("c", 2) if last_zero => BrPos::Tc { n, d: 0, p: 0 },
            ("ts", 4) | ("tc", 4) if last_zero => {
                let d = u32::try_from(small(&a[1])?).ok()?;
                let p = small(&a[2])?;
                if d == 0 || d >= depth || p < 0 {
                    return None;
                }
                leaf_range(depth, d, p, k)?;
                if s.is("ts") {
                    BrPos::Ts { n, d, p }
                } else {
                    BrPos::Tc { n, d, p }
                }
            }
            ("p", 4) if last_zero => {
                let i = small(&a[1])?;
                let t = a[2].clone();
                if !(0..=k).contains(&i) || t < BigInt::one() || t > self.base.padding(n, i) {
                    return None;
                }
                if t.is_one() {
                    BrPos::Ts { n, d: depth, p: i }
                } else {
                    BrPos::P { n, i, t }
                }
            }
            ("dn", 3) => {
                let j = small(&a[1])?;
                let r = a[2].clone();
                if !(0..=k).contains(&j) || r.is_positive() || -&r >= self.unit(n, j) {
                    return None;
                }
                if r.is_zero() {
                    BrPos::Tc { n, d: depth, p: j }
                } else {
                    BrPos::Dn { n, j, r }
                }
            }
            ("q", 3) => {
                let j = small(&a[1])?;
                if !(0..=k).contains(&j) || a[2] != -self.unit(n, j) {
                    return None;
                }
                BrPos::Q { n, j }
            }
            ("up", 4) => {
                let j = small(&a[1])?;
                let f = small(&a[2])?;
                let r = a[3].clone();
                if !(0..=k).contains(&j) || !(0..=1).contains(&f) || !r.is_negative() || -&r >= self.unit(n, j) {
                    return None;
                }
                BrPos::Up { n, j, fail: f == 1, r }
            }
            _ => return None,
        };
        Some(p)
    }

    fn succ(&self, p: &BrPos) -> Successors {
        let l = |q: BrPos| self.label(&q);
        let dirac = |q: BrPos| Successors::Random(SuccessorDist::dirac(self.label(&q)));
        let exact = self.base.exact;
        match p.clone() {
            BrPos::W { n, r } => {
                let exit = if r.is_zero() || (&r + 1u32).is_zero() {
                    BrPos::Ts { n, d: 0, p: 0 }
                } else {
                    BrPos::Z { n, r: &r + 1 }
                };
                Successors::Controlled(ChoiceList::finite(vec![l(exit), l(BrPos::W { n: n + 1, r: r - 1 })]))
            }
            BrPos::Z { n, r } => {
                if (&r + 1u32).is_zero() {
                    dirac(BrPos::Ts { n, d: 0, p: 0 })
                } else {
                    dirac(BrPos::Z { n, r: r + 1 })
                }
            }
            BrPos::Ts { n, d, p } if d == self.depth(n) => dirac(self.after_padding(n, p, BigInt::one())),
            BrPos::Ts { n, d, p } => {
                let probs: Vec<Prob> =
                    (0..=self.k(n)).map(|i| self.base.schedule.delta(i as u32, n, exact).expect("branch")).collect();
                Successors::Random(SuccessorDist::finite(
                    random_split(self.depth(n), d, p, &probs, exact)
                        .into_iter()
                        .map(|(c, prob)| Branch { target: l(BrPos::Ts { n, d: d + 1, p: c }), prob })
                        .collect(),
                ))
            }
            BrPos::P { n, i, t } => dirac(self.after_padding(n, i, t)),
            BrPos::Tc { n, d, p } if d == self.depth(n) => dirac(self.down(n, p, BigInt::zero())),
            BrPos::Tc { n, d, p } => Successors::Controlled(ChoiceList::finite(
                children(self.depth(n), d, p, self.k(n)).into_iter().map(|c| l(BrPos::Tc { n, d: d + 1, p: c })).collect(),
            )),
            BrPos::Dn { n, j, r } => dirac(self.down(n, j, r)),
            BrPos::Q { n, j } => {
                let eps = self.base.schedule.epsilon(j as u32, n, exact).expect("branch");
                let r = -self.unit(n, j);
                let ok = l(self.up(n, j, false, r.clone()));
                if eps.value == 0.0 {
                    return Successors::Random(SuccessorDist::dirac(ok));
                }
                let keep = if exact && eps.exact.is_some() {
                    Prob::exact(BigRational::one() - eps.to_rational())
                } else {
                    Prob::float(1.0 - eps.value)
                };
                Successors::Random(SuccessorDist::finite(vec![
                    Branch { target: ok, prob: keep },
                    Branch { target: l(self.up(n, j, true, r)), prob: eps },
                ]))
            }
            BrPos::Up { n, j, fail, r } => dirac(self.up(n, j, fail, r)),
            BrPos::Bot { r } => dirac(BrPos::Bot { r: r - 1 }),
        }
    }

    /// Successor of padding position t of branch i.
    fn after_padding(&self, n: i64, i: i64, t: BigInt) -> BrPos {
        if t == self.base.padding(n, i) {
            BrPos::Tc { n, d: 0, p: 0 }
        } else {
            BrPos::P { n, i, t: t + 1 }
        }
    }

    /// Next state on the descending path from reward level `r`.
    fn down(&self, n: i64, j: i64, r: BigInt) -> BrPos {
        let r: BigInt = r - 1;
        if r == -self.unit(n, j) {
            BrPos::Q { n, j }
        } else {
            BrPos::Dn { n, j, r }
        }
    }

    /// Next state on the ascending path from reward level `r`.
    fn up(&self, n: i64, j: i64, fail: bool, r: BigInt) -> BrPos {
        let r: BigInt = r + 1;
        if r.is_zero() {
            if fail {
                BrPos::Bot { r }
            } else {
                BrPos::Ts { n: n + 1, d: 0, p: 0 }
            }
        } else {
            BrPos::Up { n, j, fail, r }
        }
    }

    fn edge_reward(&self, p: &BrPos, q: &BrPos) -> Reward {
        match (p, q) {
            (BrPos::W { .. }, BrPos::W { .. }) => int(-1),
            (BrPos::W { r, .. } | BrPos::Z { r, .. }, BrPos::Z { .. } | BrPos::Ts { .. }) if !r.is_zero() => int(1),
            (BrPos::Tc { .. } | BrPos::Dn { .. }, BrPos::Dn { .. } | BrPos::Q { .. }) => int(-1),
            (BrPos::Q { .. } | BrPos::Up { .. }, _) => int(1),
            (BrPos::Bot { .. }, _) => int(-1),
            _ => BigRational::zero(),
        }
    }

    /// Outcome law of gadget n when the controller plays branch `j`.
    pub fn gadget_law(&self, n: i64, j: i64) -> Result<OutcomeLaw, MdpError> {
        let depth = self.depth(n);
        let start = self.label(&BrPos::Ts { n, d: 0, p: 0 });
        let steer = |s: &StateRef, opts: &[StateRef]| match self.parse(s) {
            Some(BrPos::Tc { d, .. }) => opts
                .iter()
                .position(|o| matches!(self.parse(o), Some(BrPos::Tc { p, .. }) if j >> (depth - d - 1) == p))
                .unwrap_or(0),
            _ => 0,
        };
        let observe = |t: &StateRef| match self.parse(t) {
            Some(BrPos::Ts { d, p, .. }) if d == depth => Some(p),
            _ => None,
        };
        let end = |t: &StateRef| match self.parse(t) {
            Some(BrPos::Bot { .. }) => Some(true),
            Some(BrPos::Ts { n: m, d: 0, .. }) if m == n + 1 => Some(false),
            _ => None,
        };
        enumerate_gadget(self, &start, &steer, &observe, &end)
    }
}

impl LazyMdp for BinRi {
    fn name(&self) -> String {
        format!("binarized:reward-implicit[{}]", self.base.schedule.name())
    }

    fn initial(&self) -> StateRef {
        self.label(&BrPos::W { n: self.base.schedule.nstar, r: BigInt::zero() })
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        let p = self.parse(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        Ok(self.succ(&p))
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        let p = self.parse(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        let q = self.parse(t).ok_or_else(nat)?;
        if !self.succ(&p).targets(usize::MAX).contains(t) {
            return Err(nat());
        }
        Ok(self.edge_reward(&p, &q))
    }

    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        let p = self.parse(s).ok_or_else(nat)?;
        let q = self.parse(t).ok_or_else(nat)?;
        Ok(self.edge_reward(&p, &q))
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        s.is("bot")
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(BinMonitor { observed: None, chain: false })
    }
}

/// Outcome law of gadget n of the unbinarized chain under controlled branch `j`.
pub fn chain_gadget_law(fam: &super::chain::ChainFamily, n: i64, j: i64) -> Result<OutcomeLaw, MdpError> {
    use super::chain::Pos;
    let start = fam.label(Pos::S { row: 0, e: fam.nstar(), n });
    let steer = |_: &StateRef, opts: &[StateRef]| {
        opts.iter().position(|o| matches!(fam.parse(o), Some(Pos::B { j: jj, .. }) if jj == j)).unwrap_or(0)
    };
    let observe = |t: &StateRef| match fam.parse(t) {
        Some(Pos::A { i, .. }) => Some(i),
        _ => None,
    };
    let end = |t: &StateRef| match fam.parse(t) {
        Some(Pos::Bot) => Some(true),
        Some(Pos::S { n: m, .. }) if m == n + 1 => Some(false),
        _ => None,
    };
    enumerate_gadget(fam, &start, &steer, &observe, &end)
}

/// Outcome law of gadget n of the unbinarized reward-implicit chain.
pub fn ri_gadget_law(fam: &RewardImplicit, n: i64, j: i64) -> Result<OutcomeLaw, MdpError> {
    use super::ri::RiPos;
    let start = fam.label(&RiPos::S { row: 0, n });
    let steer = |_: &StateRef, opts: &[StateRef]| {
        opts.iter().position(|o| matches!(fam.parse(o), Some(RiPos::Q { j: jj, .. }) if jj == j)).unwrap_or(0)
    };
    let observe = |t: &StateRef| match fam.parse(t) {
        Some(RiPos::P { i, t, .. }) if t.is_one() => Some(i),
        _ => None,
    };
    let end = |t: &StateRef| match fam.parse(t) {
        Some(RiPos::Bot { .. }) => Some(true),
        Some(RiPos::S { n: m, .. }) if m == n + 1 => Some(false),
        _ => None,
    };
    enumerate_gadget(fam, &start, &steer, &observe, &end)
}
