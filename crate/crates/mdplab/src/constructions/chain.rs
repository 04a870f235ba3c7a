//! Chain of gadgets with a skip lane, and its restart variant.
//!
//! Gadget n (4 steps): `s(n)` random → `a(n,i)` w.p. δ_i; `a(n,i)` → `c(n)`
//! with reward +i·m_n; `c(n)` controlled → `b(n,j)`; `b(n,j)` → `s(n+1)`
//! w.p. 1−ε_j with reward −j·m_n, else ⊥. The lane column `w(n,0..3)` runs
//! parallel to gadget n; `w(n,3)` either enters `s(n+1)` (refunding the lane
//! penalties) or moves to `w(n+1,0)` with reward −1.
//!
//! In the restart variant every label carries the row and the row's entry
//! gadget, ⊥ exits become restart paths `r → d → d → x` with penalty −m_{n+2},
//! and `x(row, n)` is the controlled entry of a row with refund +m_n.

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::label::StateRef;
use crate::mdp::{big, int, Branch, ChoiceList, Event, EventKind, LazyMdp, MdpError, Prob, Reward, RunMonitor, SuccessorDist, Successors};
use crate::schedule::ParamSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pos {
    /// Initial state (chain); in restart mode the row-0 entry `x(0, N*)`.
    Start,
    /// Row entry of restart row `row` at gadget `n`.
    Entry { row: i64, n: i64 },
    S { row: i64, e: i64, n: i64 },
    A { row: i64, e: i64, n: i64, i: i64 },
    C { row: i64, e: i64, n: i64 },
    B { row: i64, e: i64, n: i64, j: i64 },
    W { row: i64, e: i64, n: i64, h: i64 },
    /// Restart state entered from gadget n, starting row `row`.
    R { row: i64, n: i64 },
    /// Dummy t ∈ {1,2} after `R`.
    D { row: i64, n: i64, t: i64 },
    Bot,
}

pub struct ChainFamily {
    pub schedule: Arc<ParamSchedule>,
    pub restarts: bool,
    pub exact: bool,
}

impl ChainFamily {
    pub fn new(schedule: Arc<ParamSchedule>, restarts: bool, exact: bool) -> Self {
        ChainFamily { schedule, restarts, exact }
    }

    pub fn nstar(&self) -> i64 {
        self.schedule.nstar
    }

    pub fn label(&self, p: Pos) -> StateRef {
        let r = self.restarts;
        match p {
            Pos::Start if r => StateRef::ints("x", &[0, self.nstar()]),
            Pos::Start => StateRef::atom("start"),
            Pos::Entry { row, n } => {
                if row == 0 && n == self.nstar() {
                    self.label(Pos::Start)
                } else {
                    StateRef::ints("x", &[row, n])
                }
            }
            Pos::S { row, e, n } if r => StateRef::ints("s", &[row, e, n]),
            Pos::S { n, .. } => StateRef::ints("s", &[n]),
            Pos::A { row, e, n, i } if r => StateRef::ints("a", &[row, e, n, i]),
            Pos::A { n, i, .. } => StateRef::ints("a", &[n, i]),
            Pos::C { row, e, n } if r => StateRef::ints("c", &[row, e, n]),
            Pos::C { n, .. } => StateRef::ints("c", &[n]),
            Pos::B { row, e, n, j } if r => StateRef::ints("b", &[row, e, n, j]),
            Pos::B { n, j, .. } => StateRef::ints("b", &[n, j]),
            Pos::W { row, e, n, h } if r => StateRef::ints("w", &[row, e, n, h]),
            Pos::W { n, h, .. } => StateRef::ints("w", &[n, h]),
            Pos::R { row, n } => StateRef::ints("r", &[row, n]),
            Pos::D { row, n, t } => StateRef::ints("d", &[row, n, t]),
            Pos::Bot => StateRef::atom("bot"),
        }
    }

    pub fn parse(&self, s: &StateRef) -> Option<Pos> {
        let node = s.node()?;
        let a: Vec<i64> = node.args.iter().map(|x| x.as_int()).collect::<Option<_>>()?;
        let ns = self.nstar();
        let p = if self.restarts {
            match (node.name.as_ref(), a.as_slice()) {
                ("x", [0, n]) if *n == ns => Pos::Start,
                ("x", [row, n]) if *row >= 1 && *n >= ns + 2 => Pos::Entry { row: *row, n: *n },
                ("s", [row, e, n]) => Pos::S { row: *row, e: *e, n: *n },
                ("a", [row, e, n, i]) => Pos::A { row: *row, e: *e, n: *n, i: *i },
                ("c", [row, e, n]) => Pos::C { row: *row, e: *e, n: *n },
                ("b", [row, e, n, j]) => Pos::B { row: *row, e: *e, n: *n, j: *j },
                ("w", [row, e, n, h]) => Pos::W { row: *row, e: *e, n: *n, h: *h },
                ("r", [row, n]) if *row >= 1 => Pos::R { row: *row, n: *n },
                ("d", [row, n, t]) if *row >= 1 && (1..=2).contains(t) => Pos::D { row: *row, n: *n, t: *t },
                _ => return None,
            }
        } else {
            match (node.name.as_ref(), a.as_slice()) {
                ("start", []) => Pos::Start,
                ("bot", []) => Pos::Bot,
                ("s", [n]) => Pos::S { row: 0, e: ns, n: *n },
                ("a", [n, i]) => Pos::A { row: 0, e: ns, n: *n, i: *i },
                ("c", [n]) => Pos::C { row: 0, e: ns, n: *n },
                ("b", [n, j]) => Pos::B { row: 0, e: ns, n: *n, j: *j },
                ("w", [n, h]) => Pos::W { row: 0, e: ns, n: *n, h: *h },
                _ => return None,
            }
        };
        self.in_domain(p).then_some(p)
    }

    fn in_domain(&self, p: Pos) -> bool {
        let ns = self.nstar();
        let k = |n: i64| self.schedule.k(n).map(|k| k as i64).unwrap_or(-1);
        match p {
            Pos::Start | Pos::Bot => true,
            Pos::Entry { row, n } => row >= 1 && n >= ns + 2,
            Pos::S { row, e, n } | Pos::C { row, e, n } => row >= 0 && e >= ns && n >= e,
            Pos::A { row, e, n, i } => row >= 0 && e >= ns && n >= e && (0..=k(n)).contains(&i),
            Pos::B { row, e, n, j } => row >= 0 && e >= ns && n >= e && (0..=k(n)).contains(&j),
            Pos::W { row, e, n, h } => row >= 0 && e >= ns && n >= e && (0..4).contains(&h),
            Pos::R { row, n } | Pos::D { row, n, .. } => row >= 1 && n >= ns,
        }
    }

    fn m(&self, n: i64) -> BigInt {
        self.schedule.m_chain(n).expect("gadget index in domain")
    }

    fn delta(&self, i: i64, n: i64) -> Prob {
        self.schedule.delta(i as u32, n, self.exact).expect("branch in range")
    }

    fn eps(&self, j: i64, n: i64) -> Prob {
        self.schedule.epsilon(j as u32, n, self.exact).expect("branch in range")
    }

    fn complement(&self, p: &Prob) -> Prob {
        match &p.exact {
            Some(x) => Prob::exact(BigRational::from_integer(1.into()) - &**x),
            None => Prob::float(1.0 - p.value),
        }
    }

    fn succ(&self, p: Pos) -> Successors {
        let l = |q: Pos| self.label(q);
        match p {
            Pos::Start => {
                let n = self.nstar();
                Successors::Controlled(ChoiceList::finite(vec![
                    l(Pos::S { row: 0, e: n, n }),
                    l(Pos::W { row: 0, e: n, n, h: 0 }),
                ]))
            }
            Pos::Entry { row, n } => Successors::Controlled(ChoiceList::finite(vec![
                l(Pos::S { row, e: n, n }),
                l(Pos::W { row, e: n, n, h: 0 }),
            ])),
            Pos::S { row, e, n } => {
                let k = self.schedule.k(n).expect("k") as i64;
                Successors::Random(SuccessorDist::finite(
                    (0..=k)
                        .map(|i| Branch { target: l(Pos::A { row, e, n, i }), prob: self.delta(i, n) })
                        .filter(|b| b.prob.value > 0.0 || b.prob.exact.as_ref().is_some_and(|x| !x.is_zero()))
                        .collect(),
                ))
            }
            Pos::A { row, e, n, .. } => Successors::Random(SuccessorDist::dirac(l(Pos::C { row, e, n }))),
            Pos::C { row, e, n } => {
                let k = self.schedule.k(n).expect("k") as i64;
                Successors::Controlled(ChoiceList::finite((0..=k).map(|j| l(Pos::B { row, e, n, j })).collect()))
            }
            Pos::B { row, e, n, j } => {
                let eps = self.eps(j, n);
                let next = l(Pos::S { row, e, n: n + 1 });
                if eps.value == 0.0 && eps.exact.as_ref().is_none_or(|x| x.is_zero()) {
                    return Successors::Random(SuccessorDist::dirac(next));
                }
                let fail = if self.restarts { l(Pos::R { row: row + 1, n }) } else { l(Pos::Bot) };
                Successors::Random(SuccessorDist::finite(vec![
                    Branch { target: next, prob: self.complement(&eps) },
                    Branch { target: fail, prob: eps },
                ]))
            }
            Pos::W { row, e, n, h } if h < 3 => {
                Successors::Random(SuccessorDist::dirac(l(Pos::W { row, e, n, h: h + 1 })))
            }
            Pos::W { row, e, n, .. } => Successors::Controlled(ChoiceList::finite(vec![
                l(Pos::S { row, e, n: n + 1 }),
                l(Pos::W { row, e, n: n + 1, h: 0 }),
            ])),
            Pos::R { row, n } => Successors::Random(SuccessorDist::dirac(l(Pos::D { row, n, t: 1 }))),
            Pos::D { row, n, t: 1 } => Successors::Random(SuccessorDist::dirac(l(Pos::D { row, n, t: 2 }))),
            Pos::D { row, n, .. } => Successors::Random(SuccessorDist::dirac(l(Pos::Entry { row, n: n + 2 }))),
            Pos::Bot => Successors::Random(SuccessorDist::dirac(l(Pos::Bot))),
        }
    }

    fn edge_reward(&self, p: Pos, q: Pos) -> Option<Reward> {
        let zero = || Some(BigRational::zero());
        match (p, q) {
            (Pos::Start, Pos::S { .. } | Pos::W { .. }) => zero(),
            (Pos::Entry { n, .. }, Pos::S { .. } | Pos::W { .. }) => Some(big(self.m(n))),
            (Pos::S { .. }, Pos::A { .. }) => zero(),
            (Pos::A { n, i, .. }, Pos::C { .. }) => Some(big(self.m(n) * i)),
            (Pos::C { .. }, Pos::B { .. }) => zero(),
            (Pos::B { n, j, .. }, Pos::S { .. }) => Some(big(-(self.m(n) * j))),
            (Pos::B { .. }, Pos::Bot) => zero(),
            (Pos::B { n, .. }, Pos::R { .. }) => Some(big(-self.m(n + 2))),
            (Pos::W { .. }, Pos::W { h: 0, .. }) => Some(int(-1)),
            (Pos::W { .. }, Pos::W { .. }) => zero(),
            (Pos::W { e, n, .. }, Pos::S { .. }) => Some(int(n - e)),
            (Pos::R { .. }, Pos::D { .. }) | (Pos::D { .. }, _) => zero(),
            (Pos::Bot, Pos::Bot) => Some(int(-1)),
            _ => None,
        }
    }

    /// Number of transitions on every path from the initial state to `p`.
    pub fn depth(&self, p: Pos) -> Option<i64> {
        let base = |n: i64| 1 + 4 * (n - self.nstar());
        Some(match p {
            Pos::Start => 0,
            Pos::Entry { n, .. } => base(n) - 1,
            Pos::S { n, .. } => base(n),
            Pos::A { n, .. } => base(n) + 1,
            Pos::C { n, .. } => base(n) + 2,
            Pos::B { n, .. } => base(n) + 3,
            Pos::W { n, h, .. } => base(n) + h,
            Pos::R { n, .. } => base(n) + 4,
            Pos::D { n, t, .. } => base(n) + 4 + t,
            Pos::Bot => return None,
        })
    }
}

impl LazyMdp for ChainFamily {
    fn name(&self) -> String {
        format!("{}[{}]", if self.restarts { "restart" } else { "chain" }, self.schedule.name())
    }

    fn initial(&self) -> StateRef {
        self.label(Pos::Start)
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        let p = self.parse(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        Ok(self.succ(p))
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        let p = self.parse(s).ok_or_else(|| MdpError::UnknownState(s.to_string()))?;
        let q = self.parse(t).ok_or_else(nat)?;
        if !self.succ(p).targets(usize::MAX).contains(t) {
            return Err(nat());
        }
        self.edge_reward(p, q).ok_or_else(nat)
    }

    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        self.fast_reward(s, t).ok_or_else(|| MdpError::NotATransition(s.to_string(), t.to_string()))
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        !self.restarts && s.is("bot") && s.arity() == 0
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(ChainMonitor { fam: self, observed: None })
    }
}

impl ChainFamily {
    /// Reward of a known transition without membership checking; used on the
    /// simulation hot path.
    pub fn fast_reward(&self, s: &StateRef, t: &StateRef) -> Option<Reward> {
        self.edge_reward(self.parse(s)?, self.parse(t)?)
    }
}

struct ChainMonitor<'a> {
    fam: &'a ChainFamily,
    observed: Option<(i64, i64)>,
}

impl RunMonitor for ChainMonitor<'_> {
    fn observe(&mut self, s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        let (Some(p), Some(q)) = (self.fam.parse(s), self.fam.parse(t)) else { return };
        match (p, q) {
            (Pos::S { .. }, Pos::A { n, i, .. }) => self.observed = Some((n, i)),
            (Pos::C { n, .. }, Pos::B { j, .. }) => {
                if let Some((m, i)) = self.observed {
                    if m == n && j > i {
                        out.push(Event { kind: EventKind::Mistake { gadget: n, observed: i, chose: j }, step });
                    }
                }
            }
            (Pos::B { n, .. }, Pos::S { .. }) => out.push(Event { kind: EventKind::GadgetDone { gadget: n }, step }),
            (Pos::B { .. }, Pos::Bot) => out.push(Event { kind: EventKind::Sink, step }),
            (Pos::B { .. }, Pos::R { row, .. }) => out.push(Event { kind: EventKind::Restart { row: row as u64 }, step }),
            (Pos::W { .. } | Pos::Start | Pos::Entry { .. }, Pos::S { n, .. }) => {
                out.push(Event { kind: EventKind::LaneExit { gadget: n }, step })
            }
            _ => {}
        }
    }
}
