//! Reward-implicit gadget chain and its restart variant.
//!
//! Random branch i of gadget n is a zero-reward padding path of n·m_n^i
//! steps; controlled branch j pays −m_n^j and then +m_n^j on the way to
//! `s(n+1)` (or to ⊥, reimbursed). The last argument of every label is the
//! accumulated reward, so the total reward is a function of the state.
//!
//! Labels (chain): `w(n,r)` lane, `s(n,0)`, `p(n,i,t,0)`, `c(n,0)`,
//! `q(n,j,r)`, `bot(r)`. The restart variant prefixes the row and replaces ⊥
//! by `rs(row,n,0)` which pays the penalty −P(n) on entry to the next row.

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, Zero};

use crate::label::StateRef;
use crate::mdp::{big, Branch, ChoiceList, Event, EventKind, LazyMdp, MdpError, Prob, Reward, RunMonitor, SuccessorDist, Successors};
use crate::schedule::ParamSchedule;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RiPos {
    W { row: i64, n: i64, r: BigInt },
    S { row: i64, n: i64 },
    P { row: i64, n: i64, i: i64, t: BigInt },
    C { row: i64, n: i64 },
    Q { row: i64, n: i64, j: i64 },
    Rs { row: i64, n: i64 },
    Bot { r: BigInt },
}

pub struct RewardImplicit {
    pub schedule: Arc<ParamSchedule>,
    pub restarts: bool,
    pub exact: bool,
}

fn b(v: i64) -> BigInt {
    BigInt::from(v)
}

impl RewardImplicit {
    pub fn new(schedule: Arc<ParamSchedule>, restarts: bool, exact: bool) -> Self {
        RewardImplicit { schedule, restarts, exact }
    }

    pub fn nstar(&self) -> i64 {
        self.schedule.nstar
    }

    /// m_n^i under the reward-implicit recurrence.
    pub fn unit(&self, n: i64, i: i64) -> BigInt {
        Pow::pow(&self.schedule.m_ri(n).expect("gadget index in domain"), i as u32)
    }

    /// Padding length of random branch i in gadget n.
    pub fn padding(&self, n: i64, i: i64) -> BigInt {
        b(n) * self.unit(n, i)
    }

    /// Bound on the number of steps of any run before it leaves gadget n.
    pub fn steps_bound(&self, n: i64) -> BigInt {
        let mut acc = BigInt::one();
        for l in self.nstar()..=n {
            let k = self.schedule.k(l).expect("k") as i64;
            acc += self.padding(l, k) + b(6);
        }
        acc
    }

    /// Restart penalty after failing in gadget n; forces the mean to ≤ −1.
    pub fn penalty(&self, n: i64) -> BigInt {
        self.steps_bound(n) + b(2)
    }

    pub fn label(&self, p: &RiPos) -> StateRef {
        let z = BigInt::zero();
        if self.restarts {
            match p {
                RiPos::W { row, n, r } => StateRef::big("w", &[b(*row), b(*n), r.clone()]),
                RiPos::S { row, n } => StateRef::ints("s", &[*row, *n, 0]),
                RiPos::P { row, n, i, t } => StateRef::big("p", &[b(*row), b(*n), b(*i), t.clone(), z]),
                RiPos::C { row, n } => StateRef::ints("c", &[*row, *n, 0]),
                RiPos::Q { row, n, j } => StateRef::big("q", &[b(*row), b(*n), b(*j), -self.unit(*n, *j)]),
                RiPos::Rs { row, n } => StateRef::ints("rs", &[*row, *n, 0]),
                RiPos::Bot { r } => StateRef::big("bot", &[r.clone()]),
            }
        } else {
            match p {
                RiPos::W { n, r, .. } => StateRef::big("w", &[b(*n), r.clone()]),
                RiPos::S { n, .. } => StateRef::ints("s", &[*n, 0]),
                RiPos::P { n, i, t, .. } => StateRef::big("p", &[b(*n), b(*i), t.clone(), z]),
                RiPos::C { n, .. } => StateRef::ints("c", &[*n, 0]),
                RiPos::Q { n, j, .. } => StateRef::big("q", &[b(*n), b(*j), -self.unit(*n, *j)]),
                RiPos::Rs { row, n } => StateRef::ints("rs", &[*row, *n, 0]),
                RiPos::Bot { r } => StateRef::big("bot", &[r.clone()]),
            }
        }
    }

    pub fn parse(&self, s: &StateRef) -> Option<RiPos> {
        let name = s.name()?;
        let a = s.bigints()?;
        let small = |x: &BigInt| i64::try_from(x).ok();
        let (row, rest) = if self.restarts && name != "bot" {
            (small(a.first()?)?, &a[1..])
        } else {
            (0, &a[..])
        };
        let p = match (name, rest) {
            ("w", [n, r]) => RiPos::W { row, n: small(n)?, r: r.clone() },
            ("s", [n, r]) if r.is_zero() => RiPos::S { row, n: small(n)? },
            ("p", [n, i, t, r]) if r.is_zero() => RiPos::P { row, n: small(n)?, i: small(i)?, t: t.clone() },
            ("c", [n, r]) if r.is_zero() => RiPos::C { row, n: small(n)? },
            ("q", [n, j, _]) => RiPos::Q { row, n: small(n)?, j: small(j)? },
            ("rs", [n, r]) if self.restarts && r.is_zero() => RiPos::Rs { row, n: small(n)? },
            ("bot", [r]) if !self.restarts => RiPos::Bot { r: r.clone() },
            _ => return None,
        };
        (self.in_domain(&p) && &self.label(&p) == s).then_some(p)
    }

    fn in_domain(&self, p: &RiPos) -> bool {
        let ns = self.nstar();
        let k = |n: i64| self.schedule.k(n).map(|k| k as i64).unwrap_or(-1);
        let row_ok = |row: i64| row >= 0 && (self.restarts || row == 0);
        match p {
            RiPos::W { row, n, r } => row_ok(*row) && *n >= ns && !r.is_positive(),
            RiPos::S { row, n } | RiPos::C { row, n } => row_ok(*row) && *n >= ns,
            RiPos::P { row, n, i, t } => {
                row_ok(*row)
                    && *n >= ns
                    && (0..=k(*n)).contains(i)
                    && t >= &BigInt::one()
                    && t <= &self.padding(*n, *i)
            }
            RiPos::Q { row, n, j } => row_ok(*row) && *n >= ns && (0..=k(*n)).contains(j),
            RiPos::Rs { row, n } => self.restarts && *row >= 1 && *n >= ns,
            RiPos::Bot { r } => !self.restarts && !r.is_positive(),
        }
    }

    fn eps(&self, j: i64, n: i64) -> Prob {
        self.schedule.epsilon(j as u32, n, self.exact).expect("branch in range")
    }

    fn succ(&self, p: &RiPos) -> Successors {
        let l = |q: RiPos| self.label(&q);
        match p.clone() {
            RiPos::W { row, n, r } => Successors::Controlled(ChoiceList::finite(vec![
                l(RiPos::S { row, n }),
                l(RiPos::W { row, n: n + 1, r: r - 1 }),
            ])),
            RiPos::S { row, n } => {
                let k = self.schedule.k(n).expect("k") as i64;
                Successors::Random(SuccessorDist::finite(
                    (0..=k)
                        .map(|i| Branch {
                            target: l(RiPos::P { row, n, i, t: BigInt::one() }),
                            prob: self.schedule.delta(i as u32, n, self.exact).expect("branch"),
                        })
                        .filter(|b| b.prob.value > 0.0)
                        .collect(),
                ))
            }
            RiPos::P { row, n, i, t } => {
                let next = if t == self.padding(n, i) { l(RiPos::C { row, n }) } else { l(RiPos::P { row, n, i, t: t + 1 }) };
                Successors::Random(SuccessorDist::dirac(next))
            }
            RiPos::C { row, n } => {
                let k = self.schedule.k(n).expect("k") as i64;
                Successors::Controlled(ChoiceList::finite((0..=k).map(|j| l(RiPos::Q { row, n, j })).collect()))
            }
            RiPos::Q { row, n, j } => {
                let eps = self.eps(j, n);
                let next = l(RiPos::S { row, n: n + 1 });
                if eps.value == 0.0 {
                    return Successors::Random(SuccessorDist::dirac(next));
                }
                let fail = if self.restarts { l(RiPos::Rs { row: row + 1, n }) } else { l(RiPos::Bot { r: BigInt::zero() }) };
                let keep = match &eps.exact {
                    Some(x) => Prob::exact(BigRational::one() - &**x),
                    None => Prob::float(1.0 - eps.value),
                };
                Successors::Random(SuccessorDist::finite(vec![
                    Branch { target: next, prob: keep },
                    Branch { target: fail, prob: eps },
                ]))
            }
            RiPos::Rs { row, n } => {
                Successors::Random(SuccessorDist::dirac(l(RiPos::W { row, n: n + 2, r: -self.penalty(n) })))
            }
            RiPos::Bot { r } => Successors::Random(SuccessorDist::dirac(l(RiPos::Bot { r: r - 1 }))),
        }
    }

    fn edge_reward(&self, p: &RiPos, q: &RiPos) -> Option<Reward> {
        let zero = || Some(BigRational::zero());
        match (p, q) {
            (RiPos::W { r, .. }, RiPos::S { .. }) => Some(big(-r.clone())),
            (RiPos::W { .. }, RiPos::W { .. }) => Some(big(b(-1))),
            (RiPos::S { .. }, RiPos::P { .. }) | (RiPos::P { .. }, RiPos::P { .. } | RiPos::C { .. }) => zero(),
            (RiPos::C { n, .. }, RiPos::Q { j, .. }) => Some(big(-self.unit(*n, *j))),
            (RiPos::Q { n, j, .. }, RiPos::S { .. } | RiPos::Bot { .. } | RiPos::Rs { .. }) => {
                Some(big(self.unit(*n, *j)))
            }
            (RiPos::Rs { n, .. }, RiPos::W { .. }) => Some(big(-self.penalty(*n))),
            (RiPos::Bot { .. }, RiPos::Bot { .. }) => Some(big(b(-1))),
            _ => None,
        }
    }
}

/// Accumulated reward encoded in a reward-implicit label (its last argument).
pub fn label_reward(s: &StateRef) -> Option<BigRational> {
    let n = s.arity();
    (n > 0).then(|| s.arg(n - 1).map(|a| a.to_rational())).flatten()
}

impl LazyMdp for RewardImplicit {
    fn name(&self) -> String {
        let fam = if self.restarts { "reward-implicit-restart" } else { "reward-implicit" };
        format!("{fam}[{}]", self.schedule.name())
    }

    fn initial(&self) -> StateRef {
        self.label(&RiPos::W { row: 0, n: self.nstar(), r: BigInt::zero() })
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

    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let nat = || MdpError::NotATransition(s.to_string(), t.to_string());
        let p = self.parse(s).ok_or_else(nat)?;
        let q = self.parse(t).ok_or_else(nat)?;
        self.edge_reward(&p, &q).ok_or_else(nat)
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        !self.restarts && s.is("bot")
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(RiMonitor { fam: self, observed: None })
    }
}

struct RiMonitor<'a> {
    fam: &'a RewardImplicit,
    observed: Option<(i64, i64)>,
}

impl RunMonitor for RiMonitor<'_> {
    fn observe(&mut self, s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        // padding steps dominate runs; skip parsing them
        if s.is("p") && t.is("p") {
            return;
        }
        let (Some(p), Some(q)) = (self.fam.parse(s), self.fam.parse(t)) else { return };
        let kind = match (p, q) {
            (RiPos::S { .. }, RiPos::P { n, i, .. }) => {
                self.observed = Some((n, i));
                return;
            }
            (RiPos::C { n, .. }, RiPos::Q { j, .. }) => match self.observed {
                Some((m, i)) if m == n && j > i => EventKind::Mistake { gadget: n, observed: i, chose: j },
                _ => return,
            },
            (RiPos::Q { n, .. }, RiPos::S { .. }) => EventKind::GadgetDone { gadget: n },
            (RiPos::Q { .. }, RiPos::Bot { .. }) => EventKind::Sink,
            (RiPos::Q { .. }, RiPos::Rs { row, .. }) => EventKind::Restart { row: row as u64 },
            (RiPos::W { .. }, RiPos::S { n, .. }) => EventKind::LaneExit { gadget: n },
            _ => return,
        };
        out.push(Event { kind, step });
    }
}
