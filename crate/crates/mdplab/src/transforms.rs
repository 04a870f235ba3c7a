//! State-space encodings that turn total and mean payoff into point payoff,
//! the glue construction, and pull-backs of encoded strategies.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::label::StateRef;
use crate::mdp::{Branch, ChoiceList, Event, LazyMdp, MdpError, Prob, Reward, RunMonitor, SharedMdp, SuccessorDist, Successors, Support};
use crate::strategy::{make_counter_strategy, CounterRule, CounterStrategy, Mode, RowEntry, Strategy, StrategyClass, StrategyError};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("unknown encoding {0:?}")]
    UnknownEncoding(String),
}

/// R(M) keeps the accumulated reward, S(M) the step count, A(M) both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Encoding {
    R,
    S,
    A,
}

impl Encoding {
    fn keeps_step(self) -> bool {
        matches!(self, Encoding::S | Encoding::A)
    }

    fn keeps_reward(self) -> bool {
        matches!(self, Encoding::R | Encoding::A)
    }

    /// Counter class that reads exactly the encoded components.
    pub fn counter_class(self) -> StrategyClass {
        match self {
            Encoding::R => StrategyClass::RewardCounter,
            Encoding::S => StrategyClass::StepCounter,
            Encoding::A => StrategyClass::ScRc,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Encoding {
    type Err = TransformError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R" | "r" => Ok(Encoding::R),
            "S" | "s" => Ok(Encoding::S),
            "A" | "a" => Ok(Encoding::A),
            _ => Err(TransformError::UnknownEncoding(s.into())),
        }
    }
}

/// Encoded MDP over `inner`, rooted at the encoding of `s0`.
#[derive(Clone)]
pub struct Encoded {
    pub inner: SharedMdp,
    pub encoding: Encoding,
    pub s0: StateRef,
}

pub fn reward_encode(inner: SharedMdp, s0: StateRef) -> Encoded {
    Encoded { inner, encoding: Encoding::R, s0 }
}

pub fn step_encode(inner: SharedMdp, s0: StateRef) -> Encoded {
    Encoded { inner, encoding: Encoding::S, s0 }
}

pub fn avg_encode(inner: SharedMdp, s0: StateRef) -> Encoded {
    Encoded { inner, encoding: Encoding::A, s0 }
}

pub fn encode(encoding: Encoding, inner: SharedMdp, s0: StateRef) -> Encoded {
    Encoded { inner, encoding, s0 }
}

/// (base, step, reward) of an encoded label.
fn parts(s: &StateRef) -> Option<(&StateRef, u64, BigRational)> {
    let e = s.as_encoded()?;
    Some((&e.base, e.step.unwrap_or(0), e.reward.clone().unwrap_or_else(BigRational::zero)))
}

impl Encoded {
    pub fn wrap(&self, base: StateRef, step: u64, reward: BigRational) -> StateRef {
        StateRef::encoded(
            base,
            self.encoding.keeps_step().then_some(step),
            self.encoding.keeps_reward().then_some(reward),
        )
    }

    fn lift(inner: &SharedMdp, enc: Encoding, s: &StateRef, step: u64, acc: &BigRational, t: StateRef) -> Result<StateRef, MdpError> {
        let r = acc + inner.reward_unchecked(s, &t)?;
        Ok(StateRef::encoded(t, enc.keeps_step().then_some(step + 1), enc.keeps_reward().then_some(r)))
    }

    fn split<'a>(&self, s: &'a StateRef) -> Result<(&'a StateRef, u64, BigRational), MdpError> {
        let unknown = || MdpError::UnknownState(s.to_string());
        let e = s.as_encoded().ok_or_else(unknown)?;
        if e.step.is_some() != self.encoding.keeps_step() || e.reward.is_some() != self.encoding.keeps_reward() {
            return Err(unknown());
        }
        parts(s).ok_or_else(unknown)
    }
}

impl LazyMdp for Encoded {
    fn name(&self) -> String {
        format!("{}({})", self.encoding, self.inner.name())
    }

    fn initial(&self) -> StateRef {
        self.wrap(self.s0.clone(), 0, BigRational::zero())
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        let (base, step, acc) = self.split(s)?;
        let enc = self.encoding;
        Ok(match self.inner.successors(base)? {
            Successors::Controlled(choices) => match choices.support {
                Support::Finite(v) => Successors::Controlled(ChoiceList::finite(
                    v.into_iter().map(|t| Self::lift(&self.inner, enc, base, step, &acc, t)).collect::<Result<_, _>>()?,
                )),
                Support::Lazy(f) => {
                    let inner = self.inner.clone();
                    let base = base.clone();
                    Successors::Controlled(ChoiceList::lazy(move |i| {
                        Self::lift(&inner, enc, &base, step, &acc, f(i)).expect("choice of an existing state")
                    }))
                }
            },
            Successors::Random(dist) => match dist.support {
                Support::Finite(v) => Successors::Random(SuccessorDist::finite(
                    v.into_iter()
                        .map(|b| Ok(Branch { target: Self::lift(&self.inner, enc, base, step, &acc, b.target)?, prob: b.prob }))
                        .collect::<Result<_, MdpError>>()?,
                )),
                Support::Lazy(f) => {
                    let inner = self.inner.clone();
                    let base = base.clone();
                    Successors::Random(SuccessorDist::lazy(move |i| {
                        let b = f(i);
                        Branch {
                            target: Self::lift(&inner, enc, &base, step, &acc, b.target).expect("branch of an existing state"),
                            prob: b.prob,
                        }
                    }))
                }
            },
        })
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let (sb, sn, sr) = self.split(s)?;
        let (tb, tn, tr) = self.split(t)?;
        let base_r = self.inner.reward(sb, tb)?;
        let consistent = (!self.encoding.keeps_step() || tn == sn + 1) && (!self.encoding.keeps_reward() || tr == &sr + &base_r);
        if !consistent {
            return Err(MdpError::NotATransition(s.to_string(), t.to_string()));
        }
        Ok(self.encoded_reward(&base_r, tn, tr))
    }

    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        let (sb, _, _) = self.split(s)?;
        let (tb, tn, tr) = self.split(t)?;
        let base_r = self.inner.reward_unchecked(sb, tb)?;
        Ok(self.encoded_reward(&base_r, tn, tr))
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        parts(s).is_some_and(|(b, _, _)| self.inner.is_losing_sink(b))
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(BaseMonitor { inner: self.inner.monitor() })
    }
}

impl Encoded {
    fn encoded_reward(&self, base_r: &BigRational, tn: u64, tr: BigRational) -> Reward {
        match self.encoding {
            Encoding::S => base_r.clone(),
            Encoding::R => tr,
            Encoding::A => tr / BigRational::from_integer(BigInt::from(tn)),
        }
    }
}

/// Applies the base family's monitor to projected labels.
struct BaseMonitor<'a> {
    inner: Box<dyn RunMonitor + 'a>,
}

pub fn project(s: &StateRef) -> &StateRef {
    match s {
        StateRef::Enc(e) => &e.base,
        StateRef::Side(_, inner) => inner,
        other => other,
    }
}

impl RunMonitor for BaseMonitor<'_> {
    fn observe(&mut self, s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        self.inner.observe(project(s), project(t), step, out);
    }
}

/// Disjoint union of two MDPs under a fresh random root.
#[derive(Clone)]
pub struct Glued {
    pub left: SharedMdp,
    pub right: SharedMdp,
}

pub fn glue(left: SharedMdp, right: SharedMdp) -> Glued {
    Glued { left, right }
}

impl Glued {
    fn side<'a>(&self, s: &'a StateRef) -> Result<(u8, &'a StateRef), MdpError> {
        match s {
            StateRef::Side(d @ (0 | 1), inner) => Ok((*d, inner)),
            _ => Err(MdpError::UnknownState(s.to_string())),
        }
    }

    fn part(&self, d: u8) -> &SharedMdp {
        if d == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    fn is_root(s: &StateRef) -> bool {
        s.is("glue") && s.arity() == 0
    }
}

fn tag(d: u8, succ: Successors) -> Successors {
    match succ {
        Successors::Controlled(c) => match c.support {
            Support::Finite(v) => Successors::Controlled(ChoiceList::finite(v.into_iter().map(|t| StateRef::side(d, t)).collect())),
            Support::Lazy(f) => Successors::Controlled(ChoiceList::lazy(move |i| StateRef::side(d, f(i)))),
        },
        Successors::Random(r) => match r.support {
            Support::Finite(v) => Successors::Random(SuccessorDist::finite(
                v.into_iter().map(|b| Branch { target: StateRef::side(d, b.target), prob: b.prob }).collect(),
            )),
            Support::Lazy(f) => Successors::Random(SuccessorDist::lazy(move |i| {
                let b = f(i);
                Branch { target: StateRef::side(d, b.target), prob: b.prob }
            })),
        },
    }
}

impl LazyMdp for Glued {
    fn name(&self) -> String {
        format!("glue({},{})", self.left.name(), self.right.name())
    }

    fn initial(&self) -> StateRef {
        StateRef::atom("glue")
    }

    fn successors(&self, s: &StateRef) -> Result<Successors, MdpError> {
        if Self::is_root(s) {
            return Ok(Successors::Random(SuccessorDist::finite(vec![
                Branch { target: StateRef::side(0, self.left.initial()), prob: Prob::ratio(1, 2) },
                Branch { target: StateRef::side(1, self.right.initial()), prob: Prob::ratio(1, 2) },
            ])));
        }
        let (d, inner) = self.side(s)?;
        Ok(tag(d, self.part(d).successors(inner)?))
    }

    fn reward(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        if Self::is_root(s) {
            let (d, inner) = self.side(t)?;
            if *inner == self.part(d).initial() {
                return Ok(BigRational::zero());
            }
            return Err(MdpError::NotATransition(s.to_string(), t.to_string()));
        }
        let (d, a) = self.side(s)?;
        let (e, b) = self.side(t)?;
        if d != e {
            return Err(MdpError::NotATransition(s.to_string(), t.to_string()));
        }
        self.part(d).reward(a, b)
    }

    fn reward_unchecked(&self, s: &StateRef, t: &StateRef) -> Result<Reward, MdpError> {
        if Self::is_root(s) {
            return Ok(BigRational::zero());
        }
        let (d, a) = self.side(s)?;
        let (_, b) = self.side(t)?;
        self.part(d).reward_unchecked(a, b)
    }

    fn is_losing_sink(&self, s: &StateRef) -> bool {
        self.side(s).is_ok_and(|(d, inner)| self.part(d).is_losing_sink(inner))
    }

    fn monitor(&self) -> Box<dyn RunMonitor + '_> {
        Box::new(GlueMonitor { left: self.left.monitor(), right: self.right.monitor() })
    }
}

struct GlueMonitor<'a> {
    left: Box<dyn RunMonitor + 'a>,
    right: Box<dyn RunMonitor + 'a>,
}

impl RunMonitor for GlueMonitor<'_> {
    fn observe(&mut self, s: &StateRef, t: &StateRef, step: u64, out: &mut Vec<Event>) {
        if let (StateRef::Side(d, a), StateRef::Side(_, b)) = (s, t) {
            let m = if *d == 0 { &mut self.left } else { &mut self.right };
            m.observe(a, b, step, out);
        }
    }
}

/// Runs a base strategy on an encoded MDP by reading base labels only.
/// Choice and branch order is preserved by the encodings, so indices carry
/// over unchanged.
pub struct Lifted<S> {
    pub base: S,
}

impl<S: Strategy> Strategy for Lifted<S> {
    fn name(&self) -> String {
        format!("lifted({})", self.base.name())
    }
    fn class(&self) -> StrategyClass {
        self.base.class()
    }
    fn initial_mode(&self) -> Mode {
        self.base.initial_mode()
    }
    fn control(&self, mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        let base_choices = match &choices.support {
            Support::Finite(v) => ChoiceList::finite(v.iter().map(|t| project(t).clone()).collect()),
            Support::Lazy(f) => {
                let f = f.clone();
                ChoiceList::lazy(move |i| project(&f(i)).clone())
            }
        };
        self.base.control(mode, project(s), &base_choices)
    }
    fn update(&self, mode: &Mode, s: &StateRef, t: &StateRef) -> Vec<(Mode, Prob)> {
        self.base.update(mode, project(s), project(t))
    }
    fn forced(&self, old: &Mode, r: &Reward) -> Option<Mode> {
        self.base.forced(old, r)
    }
}

pub fn lift<S: Strategy>(base: S) -> Lifted<S> {
    Lifted { base }
}

/// Pulls an MD table on an encoded MDP back to a counter strategy on the
/// base MDP. `class` defaults to the class reading exactly the encoded
/// counters; a class observing less is rejected.
pub fn pull_back_strategy(
    encoding: Encoding,
    table: HashMap<StateRef, StateRef>,
    class: Option<StrategyClass>,
) -> Result<CounterStrategy, StrategyError> {
    let class = class.unwrap_or(encoding.counter_class());
    let table = Arc::new(table);
    let rule = CounterRule::new(&format!("pull-back-{encoding}"), encoding.keeps_step(), encoding.keeps_reward(), move |v| {
        let key = StateRef::encoded(v.state.clone(), v.step, v.reward.cloned());
        match table.get(&key) {
            Some(a) => Ok(project(a).clone()),
            None => Err(StrategyError::MissingTableEntry(key.to_string())),
        }
    });
    make_counter_strategy(class, rule)
}

/// Pulls a step-indexed table on S(M) back: the same as a Markov table on M.
pub fn markov_from_step_table(table: &HashMap<StateRef, StateRef>) -> HashMap<(StateRef, u64), StateRef> {
    table
        .iter()
        .filter_map(|(s, a)| {
            let e = s.as_encoded()?;
            Some(((e.base.clone(), e.step?), project(a).clone()))
        })
        .collect()
}
