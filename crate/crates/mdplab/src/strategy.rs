//! Memory-automaton strategies.
//!
//! A strategy has a mode space, an initial mode and a kernel τ. At a
//! controlled state τ(m,s) is a distribution over (mode', successor); at a
//! random state the successor follows P(s) and the strategy only updates its
//! mode. Randomness is external: `decide` is a deterministic function of its
//! inputs and one uniform draw.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::n_epsilon;
use crate::constructions::binarize::tree_depth;
use crate::constructions::FamilyKind;
use crate::label::StateRef;
use crate::mdp::{ChoiceList, LazyMdp, MdpError, Prob, Reward, Successors, SuccessorDist};
use crate::schedule::ParamSchedule;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid mode {0:?} at {1}")]
    InvalidMode(Mode, String),
    #[error("no table entry for {0}")]
    MissingTableEntry(String),
    #[error("rule reads {0}, which class {1} does not observe")]
    ProjectionViolation(&'static str, StrategyClass),
    #[error("N = {0} is below the first gadget {1}")]
    NBelowNStar(i64, i64),
    #[error("empty kernel row at {0}")]
    EmptyRow(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("table: {0}")]
    Table(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Unit,
    Slot(u64),
    Counters { step: u64, reward: BigRational },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum StrategyClass {
    MD,
    FR(u32),
    StepCounter,
    RewardCounter,
    ScRc,
    HD,
}

impl fmt::Display for StrategyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyClass::FR(k) => write!(f, "FR({k})"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl StrategyClass {
    pub fn sees_step(self) -> bool {
        matches!(self, StrategyClass::StepCounter | StrategyClass::ScRc | StrategyClass::HD)
    }

    pub fn sees_reward(self) -> bool {
        matches!(self, StrategyClass::RewardCounter | StrategyClass::ScRc | StrategyClass::HD)
    }
}

/// One row entry of τ: (mode', successor index, probability).
pub type RowEntry = (Mode, usize, Prob);

pub trait Strategy: Send + Sync {
    fn name(&self) -> String;
    fn class(&self) -> StrategyClass;
    fn initial_mode(&self) -> Mode;

    /// τ(m,s) at a controlled state, over indices into `choices`.
    fn control(&self, mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError>;

    /// Mode update after the random transition s → t.
    fn update(&self, mode: &Mode, _s: &StateRef, _t: &StateRef) -> Vec<(Mode, Prob)> {
        vec![(mode.clone(), Prob::one())]
    }

    /// Joint τ(m,s) at a random state. The default pairs P(s) with `update`;
    /// strategies overriding this are checked by `validate_automaton`.
    fn random_row(&self, mode: &Mode, s: &StateRef, dist: &SuccessorDist) -> Vec<RowEntry> {
        let mut row = Vec::new();
        for (i, b) in dist.enumerate().into_iter().enumerate() {
            for (m, q) in self.update(mode, s, &b.target) {
                row.push((m, i, mul(&b.prob, &q)));
            }
        }
        row
    }

    fn overrides_random(&self) -> bool {
        false
    }

    /// Counter classes replace the kernel's mode by the forced counter update.
    fn forced(&self, _old: &Mode, _r: &Reward) -> Option<Mode> {
        None
    }
}

pub fn mul(a: &Prob, b: &Prob) -> Prob {
    match (&a.exact, &b.exact) {
        (Some(x), Some(y)) => Prob::exact(&**x * &**y),
        _ => Prob::float(a.value * b.value),
    }
}

/// Inverse-CDF pick from weighted entries; returns index and residual draw.
pub fn pick<T>(entries: &[(T, Prob)], u: f64) -> Option<(usize, f64)> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, (_, p)) in entries.iter().enumerate() {
        if p.value <= 0.0 {
            continue;
        }
        if u < acc + p.value {
            return Some((i, ((u - acc) / p.value).clamp(0.0, 1.0 - f64::EPSILON)));
        }
        acc += p.value;
        last = Some(i);
    }
    last.map(|i| (i, 0.5))
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub mode: Mode,
    pub target: StateRef,
    pub reward: Reward,
    /// Set when the draw fell beyond the enumerated mass of a lazy support.
    pub tail_truncated: bool,
}

/// One step of the strategy-controlled process from (mode, s) with draw u.
pub fn decide(
    mdp: &dyn LazyMdp,
    strategy: &dyn Strategy,
    mode: &Mode,
    s: &StateRef,
    u: f64,
) -> Result<Decision, StrategyError> {
    let (mode2, target, truncated) = match mdp.successors(s)? {
        Successors::Controlled(choices) => {
            let row = strategy.control(mode, s, &choices)?;
            let flat: Vec<((Mode, usize), Prob)> = row.into_iter().map(|(m, i, p)| ((m, i), p)).collect();
            let (k, _) = pick(&flat, u).ok_or_else(|| StrategyError::EmptyRow(s.to_string()))?;
            let ((m, idx), _) = flat.into_iter().nth(k).expect("picked entry");
            let t = choices.get(idx).ok_or_else(|| StrategyError::EmptyRow(s.to_string()))?;
            (m, t, false)
        }
        Successors::Random(dist) => {
            if strategy.overrides_random() {
                let row = strategy.random_row(mode, s, &dist);
                let entries = dist.enumerate();
                let flat: Vec<((Mode, usize), Prob)> = row.into_iter().map(|(m, i, p)| ((m, i), p)).collect();
                let (k, _) = pick(&flat, u).ok_or_else(|| StrategyError::EmptyRow(s.to_string()))?;
                let ((m, idx), _) = flat.into_iter().nth(k).expect("picked entry");
                (m, entries[idx].target.clone(), false)
            } else {
                let sampled = dist.sample(u);
                let ups = strategy.update(mode, s, &sampled.target);
                let m = if ups.len() == 1 {
                    ups.into_iter().next().expect("one").0
                } else {
                    let (k, _) = pick(&ups, sampled.residual).ok_or_else(|| StrategyError::EmptyRow(s.to_string()))?;
                    ups.into_iter().nth(k).expect("picked").0
                };
                (m, sampled.target, sampled.tail_truncated)
            }
        }
    };
    let reward = mdp.reward_unchecked(s, &target)?;
    let mode = strategy.forced(mode, &reward).unwrap_or(mode2);
    Ok(Decision { mode, target, reward, tail_truncated: truncated })
}

#[derive(Clone, Debug, Serialize)]
pub enum AutomatonViolation {
    OutsideSuccessors { state: String, index: usize },
    RowNotNormalized { state: String, mode: String, mass: f64 },
    MarginalMismatch { state: String, mode: String, target: String },
    Error { state: String, error: String },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AutomatonReport {
    pub checked: usize,
    pub violations: Vec<AutomatonViolation>,
}

impl AutomatonReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn row_mass(ps: impl Iterator<Item = Prob>) -> (f64, Option<BigRational>) {
    let mut f = 0.0;
    let mut e = Some(BigRational::zero());
    for p in ps {
        f += p.value;
        e = match (e, &p.exact) {
            (Some(acc), Some(x)) => Some(acc + &**x),
            _ => None,
        };
    }
    (f, e)
}

fn is_one(f: f64, e: &Option<BigRational>) -> bool {
    match e {
        Some(x) => x.is_one(),
        None => (f - 1.0).abs() <= 1e-9,
    }
}

/// Checks both kernel constraints on the probed (mode, state) pairs.
pub fn validate_automaton(mdp: &dyn LazyMdp, strategy: &dyn Strategy, probes: &[(Mode, StateRef)]) -> AutomatonReport {
    let mut rep = AutomatonReport::default();
    for (mode, s) in probes {
        rep.checked += 1;
        let err = |e: String| AutomatonViolation::Error { state: s.to_string(), error: e };
        match mdp.successors(s) {
            Err(e) => rep.violations.push(err(e.to_string())),
            Ok(Successors::Controlled(choices)) => match strategy.control(mode, s, &choices) {
                Err(e) => rep.violations.push(err(e.to_string())),
                Ok(row) => {
                    for (_, i, _) in &row {
                        let inside = match choices.len() {
                            Some(n) => *i < n,
                            None => true,
                        };
                        if !inside {
                            rep.violations.push(AutomatonViolation::OutsideSuccessors { state: s.to_string(), index: *i });
                        }
                    }
                    let (f, e) = row_mass(row.into_iter().map(|x| x.2));
                    if !is_one(f, &e) {
                        rep.violations.push(AutomatonViolation::RowNotNormalized {
                            state: s.to_string(),
                            mode: format!("{mode:?}"),
                            mass: f,
                        });
                    }
                }
            },
            Ok(Successors::Random(dist)) => {
                let entries = dist.enumerate();
                let row = strategy.random_row(mode, s, &dist);
                for (i, b) in entries.iter().enumerate() {
                    let (f, e) = row_mass(row.iter().filter(|x| x.1 == i).map(|x| x.2.clone()));
                    let ok = match (&e, &b.prob.exact) {
                        (Some(x), Some(y)) => x == &**y,
                        _ => (f - b.prob.value).abs() <= 1e-9,
                    };
                    if !ok {
                        rep.violations.push(AutomatonViolation::MarginalMismatch {
                            state: s.to_string(),
                            mode: format!("{mode:?}"),
                            target: b.target.to_string(),
                        });
                    }
                }
                if row.iter().any(|x| x.1 >= entries.len()) {
                    rep.violations.push(AutomatonViolation::OutsideSuccessors { state: s.to_string(), index: entries.len() });
                }
            }
        }
    }
    rep
}

fn dirac_row(mode: Mode, idx: usize) -> Vec<RowEntry> {
    vec![(mode, idx, Prob::one())]
}

/// Memoryless deterministic table keyed by state label.
#[derive(Clone, Debug, Default)]
pub struct MdTable {
    pub actions: HashMap<StateRef, StateRef>,
    /// Use the first successor where the table has no entry.
    pub fallback_first: bool,
}

impl MdTable {
    pub fn new(actions: HashMap<StateRef, StateRef>) -> Self {
        MdTable { actions, fallback_first: false }
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), StrategyError> {
        let mut rows: Vec<(String, String)> = self.actions.iter().map(|(s, a)| (s.to_string(), a.to_string())).collect();
        rows.sort();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["state", "action"]).map_err(|e| StrategyError::Table(e.to_string()))?;
        for (s, a) in rows {
            out.write_record([s, a]).map_err(|e| StrategyError::Table(e.to_string()))?;
        }
        out.flush().map_err(|e| StrategyError::Table(e.to_string()))
    }

    pub fn read_csv<R: io::Read>(r: R) -> Result<Self, StrategyError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut actions = HashMap::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| StrategyError::Table(e.to_string()))?;
            let parse = |i: usize| -> Result<StateRef, StrategyError> {
                rec.get(i).ok_or_else(|| StrategyError::Table("short row".into()))?.parse().map_err(|e: crate::label::LabelError| StrategyError::Table(e.to_string()))
            };
            actions.insert(parse(0)?, parse(1)?);
        }
        Ok(MdTable::new(actions))
    }
}

impl Strategy for MdTable {
    fn name(&self) -> String {
        format!("md-table({})", self.actions.len())
    }
    fn class(&self) -> StrategyClass {
        StrategyClass::MD
    }
    fn initial_mode(&self) -> Mode {
        Mode::Unit
    }
    fn control(&self, _mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        match self.actions.get(s) {
            Some(a) => {
                let idx = choices.position(a).ok_or_else(|| StrategyError::MissingTableEntry(format!("{s} -> {a}")))?;
                Ok(dirac_row(Mode::Unit, idx))
            }
            None if self.fallback_first => Ok(dirac_row(Mode::Unit, 0)),
            None => Err(StrategyError::MissingTableEntry(s.to_string())),
        }
    }
}

/// Deterministic Markov table keyed by (state, step).
#[derive(Clone, Debug, Default)]
pub struct MarkovTable {
    pub actions: HashMap<(StateRef, u64), StateRef>,
}

impl MarkovTable {
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), StrategyError> {
        let mut rows: Vec<(String, u64, String)> =
            self.actions.iter().map(|((s, n), a)| (s.to_string(), *n, a.to_string())).collect();
        rows.sort();
        let mut out = csv::Writer::from_writer(w);
        let e = |e: csv::Error| StrategyError::Table(e.to_string());
        out.write_record(["state", "step", "action"]).map_err(e)?;
        for (s, n, a) in rows {
            out.write_record([s, n.to_string(), a]).map_err(e)?;
        }
        out.flush().map_err(|e| StrategyError::Table(e.to_string()))
    }

    pub fn read_csv<R: io::Read>(r: R) -> Result<Self, StrategyError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut actions = HashMap::new();
        let bad = |e: String| StrategyError::Table(e);
        for rec in rd.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let (Some(s), Some(n), Some(a)) = (rec.get(0), rec.get(1), rec.get(2)) else {
                return Err(bad("short row".into()));
            };
            let s: StateRef = s.parse().map_err(|e: crate::label::LabelError| bad(e.to_string()))?;
            let a: StateRef = a.parse().map_err(|e: crate::label::LabelError| bad(e.to_string()))?;
            actions.insert((s, n.parse().map_err(|_| bad(format!("bad step {n}")))?), a);
        }
        Ok(MarkovTable { actions })
    }

    pub fn into_strategy(self) -> Result<CounterStrategy, StrategyError> {
        let table = Arc::new(self.actions);
        make_counter_strategy(
            StrategyClass::StepCounter,
            CounterRule::new("markov-table", true, false, move |v| {
                let step = v.step.expect("step observed");
                table.get(&(v.state.clone(), step)).cloned().ok_or_else(|| StrategyError::MissingTableEntry(format!("{} @ {step}", v.state)))
            }),
        )
    }
}

/// What a counter rule observes.
pub struct CounterView<'a> {
    pub state: &'a StateRef,
    pub step: Option<u64>,
    pub reward: Option<&'a BigRational>,
}

type RuleFn = dyn Fn(&CounterView) -> Result<StateRef, StrategyError> + Send + Sync;

/// Decision rule over a counter projection.
#[derive(Clone)]
pub struct CounterRule {
    pub name: String,
    pub reads_step: bool,
    pub reads_reward: bool,
    pub rule: Arc<RuleFn>,
}

impl CounterRule {
    pub fn new(
        name: &str,
        reads_step: bool,
        reads_reward: bool,
        rule: impl Fn(&CounterView) -> Result<StateRef, StrategyError> + Send + Sync + 'static,
    ) -> Self {
        CounterRule { name: name.into(), reads_step, reads_reward, rule: Arc::new(rule) }
    }
}

/// Strategy whose mode is (step, reward) with the forced counter update.
#[derive(Clone)]
pub struct CounterStrategy {
    pub class: StrategyClass,
    pub rule: CounterRule,
}

/// Builds a counter strategy; the rule may only read what `class` observes.
pub fn make_counter_strategy(class: StrategyClass, rule: CounterRule) -> Result<CounterStrategy, StrategyError> {
    if rule.reads_step && !class.sees_step() {
        return Err(StrategyError::ProjectionViolation("the step counter", class));
    }
    if rule.reads_reward && !class.sees_reward() {
        return Err(StrategyError::ProjectionViolation("the reward counter", class));
    }
    Ok(CounterStrategy { class, rule })
}

impl Strategy for CounterStrategy {
    fn name(&self) -> String {
        format!("{}[{}]", self.rule.name, self.class)
    }
    fn class(&self) -> StrategyClass {
        self.class
    }
    fn initial_mode(&self) -> Mode {
        Mode::Counters { step: 0, reward: BigRational::zero() }
    }
    fn control(&self, mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        let Mode::Counters { step, reward } = mode else {
            return Err(StrategyError::InvalidMode(mode.clone(), s.to_string()));
        };
        let view = CounterView {
            state: s,
            step: self.rule.reads_step.then_some(*step),
            reward: self.rule.reads_reward.then_some(reward),
        };
        let a = (self.rule.rule)(&view)?;
        let idx = choices.position(&a).ok_or_else(|| StrategyError::MissingTableEntry(format!("{s} -> {a}")))?;
        Ok(dirac_row(mode.clone(), idx))
    }
    fn forced(&self, old: &Mode, r: &Reward) -> Option<Mode> {
        match old {
            Mode::Counters { step, reward } => Some(Mode::Counters { step: step + 1, reward: reward + r }),
            _ => None,
        }
    }
}

/// How the gadget families present branches, choices and lane decisions.
#[derive(Clone)]
pub struct GadgetSyntax {
    pub kind: FamilyKind,
    pub schedule: Arc<ParamSchedule>,
}

impl GadgetSyntax {
    pub fn new(kind: FamilyKind, schedule: Arc<ParamSchedule>) -> Self {
        GadgetSyntax { kind, schedule }
    }

    /// Random branch index observed on the transition s → t.
    pub fn observed(&self, s: &StateRef, t: &StateRef) -> Option<i64> {
        use FamilyKind::*;
        match self.kind {
            Chain | Restart | BinarizedChain if t.is("a") => t.int(t.arity() - 1),
            RewardImplicit | BinarizedRewardImplicit if t.is("p") && !s.is("p") && t.int(2) == Some(1) => t.int(1),
            RewardImplicitRestart if t.is("p") && !s.is("p") && t.int(3) == Some(1) => t.int(2),
            _ => None,
        }
    }

    /// Index of the choice steering towards controlled branch `i` at a gadget
    /// decision state.
    pub fn steer(&self, s: &StateRef, choices: &ChoiceList, i: i64) -> Option<usize> {
        use FamilyKind::*;
        let opts = choices.len().map(|n| (0..n).filter_map(|x| choices.get(x)).collect::<Vec<_>>())?;
        match self.kind {
            Chain | Restart if s.is("c") => opts.iter().position(|o| o.int(o.arity() - 1) == Some(i)),
            RewardImplicit | RewardImplicitRestart if s.is("c") => {
                opts.iter().position(|o| o.int(o.arity() - 2) == Some(i))
            }
            BinarizedChain | BinarizedRewardImplicit if s.is("c") || s.is("tc") => {
                let n = s.int(0)?;
                let d = if s.is("c") { 0 } else { s.int(1)? as u32 };
                let depth = tree_depth(self.schedule.k(n).ok()? + 1);
                let want = i >> (depth - d - 1);
                opts.iter().position(|o| {
                    let p = if o.is("tc") { o.int(2) } else { o.int(1) };
                    p == Some(want)
                })
            }
            _ => None,
        }
    }

    /// At a lane decision: (gadget entered by the entering choice, its index).
    pub fn lane(&self, s: &StateRef, choices: &ChoiceList) -> Option<(i64, usize)> {
        use FamilyKind::*;
        let lane_state = s.is("start") || s.is("w") || s.is("x");
        if !lane_state || choices.len()? != 2 {
            return None;
        }
        (0..2).find_map(|idx| {
            let o = choices.get(idx)?;
            let g = match (self.kind, o.name()?) {
                (Chain | BinarizedChain | RewardImplicit | BinarizedRewardImplicit, "s") => o.int(0)?,
                (Restart, "s") => o.int(2)?,
                (RewardImplicitRestart, "s") => o.int(1)?,
                (BinarizedChain, "z") => o.int(0)? + 1,
                (BinarizedRewardImplicit, "z") => o.int(0)?,
                _ => return None,
            };
            Some((g, idx))
        })
    }
}

/// Mimics the observed branch after entering the first gadget at or beyond
/// `from`; rides the lane before that.
#[derive(Clone)]
pub struct SkipThenMimic {
    pub syntax: GadgetSyntax,
    pub from: i64,
    pub label: String,
}

impl Strategy for SkipThenMimic {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn class(&self) -> StrategyClass {
        StrategyClass::HD
    }
    fn initial_mode(&self) -> Mode {
        Mode::Slot(0)
    }
    fn control(&self, mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        if let Some((g, enter)) = self.syntax.lane(s, choices) {
            let idx = if g >= self.from { enter } else { 1 - enter };
            return Ok(dirac_row(mode.clone(), idx));
        }
        let Mode::Slot(i) = mode else {
            return Err(StrategyError::InvalidMode(mode.clone(), s.to_string()));
        };
        match self.syntax.steer(s, choices, *i as i64) {
            Some(idx) => Ok(dirac_row(mode.clone(), idx)),
            None => Ok(dirac_row(mode.clone(), 0)),
        }
    }
    fn update(&self, mode: &Mode, s: &StateRef, t: &StateRef) -> Vec<(Mode, Prob)> {
        match self.syntax.observed(s, t) {
            Some(i) => vec![(Mode::Slot(i as u64), Prob::one())],
            None => vec![(mode.clone(), Prob::one())],
        }
    }
}

/// Always copies the random branch at the controlled choice; never skips.
pub fn mimic_strategy(kind: FamilyKind, schedule: Arc<ParamSchedule>) -> SkipThenMimic {
    let from = schedule.nstar;
    SkipThenMimic { syntax: GadgetSyntax::new(kind, schedule), from, label: "mimic".into() }
}

/// Skips to gadget `n` along the lane, then mimics.
pub fn skip_then_mimic(kind: FamilyKind, schedule: Arc<ParamSchedule>, n: i64) -> Result<SkipThenMimic, StrategyError> {
    if n < schedule.nstar {
        return Err(StrategyError::NBelowNStar(n, schedule.nstar));
    }
    Ok(SkipThenMimic { syntax: GadgetSyntax::new(kind, schedule), from: n, label: format!("skip-then-mimic({n})") })
}

/// In every row of a restart family, skip to N_{1/2} and mimic from there.
pub fn restart_concat_strategy(kind: FamilyKind, schedule: Arc<ParamSchedule>) -> Result<SkipThenMimic, StrategyError> {
    let n = n_epsilon(&schedule, 0.5).ok_or_else(|| StrategyError::Table("schedule has no certified tail".into()))?;
    let mut s = skip_then_mimic(kind, schedule, n)?;
    s.label = format!("restart-concat({n})");
    Ok(s)
}

/// Never leaves the lane.
pub fn skip_forever(kind: FamilyKind, schedule: Arc<ParamSchedule>) -> SkipThenMimic {
    SkipThenMimic { syntax: GadgetSyntax::new(kind, schedule), from: i64::MAX, label: "skip-forever".into() }
}

type AlphaFn = dyn Fn(i64) -> f64 + Send + Sync;

/// FR(k) adversary on the chain families that cannot tell the least
/// distinguishable branch pair (i(n), j(n)) apart and plays j(n) with
/// probability α_n after either.
#[derive(Clone)]
pub struct ConfusedFr {
    pub syntax: GadgetSyntax,
    pub k: u32,
    pub alpha: Arc<AlphaFn>,
}

impl ConfusedFr {
    /// The merged pair of gadget n, or `None` if k modes suffice to mimic.
    pub fn pair(&self, n: i64) -> Option<(i64, i64)> {
        let kn = self.syntax.schedule.k(n).ok()? as i64;
        if kn + 1 <= self.k as i64 {
            return None;
        }
        crate::analysis::min_pair(&self.syntax.schedule, n)
    }

    /// Mode remembering branch `b` of gadget n.
    pub fn mode_of(&self, n: i64, b: i64) -> u64 {
        match self.pair(n) {
            None => b as u64,
            Some((i, j)) if b == i || b == j => 0,
            Some((i, j)) => {
                if self.k == 1 {
                    return 0;
                }
                let rank = b - (b > i) as i64 - (b > j) as i64;
                (1 + rank as u64).min(self.k as u64 - 1)
            }
        }
    }

    fn alpha_prob(&self, n: i64) -> Prob {
        let a = (self.alpha)(n).clamp(0.0, 1.0);
        Prob::exact(BigRational::from_float(a).expect("finite α"))
    }
}

impl Strategy for ConfusedFr {
    fn name(&self) -> String {
        format!("confused-fr({})", self.k)
    }
    fn class(&self) -> StrategyClass {
        StrategyClass::FR(self.k)
    }
    fn initial_mode(&self) -> Mode {
        Mode::Slot(0)
    }
    fn control(&self, mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        let Mode::Slot(m) = mode else {
            return Err(StrategyError::InvalidMode(mode.clone(), s.to_string()));
        };
        if let Some((_, enter)) = self.syntax.lane(s, choices) {
            return Ok(dirac_row(Mode::Slot(0), enter));
        }
        let Some(n) = s.int(s.arity() - 1).filter(|_| s.is("c")) else {
            return Ok(dirac_row(mode.clone(), 0));
        };
        let steer = |b: i64| self.syntax.steer(s, choices, b).unwrap_or(0);
        match self.pair(n) {
            None => Ok(dirac_row(Mode::Slot(0), steer(*m as i64))),
            Some((i, j)) if *m == 0 => {
                let a = self.alpha_prob(n);
                let rest = Prob::exact(BigRational::one() - a.to_rational());
                let mut row = vec![(Mode::Slot(0), steer(j), a), (Mode::Slot(0), steer(i), rest)];
                row.retain(|e| e.2.value > 0.0);
                Ok(row)
            }
            Some(_) => {
                // smallest branch sharing this mode: never a mistake
                let kn = self.syntax.schedule.k(n).map_err(|e| StrategyError::Table(e.to_string()))? as i64;
                let b = (0..=kn).find(|&b| self.mode_of(n, b) == *m).unwrap_or(0);
                Ok(dirac_row(Mode::Slot(0), steer(b)))
            }
        }
    }
    fn update(&self, mode: &Mode, s: &StateRef, t: &StateRef) -> Vec<(Mode, Prob)> {
        match self.syntax.observed(s, t) {
            Some(b) => {
                let n = t.int(t.arity() - 2).unwrap_or(0);
                vec![(Mode::Slot(self.mode_of(n, b)), Prob::one())]
            }
            None => vec![(mode.clone(), Prob::one())],
        }
    }
}

pub fn confused_fr_adversary(
    kind: FamilyKind,
    schedule: Arc<ParamSchedule>,
    k: u32,
    alpha: impl Fn(i64) -> f64 + Send + Sync + 'static,
) -> ConfusedFr {
    ConfusedFr { syntax: GadgetSyntax::new(kind, schedule), k: k.max(1), alpha: Arc::new(alpha) }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// FR(k) strategy with hashed integer kernel weights in 1..=64; rows depend
/// only on (mode, state template, index), so gadget families share rows.
#[derive(Clone, Debug)]
pub struct RandomFr {
    pub k: u32,
    pub seed: u64,
    /// Choices considered at lazily branching states.
    pub lazy_width: usize,
}

impl RandomFr {
    fn weight(&self, tag: u64, mode: u64, template: &str, idx: usize, mode2: u64) -> u64 {
        let mut h = splitmix(self.seed ^ tag);
        for v in [mode, hash_str(template), idx as u64, mode2] {
            h = splitmix(h ^ v);
        }
        1 + h % 64
    }

    fn normalize(w: Vec<(Mode, usize, u64)>) -> Vec<RowEntry> {
        let total: u64 = w.iter().map(|x| x.2).sum();
        w.into_iter().map(|(m, i, x)| (m, i, Prob::ratio(x, total))).collect()
    }
}

impl Strategy for RandomFr {
    fn name(&self) -> String {
        format!("random-fr({},{})", self.k, self.seed)
    }
    fn class(&self) -> StrategyClass {
        StrategyClass::FR(self.k)
    }
    fn initial_mode(&self) -> Mode {
        Mode::Slot(0)
    }
    fn control(&self, mode: &Mode, s: &StateRef, choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        let Mode::Slot(m) = mode else {
            return Err(StrategyError::InvalidMode(mode.clone(), s.to_string()));
        };
        let n = choices.len().unwrap_or(self.lazy_width);
        let mut w = Vec::with_capacity(n * self.k as usize);
        for idx in 0..n {
            for m2 in 0..self.k as u64 {
                w.push((Mode::Slot(m2), idx, self.weight(1, *m, s.template(), idx, m2)));
            }
        }
        Ok(Self::normalize(w))
    }
    fn update(&self, mode: &Mode, s: &StateRef, t: &StateRef) -> Vec<(Mode, Prob)> {
        let Mode::Slot(m) = mode else { return vec![(mode.clone(), Prob::one())] };
        if self.k == 1 {
            return vec![(Mode::Slot(0), Prob::one())];
        }
        // successor identified by its template and trailing argument
        let idx = t.int(t.arity().saturating_sub(1)).unwrap_or(0).rem_euclid(1 << 20) as usize;
        let tag = hash_str(t.template());
        let w: Vec<(Mode, usize, u64)> = (0..self.k as u64)
            .map(|m2| (Mode::Slot(m2), 0, self.weight(2 ^ tag, *m, s.template(), idx, m2)))
            .collect();
        Self::normalize(w).into_iter().map(|(m, _, p)| (m, p)).collect()
    }
}

pub fn random_fr_strategy(k: u32, seed: u64) -> RandomFr {
    RandomFr { k: k.max(1), seed, lazy_width: 16 }
}

/// Infinitely branching family: always the same branch r(i).
pub fn fixed_branch(i: u64) -> MdTable {
    let mut t = MdTable::new(HashMap::from([(StateRef::atom("s"), StateRef::ints("r", &[i as i64]))]));
    t.fallback_first = false;
    t
}

/// Infinitely branching family: branch r(k) on the k-th visit of s.
#[derive(Clone, Debug, Default)]
pub struct IncreasingBranch;

impl Strategy for IncreasingBranch {
    fn name(&self) -> String {
        "increasing-branch".into()
    }
    fn class(&self) -> StrategyClass {
        StrategyClass::HD
    }
    fn initial_mode(&self) -> Mode {
        Mode::Slot(0)
    }
    fn control(&self, mode: &Mode, s: &StateRef, _choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        let Mode::Slot(v) = mode else {
            return Err(StrategyError::InvalidMode(mode.clone(), s.to_string()));
        };
        Ok(dirac_row(Mode::Slot(v + 1), *v as usize))
    }
}

/// Loop chain: loop `loops(k)` times in s(k), then move on.
#[derive(Clone)]
pub struct LoopSchedule {
    pub loops: Arc<dyn Fn(i64) -> u64 + Send + Sync>,
    pub label: String,
}

impl Strategy for LoopSchedule {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn class(&self) -> StrategyClass {
        StrategyClass::HD
    }
    fn initial_mode(&self) -> Mode {
        Mode::Slot(0)
    }
    fn control(&self, mode: &Mode, s: &StateRef, _choices: &ChoiceList) -> Result<Vec<RowEntry>, StrategyError> {
        let (Mode::Slot(c), Some(k)) = (mode, s.int(0)) else {
            return Err(StrategyError::InvalidMode(mode.clone(), s.to_string()));
        };
        Ok(if *c < (self.loops)(k) { dirac_row(Mode::Slot(c + 1), 0) } else { dirac_row(Mode::Slot(0), 1) })
    }
}

pub fn loop_schedule(label: &str, loops: impl Fn(i64) -> u64 + Send + Sync + 'static) -> LoopSchedule {
    LoopSchedule { loops: Arc::new(loops), label: label.into() }
}

/// Loop chain MD strategy: move until s(k), then loop there forever.
pub fn stuck_at(k: i64) -> MdTable {
    let mut actions = HashMap::new();
    for j in 1..k {
        actions.insert(StateRef::ints("s", &[j]), StateRef::ints("s", &[j + 1]));
    }
    actions.insert(StateRef::ints("s", &[k]), StateRef::ints("s", &[k]));
    MdTable::new(actions)
}
