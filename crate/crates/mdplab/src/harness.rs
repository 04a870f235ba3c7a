//! Experiment configuration and the named desk-scale scenarios.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{
    fr_decay_bound, local_error_sum, n_epsilon, survival_product, tail_survival_lower, wilson_interval,
};
use crate::constructions::{
    binarize::{chain_gadget_law, ri_gadget_law}, build, BinChain, BinRi, ChainFamily, ConstructionError, FamilyKind,
    RewardImplicit,
};
use crate::constructions::infbranch::LoopTrajectory;
use crate::label::{parse_rational, StateRef};
use crate::mdp::{reachable, rat_to_f64, rooted, LazyMdp, MdpError, SharedMdp};
use crate::montecarlo::{
    episode_seed, estimate_event, estimate_events, run_episode_until, EstimateRow, EventSpec, SimConfig, SimError,
};
use crate::payoff::{sequence_of, PayoffKind};
use crate::schedule::{ParamSchedule, ScheduleError, ToySpec};
use crate::solver::{self, Boundary, PipelineConfig, SolverError};
use crate::strategy::{self, Strategy, StrategyError};
use crate::transforms::{encode, lift, project, Encoding};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

impl HarnessError {
    /// Configuration problems map to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::UnknownScenario(_)
                | HarnessError::Schedule(ScheduleError::UnknownPreset(_))
                | HarnessError::Construction(ConstructionError::UnknownFamily(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Preset(String),
    Toy(ToySpec),
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<ParamSchedule, ScheduleError> {
        match self {
            ScheduleSpec::Preset(name) if name == "log-tower" => Ok(ParamSchedule::log_tower()),
            ScheduleSpec::Preset(name) => ParamSchedule::preset(name),
            ScheduleSpec::Toy(spec) => ParamSchedule::toy(spec.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategySpec {
    Mimic,
    SkipThenMimic { n: i64 },
    /// Skip to N_ε of the schedule, then mimic.
    SkipThenMimicEps { eps: f64 },
    RestartConcat,
    SkipForever,
    ConfusedFr { k: u32, alpha: f64 },
    RandomFr { k: u32, seed: u64 },
    FixedBranch { i: u64 },
    IncreasingBranch,
    /// Loop base^k times in s(k).
    LoopSchedule { base: u64 },
    StuckAt { k: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventConfig {
    HitState { label: String },
    HitSink,
    AvoidWithin { label: String },
    RestartCountAtLeast { count: u64, settle: i64 },
    DipBelow { payoff: PayoffKind, bound: String, after: u64 },
    GadgetMistake,
    NoBadEventThrough { gadget: i64 },
    SinkFreeThrough { gadget: i64 },
    Always,
}

impl EventConfig {
    pub fn to_event(&self) -> Result<EventSpec, HarnessError> {
        Ok(match self {
            EventConfig::HitState { label } => EventSpec::HitState(label.clone()),
            EventConfig::HitSink => EventSpec::HitSink,
            EventConfig::AvoidWithin { label } => EventSpec::AvoidWithin(label.clone()),
            EventConfig::RestartCountAtLeast { count, settle } => {
                EventSpec::RestartCountAtLeast { count: *count, settle: *settle }
            }
            EventConfig::DipBelow { payoff, bound, after } => EventSpec::DipBelow {
                kind: *payoff,
                bound: parse_rational(bound).ok_or_else(|| HarnessError::Config(format!("bad bound {bound}")))?,
                after: *after,
            },
            EventConfig::GadgetMistake => EventSpec::GadgetMistake,
            EventConfig::NoBadEventThrough { gadget } => EventSpec::NoBadEventThrough(*gadget),
            EventConfig::SinkFreeThrough { gadget } => EventSpec::SinkFreeThrough(*gadget),
            EventConfig::Always => EventSpec::Always,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumMode {
    #[default]
    Float,
    Rational,
}

impl std::str::FromStr for NumMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(NumMode::Float),
            "rational" => Ok(NumMode::Rational),
            _ => Err(HarnessError::Config(format!("mode must be float or rational, got {s:?}"))),
        }
    }
}

fn default_z() -> f64 {
    1.96
}

/// One `simulate` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    /// Optional start label replacing the family's initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    pub strategy: StrategySpec,
    pub event: EventConfig,
    pub episodes: u64,
    pub horizon: u64,
    pub master_seed: u64,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub mode: NumMode,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes must be ≥ 1".into()));
        }
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be ≥ 1".into()));
        }
        if !(self.z >= 0.0) {
            return Err(HarnessError::Config("z must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            episodes: self.episodes,
            horizon: self.horizon,
            master_seed: self.master_seed,
            z: self.z,
            workers: self.workers,
        }
    }

    fn schedule(&self) -> Result<Arc<ParamSchedule>, HarnessError> {
        let spec = self.schedule.clone().unwrap_or(ScheduleSpec::Preset("quadratic".into()));
        Ok(Arc::new(spec.build()?))
    }

    /// Family (possibly re-rooted) and strategy.
    pub fn instantiate(&self) -> Result<(SharedMdp, Arc<dyn Strategy>), HarnessError> {
        let kind: FamilyKind = self.family.parse()?;
        let sch = self.schedule()?;
        let fam = build(kind, sch.clone(), self.mode == NumMode::Rational)?;
        let mdp: SharedMdp = match &self.root {
            Some(r) => {
                let root: StateRef = r.parse().map_err(|_| HarnessError::Config(format!("bad root label {r}")))?;
                fam.mdp.successors(&root)?;
                Arc::new(rooted(fam.mdp.clone(), root))
            }
            None => fam.mdp.clone(),
        };
        let strategy = build_strategy(&self.strategy, kind, sch)?;
        Ok((mdp, strategy))
    }

    /// Runs the experiment and returns its JSONL row.
    pub fn run(&self) -> Result<EstimateRow, HarnessError> {
        let (mdp, strategy) = self.instantiate()?;
        let event = self.event.to_event()?;
        let est = estimate_event(&*mdp, &*strategy, &event, &self.sim())?;
        let params = serde_json::to_value(&self.strategy).unwrap_or(Value::Null);
        Ok(EstimateRow::new(&self.experiment, &self.family, &strategy.name(), params, &event, &est))
    }
}

pub fn build_strategy(spec: &StrategySpec, kind: FamilyKind, sch: Arc<ParamSchedule>) -> Result<Arc<dyn Strategy>, HarnessError> {
    use StrategySpec::*;
    Ok(match spec {
        Mimic => Arc::new(strategy::mimic_strategy(kind, sch)),
        SkipThenMimic { n } => Arc::new(strategy::skip_then_mimic(kind, sch, *n)?),
        SkipThenMimicEps { eps } => {
            let n = n_epsilon(&sch, *eps).ok_or_else(|| HarnessError::Config("schedule has no certified tail".into()))?;
            Arc::new(strategy::skip_then_mimic(kind, sch, n)?)
        }
        RestartConcat => Arc::new(strategy::restart_concat_strategy(kind, sch)?),
        SkipForever => Arc::new(strategy::skip_forever(kind, sch)),
        ConfusedFr { k, alpha } => {
            let a = *alpha;
            Arc::new(strategy::confused_fr_adversary(kind, sch, *k, move |_| a))
        }
        RandomFr { k, seed } => Arc::new(strategy::random_fr_strategy(*k, *seed)),
        FixedBranch { i } => Arc::new(strategy::fixed_branch(*i)),
        IncreasingBranch => Arc::new(strategy::IncreasingBranch),
        LoopSchedule { base } => {
            let b = *base;
            Arc::new(strategy::loop_schedule(&format!("loop({b}^k)"), move |k| b.saturating_pow(k as u32)))
        }
        StuckAt { k } => Arc::new(strategy::stuck_at(*k)),
    })
}

/// One PASS/FAIL line of a scenario.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub claim: String,
    pub tolerance: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, claim: &str, tolerance: &str, passed: bool, detail: String) -> Check {
        Check { name: name.into(), claim: claim.into(), tolerance: tolerance.into(), passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} | {} | tol {} | {}", self.name, self.claim, self.tolerance, self.detail)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub claim: String,
    pub checks: Vec<Check>,
    pub rows: Vec<EstimateRow>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn jsonl(&self) -> String {
        let mut buf = Vec::new();
        crate::montecarlo::write_jsonl(&mut buf, &self.rows).expect("in-memory write");
        String::from_utf8(buf).expect("utf8 json")
    }

    pub fn csv(&self) -> String {
        let mut buf = Vec::new();
        crate::montecarlo::write_csv(&mut buf, &self.rows).expect("in-memory write");
        String::from_utf8(buf).expect("utf8 csv")
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub seed: u64,
    /// Overrides the scenario's episode count.
    pub episodes: Option<u64>,
    pub horizon: Option<u64>,
    pub workers: usize,
    pub z: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options { seed: 7, episodes: None, horizon: None, workers: 0, z: 1.96 }
    }
}

impl Options {
    fn sim(&self, salt: u64, episodes: u64, horizon: u64) -> SimConfig {
        SimConfig {
            episodes: self.episodes.unwrap_or(episodes),
            horizon: self.horizon.unwrap_or(horizon),
            master_seed: episode_seed(self.seed, salt),
            z: self.z,
            workers: self.workers,
        }
    }
}

pub const SCENARIOS: [&str; 8] = [
    "thm7-decay",
    "thm9-restart",
    "thm10-infbranch",
    "lemma4-survival",
    "lemma6-restarts",
    "thm23-pipeline",
    "puterman",
    "appE-binarize",
];

pub fn run_scenario(name: &str, opts: &Options) -> Result<ScenarioReport, HarnessError> {
    match name {
        "thm7-decay" => fr_decay(opts),
        "thm9-restart" => fr_restart(opts),
        "thm10-infbranch" => inf_branch(opts),
        "lemma4-survival" => survival(opts),
        "lemma6-restarts" => restarts(opts),
        "thm23-pipeline" => pipeline(opts),
        "puterman" => puterman(opts),
        "appE-binarize" => binarize(opts),
        _ => Err(HarnessError::UnknownScenario(name.into())),
    }
}

fn report(scenario: &str, claim: &str, checks: Vec<Check>, rows: Vec<EstimateRow>) -> ScenarioReport {
    ScenarioReport { scenario: scenario.into(), claim: claim.into(), checks, rows }
}

fn preset(name: &str) -> Result<Arc<ParamSchedule>, HarnessError> {
    Ok(Arc::new(ParamSchedule::preset(name)?))
}

fn survival(opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "lemma4-survival";
    let sch = preset("quadratic")?;
    let fam = build(FamilyKind::Chain, sch.clone(), false)?;
    let g = 50;
    let mut rows = Vec::new();
    let mut checks = Vec::new();

    let mimic = strategy::mimic_strategy(FamilyKind::Chain, sch.clone());
    let ev = EventSpec::SinkFreeThrough(g);
    let cfg = opts.sim(1, 100_000, 4 * g as u64 + 50);
    let est = estimate_event(&*fam.mdp, &mimic, &ev, &cfg)?;
    let sp = survival_product(&sch, sch.nstar, Some(g));
    rows.push(EstimateRow::new(NAME, "chain", &mimic.name(), json!({"schedule": "quadratic", "G": g}), &ev, &est));
    checks.push(Check::new(
        "mimic-survival",
        "mimic never hits the sink through G gadgets with the survival product's probability",
        &format!("Wilson CI, z={}", opts.z),
        est.ci_low - sp.error <= sp.value && sp.value <= est.ci_high + sp.error && est.undetermined == 0,
        format!(
            "p_hat={:.5} CI=[{:.5},{:.5}] product={:.5} episodes={}",
            est.p_hat, est.ci_low, est.ci_high, sp.value, est.episodes
        ),
    ));

    let eps = 0.01;
    let n = n_epsilon(&sch, eps).ok_or_else(|| HarnessError::Config("no certified tail".into()))?;
    let skip = strategy::skip_then_mimic(FamilyKind::Chain, sch.clone(), n)?;
    let ev = EventSpec::SinkFreeThrough(n + g);
    let cfg = opts.sim(2, 100_000, 4 * (n + g) as u64 + 50);
    let est = estimate_event(&*fam.mdp, &skip, &ev, &cfg)?;
    let tail = tail_survival_lower(&sch, n + g + 1).unwrap_or(0.0);
    let attained = est.p_hat * tail;
    rows.push(EstimateRow::new(NAME, "chain", &skip.name(), json!({"schedule": "quadratic", "N": n, "eps": eps}), &ev, &est));
    checks.push(Check::new(
        "skip-then-mimic-attainment",
        "skipping to N_eps and mimicking attains at least 1-eps",
        "0.99 minus CI half-width",
        attained >= 1.0 - eps - est.half_width(),
        format!(
            "N_eps={n} p_hat(sink-free through {})={:.5} x certified tail {:.6} = {:.5}; half-width {:.5}",
            n + g,
            est.p_hat,
            tail,
            attained,
            est.half_width()
        ),
    ));
    Ok(report(NAME, "mimic survival matches the survival product; skip-then-mimic is (1-eps)-optimal", checks, rows))
}

fn fr_decay(opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "thm7-decay";
    let sch = preset("linear")?;
    let fam = build(FamilyKind::Chain, sch.clone(), false)?;
    let root = StateRef::ints("s", &[sch.nstar]);
    let mdp = rooted(fam.mdp.clone(), root);
    let gmax = 80;
    let events: Vec<EventSpec> = (1..=gmax).map(EventSpec::NoBadEventThrough).collect();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (idx, k) in [1u32, 2, 4].into_iter().enumerate() {
        let st = strategy::random_fr_strategy(k, opts.seed ^ 0xF00D);
        let cfg = opts.sim(10 + idx as u64, 10_000, 4 * gmax as u64 + 40);
        let est = estimate_events(&mdp, &st, &events, &cfg)?;
        let mut worst: Option<(i64, f64, f64)> = None;
        let mut all_ok = true;
        let mut below = None;
        for (g, e) in (1..=gmax).zip(&est) {
            let bound = fr_decay_bound(&sch, k, g);
            if e.p_hat > bound + e.half_width() || e.undetermined > 0 {
                all_ok = false;
                worst.get_or_insert((g, e.p_hat, bound));
            }
            if below.is_none() && e.p_hat < 0.1 {
                below = Some(g);
            }
            rows.push(EstimateRow::new(
                NAME,
                "chain",
                &st.name(),
                json!({"schedule": "linear", "k": k, "G": g, "bound": bound}),
                &events[g as usize - 1],
                e,
            ));
        }
        checks.push(Check::new(
            &format!("fr{k}-below-bound"),
            "FR(k) no-bad-event probability never exceeds the decay bound",
            "bound plus CI half-width, all G<=80",
            all_ok,
            match worst {
                Some((g, p, b)) => format!("violated at G={g}: p_hat={p:.5} bound={b:.5}"),
                None => format!("G=80: p_hat={:.5} bound={:.5}", est[gmax as usize - 1].p_hat, fr_decay_bound(&sch, k, gmax)),
            },
        ));
        checks.push(Check::new(
            &format!("fr{k}-decays"),
            "the FR(k) estimate falls below 0.1 within 80 gadgets",
            "exact threshold 0.1",
            below.is_some(),
            format!("first G with p_hat<0.1: {below:?}"),
        ));
    }
    Ok(report(NAME, "finite-memory strategies lose with probability tending to one", checks, rows))
}

/// Tail risk after the settle gadget bounds the restart histogram's bias.
fn restarts(opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "lemma6-restarts";
    let sch = preset("quadratic")?;
    let fam = build(FamilyKind::Restart, sch.clone(), false)?;
    let st = strategy::restart_concat_strategy(FamilyKind::Restart, sch.clone())?;
    let settle = 60;
    let slack = sch.risk_tail_bound(settle + 1).unwrap_or(1.0);
    let events: Vec<EventSpec> = (1..=6).map(|i| EventSpec::RestartCountAtLeast { count: i, settle }).collect();
    let est = estimate_events(&*fam.mdp, &st, &events, &opts.sim(20, 100_000, 1_000_000))?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (i, e) in (1..=6).zip(&est) {
        let bound = 0.5f64.powi(i);
        rows.push(EstimateRow::new(NAME, "restart", &st.name(), json!({"schedule": "quadratic", "i": i, "settle": settle}), &events[i as usize - 1], e));
        checks.push(Check::new(
            &format!("restarts>={i}"),
            "concatenated half-optimal rows restart at least i times with probability at most 2^-i",
            "2^-i plus CI half-width; estimate padded by the post-settle tail risk",
            e.p_hat + slack <= bound + e.half_width() && e.undetermined == 0,
            format!("p_hat={:.5} + tail {:.5} vs 2^-{i}={bound:.5} (hw {:.5})", e.p_hat, slack, e.half_width()),
        ));
    }
    Ok(report(NAME, "restart counts decay geometrically under row-wise half-optimal play", checks, rows))
}

fn fr_restart(opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "thm9-restart";
    let sch = preset("dichotomy4")?;
    let fam = build(FamilyKind::Restart, sch.clone(), false)?;
    let ns = sch.nstar;
    let mdp = rooted(fam.mdp.clone(), StateRef::ints("s", &[0, ns, ns]));
    let g = 40;
    let bound = fr_decay_bound(&sch, 2, g);
    let ev = EventSpec::NoBadEventThrough(g);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (idx, seed) in [opts.seed, opts.seed + 1, opts.seed + 2].into_iter().enumerate() {
        let st = strategy::random_fr_strategy(2, seed);
        let est = estimate_event(&mdp, &st, &ev, &opts.sim(30 + idx as u64, 10_000, 4 * g as u64 + 40))?;
        rows.push(EstimateRow::new(NAME, "restart", &st.name(), json!({"schedule": "dichotomy4", "G": g, "bound": bound}), &ev, &est));
        let bad = 1.0 - est.p_hat;
        checks.push(Check::new(
            &format!("fr2-seed{seed}-row-risk"),
            "a fixed FR(2) strategy restarts or dips within a row at least as often as the analysis bound",
            "1-bound minus CI half-width",
            bad >= 1.0 - bound - est.half_width() && est.undetermined == 0,
            format!("P(restart or dip by G={g})={bad:.5} vs 1-bound={:.5}", 1.0 - bound),
        ));
    }
    Ok(report(NAME, "finite memory cannot avoid per-row restarts or dips", checks, rows))
}

fn inf_branch(opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "thm10-infbranch";
    let fam = build(FamilyKind::InfBranch, preset("quadratic")?, false)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let ev = EventSpec::AvoidWithin("t".into());
    let v = 8;
    for i in 1..=6u64 {
        let st = strategy::fixed_branch(i);
        let est = estimate_event(&*fam.mdp, &st, &ev, &opts.sim(40 + i, 100_000, 2 * v))?;
        let exact = (1.0 - 0.5f64.powi(i as i32)).powi(v as i32);
        rows.push(EstimateRow::new(NAME, "inf-branch", &format!("fixed-branch({i})"), json!({"i": i, "V": v, "exact": exact}), &ev, &est));
        checks.push(Check::new(
            &format!("fixed-branch-{i}"),
            "MD survival over V epochs is (1-2^-i)^V",
            &format!("Wilson CI, z={}", opts.z),
            est.ci_low <= exact && exact <= est.ci_high,
            format!("p_hat={:.5} CI=[{:.5},{:.5}] exact={exact:.5}", est.p_hat, est.ci_low, est.ci_high),
        ));
    }
    let epochs = 20u64;
    let st = strategy::IncreasingBranch;
    let est = estimate_event(&*fam.mdp, &st, &ev, &opts.sim(47, 100_000, 2 * epochs))?;
    let exact = crate::analysis::exact_product(
        |k| BigRational::new(BigInt::one(), BigInt::one() << k as usize),
        1,
        epochs,
    );
    let exact_f = rat_to_f64(&exact);
    rows.push(EstimateRow::new(NAME, "inf-branch", &st.name(), json!({"epochs": epochs, "exact": exact_f}), &ev, &est));
    checks.push(Check::new(
        "increasing-branch",
        "switching to ever safer branches survives with the infinite product",
        &format!("Wilson CI, z={}", opts.z),
        est.ci_low <= exact_f && exact_f <= est.ci_high,
        format!("p_hat={:.5} CI=[{:.5},{:.5}] exact product through {epochs}={exact_f:.6}", est.p_hat, est.ci_low, est.ci_high),
    ));
    Ok(report(NAME, "no MD strategy is optimal under infinite branching; a counting strategy is", checks, rows))
}

fn pipeline(opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "thm23-pipeline";
    let fam = solver::test_family("ladder").expect("registered");
    let b = solver::bubble(&fam, &fam.initial(), 1000, 100_000)?;
    let m = solver::truncate(&fam, &b, Boundary::Pessimistic)?;
    let eps = BigRational::new(BigInt::from(1), BigInt::from(20));
    let cfg = PipelineConfig { seed: opts.seed, episodes: opts.episodes.unwrap_or(2000), ..Default::default() };
    let res = solver::eps_opt_md_pipeline(&m, &eps, &cfg);
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    match &res {
        Ok(r) => {
            rows.push(EstimateRow {
                experiment: NAME.into(),
                family: fam.name(),
                strategy: "pipeline-md".into(),
                params: json!({"eps": "1/20", "radii": r.radii, "states": m.len(), "value": r.value_f64}),
                event: "point-payoff-liminf>=0".into(),
                episodes: cfg.episodes,
                horizon: 0,
                p_hat: r.attainment_f64,
                ci_low: r.attainment_f64,
                ci_high: r.attainment_f64,
                undetermined: 0.0,
                master_seed: cfg.seed,
                runtime_ms: 0,
            });
            let three = BigRational::from_integer(BigInt::from(3));
            checks.push(Check::new(
                "pipeline-certificate",
                "the synthesized MD strategy is 3eps-optimal",
                "exact rational comparison, eps=1/20",
                r.attainment.clone() + &eps * three >= r.value && (50..=500).contains(&m.len()),
                format!("states={} value={} attainment={} radii={:?}", m.len(), r.value, r.attainment, r.radii),
            ));
        }
        Err(e) => checks.push(Check::new("pipeline-certificate", "the synthesized MD strategy is 3eps-optimal", "exact", false, e.to_string())),
    }
    Ok(report(NAME, "eps-optimal MD strategies exist for point payoff on finitely branching MDPs", checks, rows))
}

/// Second-order Richardson extrapolation of phase-end means m_k ≈ L + a/k + b/k².
pub fn richardson2(means: &[BigRational]) -> Vec<BigRational> {
    (2..means.len())
        .map(|i| {
            let k = BigRational::from_integer(BigInt::from(i as i64 + 1));
            let one = BigRational::one();
            let two = &one + &one;
            let (a, b, c) = (&means[i], &means[i - 1], &means[i - 2]);
            let k1 = &k - &one;
            let k2 = &k - &two;
            (&k * &k * a - &two * &k1 * &k1 * b + &k2 * &k2 * c) / &two
        })
        .collect()
}

fn puterman(_opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "puterman";
    let horizon = BigInt::from(10_000_000u64);
    let traj = LoopTrajectory::new(|k| BigInt::from(4).pow(k as u32), &horizon);
    let means = traj.means();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let kth = |k: i64| -BigRational::new(BigInt::one(), BigInt::from(k));

    // literal reading: the running mean right after leaving s_k is ≥ −1/k
    let literal: Vec<(i64, f64)> = traj
        .phase_ends
        .iter()
        .zip(&means)
        .filter(|((k, _, _), m)| **m < kth(*k))
        .map(|((k, _, _), m)| (*k, rat_to_f64(m)))
        .collect();
    checks.push(Check::new(
        "mean-after-leaving",
        "loop schedule 4^k keeps the running mean >= -1/k once s_k is left",
        "exact rational comparison",
        literal.is_empty(),
        if literal.is_empty() {
            "holds at every phase end".into()
        } else {
            format!("violated at the move out of s_k for k in {:?}", literal.iter().map(|x| x.0).collect::<Vec<_>>())
        },
    ));

    // from the end of the following phase on, the bound holds at every step
    let next_ok = (1..traj.phase_ends.len()).all(|idx| {
        let k = traj.phase_ends[idx - 1].0;
        (idx..traj.phase_ends.len()).all(|j| traj.min_mean_in_phase(j + 1).map_or(true, |m| m >= kth(k)) && means[j] >= kth(k))
    });
    checks.push(Check::new(
        "mean-one-phase-later",
        "from the end of phase k+1 on the running mean stays >= -1/k",
        "exact rational comparison",
        next_ok,
        format!("phases={} horizon=1e7", traj.phase_ends.len()),
    ));

    let rich = richardson2(&means);
    let tail: Vec<f64> = rich.iter().rev().take(3).rev().map(rat_to_f64).collect();
    let monotone = tail.windows(2).all(|w| w[0] <= w[1]);
    let last = tail.last().copied().unwrap_or(f64::NEG_INFINITY);
    checks.push(Check::new(
        "liminf-extrapolation",
        "the extrapolated liminf of the running mean is >= -0.01 by horizon 1e7",
        "-1e-2, monotone over the last three extrapolants",
        monotone && last >= -1e-2,
        format!("extrapolants {tail:?}"),
    ));

    // an MD strategy either moves on forever (mean -> -1) or loops forever in some s_k
    let t = 20_000u64;
    let mut stuck_detail = Vec::new();
    let mut stuck_ok = true;
    let fam = crate::constructions::Puterman;
    for k in 1..=6i64 {
        let run = run_episode_until(&fam, &strategy::stuck_at(k), t, 0, false, |_, _| false)?.run;
        let total = run.rewards.iter().fold(BigRational::zero(), |acc, r| acc + r);
        let mean = total / BigRational::from_integer(BigInt::from(t));
        // k-1 moves at -1, then loops at -1/k
        let gap = BigRational::new(BigInt::from((k - 1) * (k - 1)), BigInt::from(k) * BigInt::from(t));
        stuck_ok &= mean == kth(k) - gap && kth(k).is_negative();
        stuck_detail.push(format!("k={k}: {:.6}", rat_to_f64(&mean)));
    }
    checks.push(Check::new(
        "md-stuck",
        "every MD strategy has mean payoff tending to -1/k_stuck < 0",
        "exact; mean = -1/k - (k-1)^2/(k t)",
        stuck_ok,
        format!("t={t}, {}", stuck_detail.join(", ")),
    ));

    for ((k, n, total), m) in traj.phase_ends.iter().zip(&means) {
        rows.push(EstimateRow {
            experiment: NAME.into(),
            family: "puterman".into(),
            strategy: "loop(4^k)".into(),
            params: json!({"k": k, "steps": n.to_string(), "total": total.to_string()}),
            event: "running-mean".into(),
            episodes: 1,
            horizon: n.try_into().unwrap_or(u64::MAX),
            p_hat: rat_to_f64(m),
            ci_low: rat_to_f64(m),
            ci_high: rat_to_f64(m),
            undetermined: 0.0,
            master_seed: 0,
            runtime_ms: 0,
        });
    }
    Ok(report(NAME, "loop schedules beat every MD strategy on the loop chain", checks, rows))
}

/// Out-degree and reward alphabet over a breadth-first region.
pub fn degree_and_alphabet(mdp: &dyn LazyMdp, depth: usize, cap: usize) -> Result<(usize, BTreeSet<BigRational>, usize), HarnessError> {
    let states = reachable(mdp, depth, cap)?;
    let mut max_deg = 0;
    let mut alphabet = BTreeSet::new();
    for s in &states {
        let succ = mdp.successors(s)?;
        let ts = succ.targets(usize::MAX);
        max_deg = max_deg.max(ts.len());
        for t in &ts {
            alphabet.insert(mdp.reward(s, t)?);
        }
    }
    Ok((max_deg, alphabet, states.len()))
}

fn binarize(_opts: &Options) -> Result<ScenarioReport, HarnessError> {
    const NAME: &str = "appE-binarize";
    let sch = preset("const2")?;
    let chain = ChainFamily::new(sch.clone(), false, true);
    let bchain = BinChain::new(sch.clone(), true)?;
    let ri = RewardImplicit::new(sch.clone(), false, true);
    let bri = BinRi::new(sch.clone(), true);
    let mut checks = Vec::new();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for n in sch.nstar..=4 {
        let k = sch.k(n)? as i64;
        for j in 0..=k {
            compared += 2;
            if chain_gadget_law(&chain, n, j)? != bchain.gadget_law(n, j)? {
                mismatches.push(format!("chain n={n} j={j}"));
            }
            if ri_gadget_law(&ri, n, j)? != bri.gadget_law(n, j)? {
                mismatches.push(format!("reward-implicit n={n} j={j}"));
            }
        }
    }
    checks.push(Check::new(
        "gadget-laws",
        "binarization preserves each gadget's (branch, net reward, sink) law",
        "exact rational equality",
        mismatches.is_empty(),
        format!("{compared} laws compared; mismatches: {mismatches:?}"),
    ));
    let unit: BTreeSet<BigRational> = [-1, 0, 1].into_iter().map(|x| BigRational::from_integer(BigInt::from(x))).collect();
    let bchain: SharedMdp = Arc::new(bchain);
    let bri: SharedMdp = Arc::new(bri);
    let roots = |ri: bool| -> Vec<StateRef> {
        (sch.nstar..=4).map(|n| if ri { StateRef::ints("s", &[n, 0]) } else { StateRef::ints("s", &[n]) }).collect()
    };
    for (label, mdp, ri) in [("binarized:chain", &bchain, false), ("binarized:reward-implicit", &bri, true)] {
        // the lanes are walked from the start state; gadget interiors from each gadget entry
        let (mut deg, mut alphabet, mut seen) = degree_and_alphabet(&**mdp, 24, 50_000)?;
        for r in roots(ri) {
            let (d, a, n) = degree_and_alphabet(&rooted(mdp.clone(), r), 150, 50_000)?;
            deg = deg.max(d);
            alphabet.extend(a);
            seen += n;
        }
        checks.push(Check::new(
            &format!("{label}-shape"),
            "binarized families have out-degree <= 2 and rewards in {-1,0,1}",
            "exact",
            deg <= 2 && alphabet.is_subset(&unit),
            format!(
                "states={seen} max out-degree={deg} rewards={:?}",
                alphabet.iter().map(|r| r.to_string()).collect::<Vec<_>>()
            ),
        ));
    }
    Ok(report(NAME, "unit rewards and binary branching suffice for the lower bounds", checks, Vec::new()))
}

/// Coupled-seed comparison of a base run and its encoded twin: projected
/// states agree, and the encoded point payoffs equal the base total (R) or
/// mean (A) payoffs; S labels carry the step index.
pub fn coupled_check(encoding: Encoding, family: &str, schedule: &str, episodes: u64, horizon: u64, seed: u64) -> Result<Check, HarnessError> {
    let kind: FamilyKind = family.parse()?;
    let sch = preset(schedule)?;
    let fam = build(kind, sch, false)?;
    let base = fam.mdp.clone();
    let enc = encode(encoding, base.clone(), base.initial());
    let mut failures = Vec::new();
    let mut steps = 0u64;
    for e in 0..episodes {
        let s = episode_seed(seed, e);
        let st = strategy::random_fr_strategy(2, seed ^ 0xC0DE);
        let a = run_episode_until(&*base, &st, horizon, s, false, |_, _| false)?.run;
        let b = run_episode_until(&enc, &lift(st.clone()), horizon, s, false, |_, _| false)?.run;
        steps += a.steps;
        let same_states = a.states.len() == b.states.len() && a.states.iter().zip(&b.states).all(|(x, y)| x == project(y));
        let ok = same_states
            && match encoding {
                Encoding::R => sequence_of(&a.rewards, PayoffKind::TotalPayoff) == b.rewards,
                Encoding::A => sequence_of(&a.rewards, PayoffKind::MeanPayoff) == b.rewards,
                Encoding::S => {
                    a.rewards == b.rewards
                        && b.states.iter().enumerate().all(|(i, y)| y.as_encoded().and_then(|x| x.step) == Some(i as u64))
                }
            };
        if !ok && failures.len() < 3 {
            failures.push(e);
        }
    }
    let what = match encoding {
        Encoding::R => "point payoffs in R(M) equal total payoffs in M",
        Encoding::S => "the S(M) step component equals the step index",
        Encoding::A => "point payoffs in A(M) equal mean payoffs in M",
    };
    Ok(Check::new(
        &format!("coupled-{encoding}"),
        what,
        "bit-exact",
        failures.is_empty(),
        format!("{episodes} coupled episodes, {steps} steps on {family}; failing episodes {failures:?}"),
    ))
}

/// Analysis verdicts for a schedule, as emitted by the `series` command.
pub fn series_report(schedule: &str, k: u32, g: i64) -> Result<Value, HarnessError> {
    let sch = Arc::new(ScheduleSpec::Preset(schedule.into()).build()?);
    let report = sch.validity_report(g.max(sch.nstar));
    let sp = survival_product(&sch, sch.nstar, Some(g));
    let neps: Vec<Value> = [0.5, 0.1, 0.01]
        .iter()
        .map(|&e| json!({"eps": e, "n": n_epsilon(&sch, e)}))
        .collect();
    let decay: Vec<Value> = (sch.nstar..=g)
        .step_by(((g - sch.nstar) / 10).max(1) as usize)
        .map(|n| json!({"G": n, "fr_decay_bound": fr_decay_bound(&sch, k, n), "local_error_sum": local_error_sum(&sch, k, n)}))
        .collect();
    let risk = crate::analysis::condensation_classify(|x| sch.risk(x.round().max(sch.nstar as f64) as i64), 12);
    Ok(json!({
        "schedule": sch.name(),
        "nstar": sch.nstar,
        "validity": report,
        "survival_product": sp,
        "tail_survival_lower": tail_survival_lower(&sch, sch.nstar),
        "n_epsilon": neps,
        "fr": {"k": k, "decay": decay},
        "risk_series": risk,
    }))
}

/// Wilson interval as JSON, for quick CLI use.
pub fn wilson_json(successes: u64, trials: u64, z: f64) -> Value {
    let (lo, hi) = wilson_interval(successes, trials, z);
    json!({"low": lo, "high": hi})
}

/// Value of a finite MDP's initial state when the boundary sink is positive.
pub fn signed(x: &BigRational) -> bool {
    !x.is_negative() && !x.is_zero()
}
