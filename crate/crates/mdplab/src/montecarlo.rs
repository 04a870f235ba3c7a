//! Reproducible episode simulation and event-probability estimation.
//!
//! Every uniform draw is a pure function of (episode seed, position), so an
//! episode does not depend on scheduling and coupled runs on related MDPs
//! consume identical draw streams.

use std::fmt;
use std::io;
use std::sync::Arc;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::analysis::wilson_interval;
use crate::label::StateRef;
use crate::mdp::{EventKind, LazyMdp};
use crate::payoff::{sequence_of, PayoffKind};
use crate::run::RunRecord;
use crate::strategy::{decide, Mode, Strategy, StrategyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("episodes must be at least 1")]
    NoEpisodes,
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("output: {0}")]
    Output(String),
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn episode_seed(master: u64, episode: u64) -> u64 {
    mix(master ^ mix(episode.wrapping_add(GOLDEN)))
}

/// Uniform in [0,1) for draw `t` of the stream `seed`.
pub fn draw(seed: u64, t: u64) -> f64 {
    let x = mix(seed.wrapping_add(t.wrapping_add(1).wrapping_mul(GOLDEN)));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub run: RunRecord,
    /// Mode before each step and after the last one.
    pub modes: Vec<Mode>,
    pub tail_truncations: u64,
}

/// Simulates up to `horizon` steps, stopping early on entry into a losing
/// sink or when `stop` holds.
pub fn run_episode_until(
    mdp: &dyn LazyMdp,
    strategy: &dyn Strategy,
    horizon: u64,
    seed: u64,
    trace_modes: bool,
    mut stop: impl FnMut(&RunRecord, bool) -> bool,
) -> Result<Episode, SimError> {
    if horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let mut run = RunRecord::new(mdp.initial());
    let mut monitor = mdp.monitor();
    let mut mode = strategy.initial_mode();
    let mut modes = Vec::new();
    let mut truncations = 0;
    for t in 0..horizon {
        if trace_modes {
            modes.push(mode.clone());
        }
        let s = run.last().clone();
        let d = decide(mdp, strategy, &mode, &s, draw(seed, t))?;
        truncations += d.tail_truncated as u64;
        let before = run.events.len();
        monitor.observe(&s, &d.target, t + 1, &mut run.events);
        let sink = mdp.is_losing_sink(&d.target);
        run.push(d.target, d.reward);
        mode = d.mode;
        if sink {
            run.absorbed = true;
            break;
        }
        if stop(&run, run.events.len() != before) {
            break;
        }
    }
    if trace_modes {
        modes.push(mode);
    }
    Ok(Episode { run, modes, tail_truncations: truncations })
}

pub fn run_episode(mdp: &dyn LazyMdp, strategy: &dyn Strategy, horizon: u64, seed: u64) -> Result<RunRecord, SimError> {
    Ok(run_episode_until(mdp, strategy, horizon, seed, false, |_, _| false)?.run)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    True,
    False,
    Undetermined,
}

pub type RunPredicate = Arc<dyn Fn(&RunRecord) -> Outcome + Send + Sync>;

/// Pure predicates on run prefixes.
#[derive(Clone)]
pub enum EventSpec {
    /// Visits a state whose template is the given name.
    HitState(String),
    /// Enters the flagged losing sink.
    HitSink,
    /// Never visits the named state within the horizon.
    AvoidWithin(String),
    /// At least `count` restarts; false once the current row has completed
    /// gadget `settle` with fewer.
    RestartCountAtLeast { count: u64, settle: i64 },
    /// Some payoff ≤ `bound` at a step ≥ `after`.
    DipBelow { kind: PayoffKind, bound: BigRational, after: u64 },
    /// Some controlled branch exceeded the observed branch.
    GadgetMistake,
    /// No sink, restart or mistake before completing gadget G.
    NoBadEventThrough(i64),
    /// No sink or restart before completing gadget G.
    SinkFreeThrough(i64),
    Custom { name: String, pred: RunPredicate },
    Always,
}

impl fmt::Display for EventSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventSpec::HitState(s) => write!(f, "hit({s})"),
            EventSpec::HitSink => write!(f, "hit-sink"),
            EventSpec::AvoidWithin(s) => write!(f, "avoid({s})"),
            EventSpec::RestartCountAtLeast { count, settle } => write!(f, "restarts>={count}@{settle}"),
            EventSpec::DipBelow { kind, bound, after } => write!(f, "dip({kind:?}<={bound},after={after})"),
            EventSpec::GadgetMistake => write!(f, "gadget-mistake"),
            EventSpec::NoBadEventThrough(g) => write!(f, "no-bad-through({g})"),
            EventSpec::SinkFreeThrough(g) => write!(f, "sink-free-through({g})"),
            EventSpec::Custom { name, .. } => write!(f, "{name}"),
            EventSpec::Always => write!(f, "always"),
        }
    }
}

/// First of: gadget `g` completed (true) or a bad event before it (false).
/// Bad events are sinks, restarts and, with `mistakes`, gadget mistakes.
fn first_decisive(run: &RunRecord, g: i64, mistakes: bool) -> Option<bool> {
    run.events.iter().find_map(|e| match e.kind {
        EventKind::GadgetDone { gadget } if gadget >= g => Some(true),
        EventKind::Sink | EventKind::Restart { .. } => Some(false),
        EventKind::Mistake { gadget, .. } if mistakes && gadget <= g => Some(false),
        _ => None,
    })
}

impl EventSpec {
    /// Outcome on a prefix. `finished` marks the end of the horizon.
    pub fn evaluate(&self, run: &RunRecord, finished: bool) -> Outcome {
        use Outcome::*;
        let b = |x: bool| if x { True } else { False };
        match self {
            EventSpec::Always => True,
            EventSpec::HitState(name) => {
                if run.states.iter().any(|s| s.template() == name) {
                    True
                } else if run.absorbed {
                    False
                } else {
                    Undetermined
                }
            }
            EventSpec::HitSink => {
                if run.sink_step().is_some() {
                    True
                } else {
                    Undetermined
                }
            }
            EventSpec::AvoidWithin(name) => {
                if run.states.iter().any(|s| s.template() == name) {
                    False
                } else if finished || run.absorbed {
                    True
                } else {
                    Undetermined
                }
            }
            EventSpec::RestartCountAtLeast { count, settle } => {
                let restarts = run.restarts();
                if restarts >= *count {
                    return True;
                }
                let last_restart = run.events.iter().rposition(|e| matches!(e.kind, EventKind::Restart { .. }));
                let tail = &run.events[last_restart.map_or(0, |i| i + 1)..];
                let settled = tail.iter().any(|e| matches!(e.kind, EventKind::GadgetDone { gadget } if gadget >= *settle));
                if settled {
                    False
                } else {
                    Undetermined
                }
            }
            EventSpec::DipBelow { kind, bound, after } => {
                if run.rewards.is_empty() {
                    return Undetermined;
                }
                let seq = sequence_of(&run.rewards, *kind);
                let hit = seq.iter().enumerate().any(|(i, v)| i as u64 + 1 >= *after && v <= bound);
                if hit {
                    True
                } else if run.absorbed {
                    // the sink keeps every payoff at or below −1 eventually
                    b(bound >= &BigRational::from_integer((-1).into()))
                } else {
                    Undetermined
                }
            }
            EventSpec::GadgetMistake => {
                if run.events.iter().any(|e| matches!(e.kind, EventKind::Mistake { .. })) {
                    True
                } else {
                    Undetermined
                }
            }
            EventSpec::NoBadEventThrough(g) | EventSpec::SinkFreeThrough(g) => {
                let mistakes = matches!(self, EventSpec::NoBadEventThrough(_));
                match first_decisive(run, *g, mistakes) {
                    Some(x) => b(x),
                    None if run.absorbed => False,
                    None => Undetermined,
                }
            }
            EventSpec::Custom { pred, .. } => {
                if finished || run.absorbed {
                    pred(run)
                } else {
                    Undetermined
                }
            }
        }
    }

    /// Whether the outcome can change on steps that raise no event.
    fn needs_every_step(&self) -> bool {
        matches!(self, EventSpec::HitState(_) | EventSpec::AvoidWithin(_) | EventSpec::DipBelow { .. })
    }

    fn early(&self, run: &RunRecord, new_events: bool) -> bool {
        match self {
            EventSpec::Custom { .. } => false,
            EventSpec::HitState(name) | EventSpec::AvoidWithin(name) => run.last().template() == name,
            EventSpec::DipBelow { kind, bound, after } => {
                // only the newest payoff can newly cross the bound
                run.steps >= *after && last_payoff(run, *kind) <= *bound
            }
            _ if self.needs_every_step() || new_events => self.evaluate(run, false) != Outcome::Undetermined,
            _ => false,
        }
    }
}

fn last_payoff(run: &RunRecord, kind: PayoffKind) -> BigRational {
    match kind {
        PayoffKind::PointPayoff => run.rewards.last().cloned().unwrap_or_default(),
        PayoffKind::TotalPayoff => run.total_reward.clone(),
        PayoffKind::MeanPayoff => &run.total_reward / BigRational::from_integer(run.steps.into()),
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub episodes: u64,
    pub horizon: u64,
    pub master_seed: u64,
    pub z: f64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { episodes: 1000, horizon: 1000, master_seed: 1, z: 1.96, workers: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub episodes: u64,
    pub horizon: u64,
    pub master_seed: u64,
    pub successes: u64,
    pub failures: u64,
    pub undetermined: u64,
    pub undetermined_fraction: f64,
    /// Undetermined episodes counted as failures / as successes.
    pub bracket_low: f64,
    pub bracket_high: f64,
    pub tail_truncations: u64,
}

impl Estimate {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }

    fn from_counts(c: Counts, cfg: &SimConfig) -> Estimate {
        let determined = c.t + c.f;
        let (p_hat, lo, hi) = if determined == 0 {
            (0.0, 0.0, 1.0)
        } else {
            let (lo, hi) = wilson_interval(c.t, determined, cfg.z);
            (c.t as f64 / determined as f64, lo.min(c.t as f64 / determined as f64), hi)
        };
        let n = cfg.episodes as f64;
        Estimate {
            p_hat,
            ci_low: lo,
            ci_high: hi.max(p_hat),
            episodes: cfg.episodes,
            horizon: cfg.horizon,
            master_seed: cfg.master_seed,
            successes: c.t,
            failures: c.f,
            undetermined: c.u,
            undetermined_fraction: c.u as f64 / n,
            bracket_low: c.t as f64 / n,
            bracket_high: (c.t + c.u) as f64 / n,
            tail_truncations: c.trunc,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Counts {
    t: u64,
    f: u64,
    u: u64,
    trunc: u64,
}

impl Counts {
    fn add(self, o: Counts) -> Counts {
        Counts { t: self.t + o.t, f: self.f + o.f, u: self.u + o.u, trunc: self.trunc + o.trunc }
    }
}

/// Runs one episode and classifies it.
pub fn episode_outcome(
    mdp: &dyn LazyMdp,
    strategy: &dyn Strategy,
    event: &EventSpec,
    horizon: u64,
    seed: u64,
) -> Result<(Outcome, u64), SimError> {
    let ep = run_episode_until(mdp, strategy, horizon, seed, false, |run, new| event.early(run, new))?;
    Ok((event.evaluate(&ep.run, true), ep.tail_truncations))
}

/// Runs `work` on a pool of `workers` threads (0: global pool).
pub fn with_workers<T: Send>(workers: usize, work: impl FnOnce() -> T + Send) -> Result<T, SimError> {
    if workers == 0 {
        return Ok(work());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| SimError::Pool(e.to_string()))?;
    Ok(pool.install(work))
}

/// Monte Carlo estimate of P(event). Episode e uses `episode_seed(master, e)`;
/// aggregation only counts, so the result is independent of parallelism.
pub fn estimate_event(
    mdp: &dyn LazyMdp,
    strategy: &dyn Strategy,
    event: &EventSpec,
    cfg: &SimConfig,
) -> Result<Estimate, SimError> {
    if cfg.episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    if cfg.horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let counts = with_workers(cfg.workers, || {
        (0..cfg.episodes)
            .into_par_iter()
            .map(|e| {
                let (o, trunc) = episode_outcome(mdp, strategy, event, cfg.horizon, episode_seed(cfg.master_seed, e))?;
                Ok::<Counts, SimError>(match o {
                    Outcome::True => Counts { t: 1, trunc, ..Default::default() },
                    Outcome::False => Counts { f: 1, trunc, ..Default::default() },
                    Outcome::Undetermined => Counts { u: 1, trunc, ..Default::default() },
                })
            })
            .try_reduce(Counts::default, |a, b| Ok(a.add(b)))
    })??;
    Ok(Estimate::from_counts(counts, cfg))
}

/// Estimates several events on the same episodes; each episode runs until
/// every event is decided or the horizon ends.
pub fn estimate_events(
    mdp: &dyn LazyMdp,
    strategy: &dyn Strategy,
    events: &[EventSpec],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>, SimError> {
    if cfg.episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    if cfg.horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let every = events.iter().any(EventSpec::needs_every_step);
    let zero = vec![Counts::default(); events.len()];
    let counts = with_workers(cfg.workers, || {
        (0..cfg.episodes)
            .into_par_iter()
            .map(|e| {
                let seed = episode_seed(cfg.master_seed, e);
                let ep = run_episode_until(mdp, strategy, cfg.horizon, seed, false, |run, new| {
                    (every || new) && events.iter().all(|ev| ev.evaluate(run, false) != Outcome::Undetermined)
                })?;
                Ok::<Vec<Counts>, SimError>(
                    events
                        .iter()
                        .map(|ev| {
                            let trunc = ep.tail_truncations;
                            match ev.evaluate(&ep.run, true) {
                                Outcome::True => Counts { t: 1, trunc, ..Default::default() },
                                Outcome::False => Counts { f: 1, trunc, ..Default::default() },
                                Outcome::Undetermined => Counts { u: 1, trunc, ..Default::default() },
                            }
                        })
                        .collect(),
                )
            })
            .try_reduce(|| zero.clone(), |a, b| Ok(a.into_iter().zip(b).map(|(x, y)| x.add(y)).collect()))
    })??;
    Ok(counts.into_iter().map(|c| Estimate::from_counts(c, cfg)).collect())
}

/// One JSONL record.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub experiment: String,
    pub family: String,
    pub strategy: String,
    pub params: Value,
    pub event: String,
    pub episodes: u64,
    pub horizon: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub undetermined: f64,
    pub master_seed: u64,
    /// Always 0 in files so that outputs are byte-reproducible.
    pub runtime_ms: u64,
}

impl EstimateRow {
    pub fn new(experiment: &str, family: &str, strategy: &str, params: Value, event: &EventSpec, est: &Estimate) -> Self {
        EstimateRow {
            experiment: experiment.into(),
            family: family.into(),
            strategy: strategy.into(),
            params,
            event: event.to_string(),
            episodes: est.episodes,
            horizon: est.horizon,
            p_hat: est.p_hat,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            undetermined: est.undetermined_fraction,
            master_seed: est.master_seed,
            runtime_ms: 0,
        }
    }
}

/// A grid point of a sweep.
pub struct SweepPoint {
    pub params: Value,
    pub family: String,
    pub mdp: Arc<dyn LazyMdp>,
    pub strategy: Arc<dyn Strategy>,
    pub event: EventSpec,
}

/// One estimate per grid point, each with its own derived master seed.
pub fn sweep(experiment: &str, points: &[SweepPoint], cfg: &SimConfig) -> Result<Vec<(EstimateRow, Estimate)>, SimError> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = SimConfig { master_seed: episode_seed(cfg.master_seed, 1 << 40 | i as u64), ..cfg.clone() };
            let est = estimate_event(&*p.mdp, &*p.strategy, &p.event, &c)?;
            Ok((EstimateRow::new(experiment, &p.family, &p.strategy.name(), p.params.clone(), &p.event, &est), est))
        })
        .collect()
}

pub fn write_jsonl<W: io::Write>(mut w: W, rows: &[EstimateRow]) -> Result<(), SimError> {
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| SimError::Output(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| SimError::Output(e.to_string()))?;
    }
    Ok(())
}

pub fn write_csv<W: io::Write>(w: W, rows: &[EstimateRow]) -> Result<(), SimError> {
    let err = |e: csv::Error| SimError::Output(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "experiment", "family", "strategy", "params", "event", "episodes", "horizon", "p_hat", "ci_low", "ci_high",
        "undetermined", "master_seed", "runtime_ms",
    ])
    .map_err(err)?;
    for r in rows {
        out.write_record([
            r.experiment.clone(),
            r.family.clone(),
            r.strategy.clone(),
            r.params.to_string(),
            r.event.clone(),
            r.episodes.to_string(),
            r.horizon.to_string(),
            r.p_hat.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.undetermined.to_string(),
            r.master_seed.to_string(),
            r.runtime_ms.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| SimError::Output(e.to_string()))
}

/// States visited by a run, as labels.
pub fn labels(run: &RunRecord) -> Vec<String> {
    run.states.iter().map(StateRef::to_string).collect()
}
