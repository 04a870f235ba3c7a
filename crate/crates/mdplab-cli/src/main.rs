use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mdplab::constructions::FamilyKind;
use mdplab::harness::{self, ExperimentConfig, HarnessError, NumMode, Options, ScenarioReport};
use mdplab::label::parse_rational;
use mdplab::schedule::ToySpec;
use mdplab::solver::{self, Boundary, FiniteMdp, Objective, PipelineConfig, ViMode};
use mdplab::transforms::Encoding;
use mdplab::LazyMdp;

#[derive(Parser)]
#[command(name = "mdplab", version, about = "Simulate, solve and check liminf-payoff MDP constructions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Output file; JSONL plus a CSV mirror next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    z: Option<f64>,
    /// Rayon worker threads (0 = default pool).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one event-probability experiment from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Analysis verdicts for a parameter schedule, as JSON.
    Series {
        #[arg(long, default_value = "quadratic")]
        schedule: String,
        /// Memory size used for the FR decay bounds.
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long, default_value_t = 80)]
        gadgets: i64,
    },
    /// Value iteration and MD synthesis on a finite MDP.
    ValueIter(ValueIterArgs),
    /// Encode the chain family and check coupled runs against the base payoffs.
    Transform {
        #[arg(long, value_parser = ["R", "S", "A"])]
        check: String,
        #[arg(long, default_value = "chain")]
        family: String,
        #[arg(long, default_value = "quadratic")]
        schedule: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run named desk-scale checks (all when none are given).
    Scenarios {
        names: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// List families, schedules, scenarios and strategies.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Reach,
    Safety,
    BoundedSafety,
    PointPayoff,
    Pipeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Pessimistic,
    Optimistic,
    Frontier,
}

#[derive(Args)]
struct ValueIterArgs {
    /// Finite MDP in the text format; otherwise a registered test family is truncated.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "ladder")]
    family: String,
    #[arg(long, default_value_t = 1000)]
    radius: usize,
    #[arg(long, value_enum, default_value = "pessimistic")]
    boundary: BoundaryArg,
    #[arg(long, value_enum, default_value = "point-payoff")]
    objective: ObjectiveArg,
    /// Comma-separated target (reach) or bad (safety) labels.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value = "1/20")]
    eps: String,
    #[arg(long, default_value = "rational")]
    mode: String,
    /// Write the MD table as CSV.
    #[arg(long)]
    md_out: Option<PathBuf>,
    /// Write the truncated MDP in the text format.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

enum Failure {
    Config(String),
    Check,
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<solver::SolverError> for Failure {
    fn from(e: solver::SolverError) -> Self {
        match e {
            solver::SolverError::Parse { .. } | solver::SolverError::NotNormalized(..) => Failure::Config(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Simulate { config, mode, common } => simulate(&config, mode, &common),
        Cmd::Series { schedule, k, gadgets } => {
            let v = harness::series_report(&schedule, k, gadgets)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            Ok(())
        }
        Cmd::ValueIter(args) => value_iter(args),
        Cmd::Transform { check, family, schedule, common } => {
            let enc: Encoding = check.parse().map_err(|_| Failure::Config(format!("unknown encoding {check}")))?;
            let c = harness::coupled_check(
                enc,
                &family,
                &schedule,
                common.episodes.unwrap_or(10_000),
                common.horizon.unwrap_or(400),
                common.seed.unwrap_or(7),
            )?;
            println!("{c}");
            if c.passed {
                Ok(())
            } else {
                Err(Failure::Check)
            }
        }
        Cmd::Scenarios { names, common } => scenarios(names, &common),
        Cmd::List => {
            println!("families: {}", FamilyKind::ALL.iter().map(|k| k.id()).collect::<Vec<_>>().join(", "));
            println!("schedules: log-tower, {}", ToySpec::PRESETS.join(", "));
            println!("scenarios: {}", harness::SCENARIOS.join(", "));
            println!("strategies: mimic, skip-then-mimic, skip-then-mimic-eps, restart-concat, skip-forever, confused-fr, random-fr, fixed-branch, increasing-branch, loop-schedule, stuck-at");
            println!("events: hit-state, hit-sink, avoid-within, restart-count-at-least, dip-below, gadget-mistake, no-bad-event-through, sink-free-through, always");
            println!("solver families: ladder, ladder-small");
            Ok(())
        }
    }
}

fn simulate(path: &Path, mode: Option<String>, common: &Common) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(e) = common.episodes {
        cfg.episodes = e;
    }
    if let Some(h) = common.horizon {
        cfg.horizon = h;
    }
    if let Some(z) = common.z {
        cfg.z = z;
    }
    if common.workers > 0 {
        cfg.workers = common.workers;
    }
    if let Some(m) = mode {
        cfg.mode = m.parse::<NumMode>()?;
    }
    cfg.check()?;
    let row = cfg.run()?;
    let report = ScenarioReport { scenario: cfg.experiment.clone(), claim: String::new(), checks: vec![], rows: vec![row] };
    let out = common.out.clone().or(cfg.output.as_ref().map(PathBuf::from));
    emit(&report, out.as_deref())
}

fn emit(report: &ScenarioReport, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => {
            fs::write(p, report.jsonl()).map_err(|e| io_err(p, e))?;
            let csv = p.with_extension("csv");
            fs::write(&csv, report.csv()).map_err(|e| io_err(&csv, e))?;
        }
        None => {
            io::stdout().write_all(report.jsonl().as_bytes()).map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn scenarios(names: Vec<String>, common: &Common) -> Result<(), Failure> {
    let names: Vec<String> = if names.is_empty() { harness::SCENARIOS.iter().map(|s| s.to_string()).collect() } else { names };
    for n in &names {
        if !harness::SCENARIOS.contains(&n.as_str()) {
            return Err(Failure::Config(format!("unknown scenario {n:?}; try `list`")));
        }
    }
    let opts = Options {
        seed: common.seed.unwrap_or(7),
        episodes: common.episodes,
        horizon: common.horizon,
        workers: common.workers,
        z: common.z.unwrap_or(1.96),
    };
    let mut all = ScenarioReport { scenario: "all".into(), claim: String::new(), checks: vec![], rows: vec![] };
    for n in &names {
        let r = harness::run_scenario(n, &opts)?;
        eprintln!("# {}: {}", r.scenario, r.claim);
        for c in &r.checks {
            eprintln!("{c}");
        }
        all.checks.extend(r.checks);
        all.rows.extend(r.rows);
    }
    emit(&all, common.out.as_deref())?;
    if all.passed() {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn value_iter(a: ValueIterArgs) -> Result<(), Failure> {
    let exact = match a.mode.parse::<NumMode>()? {
        NumMode::Rational => true,
        NumMode::Float => false,
    };
    let m = match &a.input {
        Some(p) => FiniteMdp::from_text(&fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?)?,
        None => {
            let fam = solver::test_family(&a.family).ok_or_else(|| Failure::Config(format!("unknown test family {:?}", a.family)))?;
            let b = solver::bubble(&fam, &fam.initial(), a.radius, 1_000_000)?;
            let boundary = match a.boundary {
                BoundaryArg::Pessimistic => Boundary::Pessimistic,
                BoundaryArg::Optimistic => Boundary::Optimistic,
                BoundaryArg::Frontier => Boundary::Frontier,
            };
            solver::truncate(&fam, &b, boundary)?
        }
    };
    if let Some(p) = &a.dump {
        fs::write(p, m.to_text()).map_err(|e| io_err(p, e))?;
    }
    let labels = |default: usize| -> Result<Vec<usize>, Failure> {
        match &a.targets {
            None => Ok(vec![default]),
            Some(t) => t
                .split(',')
                .map(|l| m.index_of(l.trim()).ok_or_else(|| Failure::Config(format!("no state {l:?}"))))
                .collect(),
        }
    };
    let mode = if exact { ViMode::Exact } else { ViMode::Float { tol: 1e-12, max_iter: 1_000_000 } };
    let (summary, md) = match a.objective {
        ObjectiveArg::Pipeline => {
            let eps = parse_rational(&a.eps).ok_or_else(|| Failure::Config(format!("bad eps {:?}", a.eps)))?;
            let r = solver::eps_opt_md_pipeline(&m, &eps, &PipelineConfig { seed: a.seed, ..Default::default() })?;
            (
                json!({"states": m.len(), "objective": "pipeline", "eps": eps.to_string(), "value": r.value.to_string(),
                       "attainment": r.attainment.to_string(), "radii": r.radii, "certified": r.certified}),
                r.md,
            )
        }
        ObjectiveArg::PointPayoff => {
            let (vals, safe) = solver::pp_value(&m)?;
            let md = solver::transience_proxy_md(&m)?.0;
            let att = solver::md_attainment(&m, &md);
            (
                json!({"states": m.len(), "objective": "point-payoff", "value": vals[m.initial].to_string(),
                       "safe_states": safe.iter().filter(|&&x| x).count(), "proxy_attainment": att[m.initial].to_string()}),
                md,
            )
        }
        obj => {
            let objective = match obj {
                ObjectiveArg::Reach => Objective::Reach(labels(m.win)?),
                ObjectiveArg::Safety => Objective::Safety(labels(m.lose)?),
                _ => Objective::BoundedSafety(labels(m.lose)?, a.steps),
            };
            let vt = solver::value_iteration(&m, &objective, mode)?;
            let md = solver::extract_md(&m, &vt);
            let value = vt.exact_at(m.initial).map(|v| v.to_string()).unwrap_or_else(|| vt.values[m.initial].to_string());
            (
                json!({"states": m.len(), "objective": vt.objective, "value": value, "iterations": vt.iterations, "residual": vt.residual}),
                md,
            )
        }
    };
    if let Some(p) = &a.md_out {
        let f = fs::File::create(p).map_err(|e| io_err(p, e))?;
        solver::write_md_csv(f, &solver::md_labels(&m, &md))?;
    }
    println!("{summary}");
    Ok(())
}
