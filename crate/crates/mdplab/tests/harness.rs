use mdplab::harness::{richardson2, run_scenario, Check, EventConfig, ExperimentConfig, NumMode, Options, ScheduleSpec, StrategySpec, SCENARIOS};
use mdplab::payoff::PayoffKind;
use num_rational::BigRational;
use proptest::prelude::*;

const BASIC: &str = r#"
experiment = "coin"
family = "inf-branch"
episodes = 4000
horizon = 6
master_seed = 3

[strategy]
kind = "fixed-branch"
i = 1

[event]
kind = "avoid-within"
label = "t"
"#;

#[test]
fn a_small_config_runs() {
    let cfg = ExperimentConfig::from_toml(BASIC).unwrap();
    assert_eq!(cfg.z, 1.96);
    assert_eq!(cfg.mode, NumMode::default());
    let row = cfg.run().unwrap();
    let v = serde_json::to_value(&row).unwrap();
    assert_eq!(v["experiment"], "coin");
    assert_eq!(v["episodes"], 4000);
    // (1/2)^3 to avoid t over three rounds
    let (lo, hi) = (v["ci_low"].as_f64().unwrap(), v["ci_high"].as_f64().unwrap());
    assert!(lo <= 0.125 && 0.125 <= hi, "{v}");
}

#[test]
fn bad_configs_are_config_errors() {
    let unknown = format!("{BASIC}\nsurprise = 1\n");
    assert!(ExperimentConfig::from_toml(&unknown).unwrap_err().is_config());
    let zero = BASIC.replace("episodes = 4000", "episodes = 0");
    assert!(ExperimentConfig::from_toml(&zero).unwrap_err().is_config());
    let bad_kind = BASIC.replace("fixed-branch", "fancy");
    assert!(ExperimentConfig::from_toml(&bad_kind).unwrap_err().is_config());
    let bad_family = BASIC.replace("inf-branch", "nope");
    assert!(ExperimentConfig::from_toml(&bad_family).unwrap().run().unwrap_err().is_config());
    let bad_root = format!("root = \"t(\"\n{BASIC}");
    assert!(ExperimentConfig::from_toml(&bad_root).unwrap().run().is_err());
}

fn strategies() -> impl Strategy<Value = StrategySpec> {
    prop_oneof![
        Just(StrategySpec::Mimic),
        (1i64..40).prop_map(|n| StrategySpec::SkipThenMimic { n }),
        (1u32..5, 0.0f64..1.0).prop_map(|(k, alpha)| StrategySpec::ConfusedFr { k, alpha }),
        (1u32..5, any::<u64>()).prop_map(|(k, seed)| StrategySpec::RandomFr { k, seed: seed >> 1 }),
        (1u64..9).prop_map(|i| StrategySpec::FixedBranch { i }),
        Just(StrategySpec::IncreasingBranch),
    ]
}

fn events() -> impl Strategy<Value = EventConfig> {
    prop_oneof![
        Just(EventConfig::HitSink),
        "[a-z]{1,4}".prop_map(|label| EventConfig::AvoidWithin { label }),
        (1u64..5, 1i64..30).prop_map(|(count, settle)| EventConfig::RestartCountAtLeast { count, settle }),
        (-9i64..9, 1i64..9, 0u64..50).prop_map(|(n, d, after)| EventConfig::DipBelow {
            payoff: PayoffKind::MeanPayoff,
            bound: format!("{n}/{d}"),
            after
        }),
        (1i64..40).prop_map(|gadget| EventConfig::NoBadEventThrough { gadget }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn configs_round_trip_through_toml(
        strategy in strategies(),
        event in events(),
        episodes in 1u64..1_000_000,
        horizon in 1u64..100_000,
        seed in 0u64..(1 << 62),
        z in 0.0f64..5.0,
        preset in prop::option::of(prop::sample::select(vec!["quadratic", "halving", "linear"])),
        rational in any::<bool>(),
    ) {
        let cfg = ExperimentConfig {
            experiment: "x".into(),
            family: "chain".into(),
            schedule: preset.map(|p| ScheduleSpec::Preset(p.into())),
            root: None,
            strategy,
            event,
            episodes,
            horizon,
            master_seed: seed,
            z,
            workers: 0,
            output: None,
            mode: if rational { NumMode::Rational } else { NumMode::Float },
        };
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn checks_print_one_line() {
    let c = Check::new("C0", "a claim", "1e-3", true, "all good".into());
    assert_eq!(c.to_string(), "PASS C0 | a claim | tol 1e-3 | all good");
    let c = Check::new("C1", "b", "0", false, "off by one".into());
    assert_eq!(c.to_string(), "FAIL C1 | b | tol 0 | off by one");
}

#[test]
fn richardson_removes_two_orders() {
    let r = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    let (l, a, b) = (r(-1, 3), r(5, 2), r(-7, 1));
    let means: Vec<BigRational> = (1..=8i64).map(|k| &l + &a / r(k, 1) + &b / r(k * k, 1)).collect();
    let ext = richardson2(&means);
    assert_eq!(ext.len(), 6);
    assert!(ext.iter().all(|x| *x == l));
}

#[test]
fn unknown_scenarios_are_config_errors() {
    assert_eq!(SCENARIOS.len(), 8);
    assert!(run_scenario("nope", &Options::default()).unwrap_err().is_config());
}

#[test]
fn the_puterman_scenario_reports() {
    let rep = run_scenario("puterman", &Options::default()).unwrap();
    assert!(!rep.checks.is_empty());
    assert_eq!(rep.jsonl().lines().count(), rep.rows.len());
    assert_eq!(rep.passed(), rep.checks.iter().all(|c| c.passed));
}
