use std::collections::HashSet;
use std::sync::Arc;

use mdplab::constructions::build_named;
use mdplab::mdp::{Event, EventKind};
use mdplab::montecarlo::{
    draw, episode_seed, estimate_event, estimate_events, write_csv, write_jsonl, EstimateRow, EventSpec, Outcome, SimConfig,
};
use mdplab::payoff::PayoffKind;
use mdplab::strategy::{fixed_branch, mimic_strategy};
use mdplab::{RunRecord, StateRef};
use num_rational::BigRational;
use proptest::prelude::*;
use serde_json::json;

fn cfg(episodes: u64, horizon: u64, seed: u64, workers: usize) -> SimConfig {
    SimConfig { episodes, horizon, master_seed: seed, workers, ..Default::default() }
}

#[test]
fn coin_flips_have_their_exact_frequencies() {
    let ib = build_named("inf-branch", "quadratic", true).unwrap().mdp;
    // avoid t for H/2 rounds of branch i: (1 − 2^-i)^(H/2)
    for (i, h) in [(1u64, 2u64), (1, 6), (3, 20)] {
        let exact = (1.0 - 0.5f64.powi(i as i32)).powi((h / 2) as i32);
        let est = estimate_event(&*ib, &fixed_branch(i), &EventSpec::AvoidWithin("t".into()), &cfg(20_000, h, 11, 0)).unwrap();
        assert_eq!(est.undetermined, 0);
        assert!(est.ci_low <= exact && exact <= est.ci_high, "i={i} h={h}: {est:?} vs {exact}");
        assert!(est.half_width() < 0.01);
    }
}

#[test]
fn results_do_not_depend_on_workers() {
    let fam = build_named("chain", "halving", false).unwrap();
    let sch = Arc::new(mdplab::schedule::ParamSchedule::preset("halving").unwrap());
    let strat = mimic_strategy(fam.kind, sch);
    let events = [EventSpec::SinkFreeThrough(6), EventSpec::HitSink, EventSpec::AvoidWithin("bot".into())];
    let base = estimate_events(&*fam.mdp, &strat, &events, &cfg(3000, 200, 5, 1)).unwrap();
    for w in [2, 3, 7] {
        let other = estimate_events(&*fam.mdp, &strat, &events, &cfg(3000, 200, 5, w)).unwrap();
        for (a, b) in base.iter().zip(&other) {
            assert_eq!((a.successes, a.failures, a.undetermined), (b.successes, b.failures, b.undetermined));
        }
    }
    // one event at a time sees the same episodes
    for (ev, joint) in events.iter().zip(&base) {
        let single = estimate_event(&*fam.mdp, &strat, ev, &cfg(3000, 200, 5, 2)).unwrap();
        assert_eq!((single.successes, single.failures), (joint.successes, joint.failures), "{ev}");
    }
}

fn with_events(kinds: &[EventKind]) -> RunRecord {
    let mut r = RunRecord::new(StateRef::atom("x"));
    for (i, k) in kinds.iter().enumerate() {
        r.push(StateRef::atom("x"), BigRational::from_integer(0.into()));
        r.events.push(Event { kind: k.clone(), step: i as u64 + 1 });
    }
    r
}

#[test]
fn the_first_decisive_event_wins() {
    let mistake_then_done = with_events(&[EventKind::Mistake { gadget: 3, observed: 1, chose: 2 }, EventKind::GadgetDone { gadget: 5 }]);
    assert_eq!(EventSpec::NoBadEventThrough(5).evaluate(&mistake_then_done, false), Outcome::False);
    assert_eq!(EventSpec::SinkFreeThrough(5).evaluate(&mistake_then_done, false), Outcome::True);
    assert_eq!(EventSpec::GadgetMistake.evaluate(&mistake_then_done, false), Outcome::True);

    let done_then_sink = with_events(&[EventKind::GadgetDone { gadget: 5 }, EventKind::Sink]);
    assert_eq!(EventSpec::NoBadEventThrough(5).evaluate(&done_then_sink, false), Outcome::True);
    assert_eq!(EventSpec::HitSink.evaluate(&done_then_sink, false), Outcome::True);

    let restart = with_events(&[EventKind::GadgetDone { gadget: 2 }, EventKind::Restart { row: 1 }, EventKind::GadgetDone { gadget: 9 }]);
    assert_eq!(EventSpec::SinkFreeThrough(4).evaluate(&restart, false), Outcome::False);
    assert_eq!(EventSpec::RestartCountAtLeast { count: 1, settle: 6 }.evaluate(&restart, false), Outcome::True);
    assert_eq!(EventSpec::RestartCountAtLeast { count: 2, settle: 6 }.evaluate(&restart, false), Outcome::False);
    assert_eq!(EventSpec::RestartCountAtLeast { count: 2, settle: 12 }.evaluate(&restart, false), Outcome::Undetermined);

    let quiet = with_events(&[]);
    assert_eq!(EventSpec::SinkFreeThrough(1).evaluate(&quiet, true), Outcome::Undetermined);
    assert_eq!(EventSpec::AvoidWithin("y".into()).evaluate(&quiet, true), Outcome::True);
    assert_eq!(EventSpec::AvoidWithin("x".into()).evaluate(&quiet, true), Outcome::False);
    assert_eq!(EventSpec::Always.evaluate(&quiet, false), Outcome::True);
}

#[test]
fn dips_respect_the_start_step() {
    let mut r = RunRecord::new(StateRef::atom("x"));
    for v in [-5, 1, 1, 1] {
        r.push(StateRef::atom("x"), BigRational::from_integer(v.into()));
    }
    let bound = BigRational::from_integer((-1).into());
    let dip = |after| EventSpec::DipBelow { kind: PayoffKind::TotalPayoff, bound: bound.clone(), after };
    // totals −5, −4, −3, −2
    assert_eq!(dip(4).evaluate(&r, true), Outcome::True);
    let mean = EventSpec::DipBelow { kind: PayoffKind::MeanPayoff, bound: bound.clone(), after: 2 };
    // means −5, −2, −1, −1/2
    assert_eq!(mean.evaluate(&r, true), Outcome::True);
    let late = EventSpec::DipBelow { kind: PayoffKind::MeanPayoff, bound, after: 4 };
    assert_eq!(late.evaluate(&r, true), Outcome::Undetermined);
}

proptest! {
    #[test]
    fn draws_are_uniform_and_reproducible(master in any::<u64>(), e in any::<u64>(), t in 0u64..1_000_000) {
        let s = episode_seed(master, e);
        let u = draw(s, t);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u.to_bits(), draw(s, t).to_bits());
    }
}

#[test]
fn episode_seeds_are_distinct() {
    let seeds: HashSet<u64> = (0..100_000).map(|e| episode_seed(7, e)).collect();
    assert_eq!(seeds.len(), 100_000);
    let mean = (0..100_000u64).map(|t| draw(episode_seed(3, 0), t)).sum::<f64>() / 100_000.0;
    assert!((mean - 0.5).abs() < 0.005);
}

#[test]
fn bad_configs_are_rejected() {
    let ib = build_named("inf-branch", "quadratic", true).unwrap().mdp;
    assert!(estimate_event(&*ib, &fixed_branch(1), &EventSpec::Always, &cfg(0, 5, 1, 0)).is_err());
    assert!(estimate_event(&*ib, &fixed_branch(1), &EventSpec::Always, &cfg(5, 0, 1, 0)).is_err());
}

#[test]
fn rows_serialize_to_jsonl_and_csv() {
    let ib = build_named("inf-branch", "quadratic", true).unwrap().mdp;
    let ev = EventSpec::AvoidWithin("t".into());
    let est = estimate_event(&*ib, &fixed_branch(2), &ev, &cfg(500, 8, 2, 0)).unwrap();
    let rows = vec![
        EstimateRow::new("demo", "inf-branch", "fixed(2)", json!({"i": 2}), &ev, &est),
        EstimateRow::new("demo", "inf-branch", "fixed(2)", json!({"i": 2, "copy": true}), &ev, &est),
    ];
    let mut j = Vec::new();
    write_jsonl(&mut j, &rows).unwrap();
    let text = String::from_utf8(j).unwrap();
    assert_eq!(text.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["episodes"], 500);
    assert_eq!(first["event"], "avoid(t)");
    assert_eq!(first["runtime_ms"], 0);
    assert_eq!(first["p_hat"].as_f64().unwrap(), est.p_hat);

    let mut c = Vec::new();
    write_csv(&mut c, &rows).unwrap();
    let mut rd = csv::Reader::from_reader(c.as_slice());
    assert_eq!(rd.headers().unwrap().len(), 13);
    let recs: Vec<_> = rd.records().collect::<Result<_, _>>().unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(&recs[1][3], r#"{"copy":true,"i":2}"#);
}
