use std::collections::HashMap;
use std::sync::Arc;

use mdplab::constructions::build_named;
use mdplab::harness::coupled_check;
use mdplab::mdp::{reachable, validate_mdp, SharedMdp};
use mdplab::montecarlo::run_episode;
use mdplab::strategy::Strategy as _;
use mdplab::transforms::{encode, glue, project, pull_back_strategy, Encoding};
use mdplab::{LazyMdp, StateRef, Successors};
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;

fn family(name: &str) -> SharedMdp {
    build_named(name, "quadratic", false).unwrap().mdp
}

#[test]
fn coupled_runs_agree_on_every_family() {
    for fam in ["chain", "restart", "inf-branch", "puterman", "reward-implicit"] {
        let horizon = if fam == "reward-implicit" { 12 } else { 60 };
        for enc in [Encoding::R, Encoding::S, Encoding::A] {
            let c = coupled_check(enc, fam, "quadratic", 150, horizon, 3).unwrap();
            assert!(c.passed, "{fam} {enc}: {}", c.detail);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn coupling_holds_for_any_seed(seed in any::<u64>(), enc in prop::sample::select(vec![Encoding::R, Encoding::S, Encoding::A])) {
        let c = coupled_check(enc, "chain", "halving", 4, 80, seed).unwrap();
        prop_assert!(c.passed, "{}", c.detail);
    }
}

#[test]
fn encodings_are_well_formed() {
    let base = family("chain");
    for enc in [Encoding::R, Encoding::S, Encoding::A] {
        let m = encode(enc, base.clone(), base.initial());
        let states = reachable(&m, 20, 800).unwrap();
        let rep = validate_mdp(&m, &states);
        assert!(rep.ok(), "{enc}: {rep}");
        for s in &states {
            assert!(base.successors(project(s)).is_ok());
        }
    }
}

#[test]
fn counters_must_be_consistent() {
    let base = family("puterman");
    let s1 = StateRef::ints("s", &[1]);
    let s2 = StateRef::ints("s", &[2]);
    let m = encode(Encoding::A, base.clone(), s1.clone());
    let from = StateRef::encoded(s1.clone(), Some(0), Some(BigRational::zero()));
    let good = StateRef::encoded(s2.clone(), Some(1), Some(BigRational::from_integer((-1).into())));
    assert_eq!(m.reward(&from, &good).unwrap(), BigRational::from_integer((-1).into()));
    let bad_step = StateRef::encoded(s2.clone(), Some(2), Some(BigRational::from_integer((-1).into())));
    let bad_reward = StateRef::encoded(s2, Some(1), Some(BigRational::zero()));
    assert!(m.reward(&from, &bad_step).is_err());
    assert!(m.reward(&from, &bad_reward).is_err());
    // labels of another encoding are foreign states
    let r_label = StateRef::encoded(s1, None, Some(BigRational::zero()));
    assert!(m.successors(&r_label).is_err());
}

#[test]
fn pulled_back_step_table_replays_on_the_base() {
    let base = family("puterman");
    let s = |k: i64| StateRef::ints("s", &[k]);
    let at = |k: i64, t: u64| StateRef::encoded(s(k), Some(t), None);
    let mut table = HashMap::new();
    for t in 0..3u64 {
        table.insert(at(t as i64 + 1, t), at(t as i64 + 2, t + 1));
    }
    for t in 3..20u64 {
        table.insert(at(4, t), at(4, t + 1));
    }
    let strat = pull_back_strategy(Encoding::S, table, None).unwrap();
    assert_eq!(strat.class(), Encoding::S.counter_class());
    let run = run_episode(&*base, &strat, 12, 0).unwrap();
    let ks: Vec<i64> = run.states.iter().map(|x| x.int(0).unwrap()).collect();
    assert_eq!(ks, vec![1, 2, 3, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4]);
}

#[test]
fn glued_mdp_splits_evenly() {
    let g = glue(family("puterman"), family("inf-branch"));
    let Successors::Random(d) = g.successors(&g.initial()).unwrap() else { panic!("root is random") };
    let e = d.enumerate();
    assert_eq!(e.len(), 2);
    assert!(e.iter().all(|b| b.prob.to_rational() == BigRational::new(1.into(), 2.into())));
    let left = StateRef::side(0, StateRef::ints("s", &[1]));
    let right = StateRef::side(1, StateRef::atom("s"));
    assert_eq!(e[0].target, left);
    assert_eq!(e[1].target, right);
    assert!(g.reward(&left, &right).is_err());
    let states = reachable(&g, 6, 200).unwrap();
    assert!(validate_mdp(&g, &states).ok());
    let arc: Arc<dyn LazyMdp> = Arc::new(g);
    assert!(arc.name().starts_with("glue("));
}
