use std::collections::HashMap;
use std::sync::Arc;

use mdplab::constructions::{build, gadget_plays, FamilyKind};
use mdplab::mdp::{reachable, EventKind};
use mdplab::montecarlo::{run_episode, run_episode_until};
use mdplab::schedule::ParamSchedule;
use mdplab::strategy::{
    confused_fr_adversary, fixed_branch, loop_schedule, mimic_strategy, random_fr_strategy, restart_concat_strategy,
    skip_then_mimic, stuck_at, validate_automaton, IncreasingBranch, MdTable, Mode, Strategy, StrategyClass,
};
use mdplab::StateRef;
use proptest::prelude::*;

fn sch(name: &str) -> Arc<ParamSchedule> {
    Arc::new(ParamSchedule::preset(name).unwrap())
}

#[test]
fn mimic_copies_every_observed_branch() {
    let s = sch("quadratic");
    for kind in [FamilyKind::Chain, FamilyKind::Restart, FamilyKind::RewardImplicit, FamilyKind::BinarizedChain] {
        let fam = build(kind, s.clone(), false).unwrap();
        let strat = if kind == FamilyKind::Restart { restart_concat_strategy(kind, s.clone()).unwrap() } else { mimic_strategy(kind, s.clone()) };
        let mut plays = 0;
        for seed in 0..30 {
            let run = run_episode(&*fam.mdp, &strat, 300, seed).unwrap();
            for (_, _, i, j) in gadget_plays(kind, &run) {
                assert_eq!(i, j, "{} seed {seed}", kind.id());
                plays += 1;
            }
            assert_eq!(run.count_events(|k| matches!(k, EventKind::Mistake { .. })), 0);
        }
        assert!(plays > 30, "{}: {plays}", kind.id());
    }
}

#[test]
fn skip_then_mimic_enters_at_its_gadget() {
    let s = sch("quadratic");
    let fam = build(FamilyKind::Chain, s.clone(), false).unwrap();
    for n in [1, 4, 9] {
        let strat = skip_then_mimic(FamilyKind::Chain, s.clone(), n).unwrap();
        let run = run_episode(&*fam.mdp, &strat, 120, 5).unwrap();
        let first = run.states.iter().find(|x| x.is("s")).unwrap();
        assert_eq!(first, &StateRef::ints("s", &[n]));
        // the lane pays −1 per column move and refunds all of it on exit
        let entry = run.states.iter().position(|x| x.is("s")).unwrap();
        let lane: Vec<i64> = run.rewards[..entry].iter().map(|r| i64::try_from(r.to_integer()).unwrap()).collect();
        let moves = (n - s.nstar - 1).max(0);
        assert_eq!(lane.iter().filter(|&&r| r == -1).count() as i64, moves);
        assert_eq!(*lane.last().unwrap(), moves);
        assert_eq!(lane.iter().sum::<i64>(), 0);
    }
}

#[test]
fn confused_adversary_only_overplays_on_its_merged_pair() {
    let s = sch("dichotomy");
    let fam = build(FamilyKind::Chain, s.clone(), false).unwrap();
    let adv = confused_fr_adversary(FamilyKind::Chain, s.clone(), 2, |_| 0.5);
    assert_eq!(adv.class(), StrategyClass::FR(2));
    for seed in 0..40 {
        let run = run_episode(&*fam.mdp, &adv, 200, seed).unwrap();
        for (_, n, i, j) in gadget_plays(FamilyKind::Chain, &run) {
            // branches sharing a saturated mode are underplayed, never overplayed
            if j > i {
                let (pi, pj) = adv.pair(n).expect("a mistake needs a merged pair");
                assert_eq!((i, j), (pi, pj), "gadget {n}");
            }
        }
    }
}

#[test]
fn random_fr_is_a_valid_automaton() {
    let s = sch("quadratic");
    let fam = build(FamilyKind::Chain, s, true).unwrap();
    let states = reachable(&*fam.mdp, 30, 500).unwrap();
    for k in [1, 2, 3] {
        let strat = random_fr_strategy(k, 11);
        let probes: Vec<(Mode, StateRef)> =
            states.iter().flat_map(|st| (0..k as u64).map(move |m| (Mode::Slot(m), st.clone()))).collect();
        let rep = validate_automaton(&*fam.mdp, &strat, &probes);
        assert!(rep.ok(), "k={k}: {:?}", rep.violations);
        assert_eq!(rep.checked, probes.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn random_fr_runs_are_reproducible(seed in any::<u64>(), ep in any::<u64>(), k in 1u32..4) {
        let fam = build(FamilyKind::Chain, sch("quadratic"), false).unwrap();
        let strat = random_fr_strategy(k, seed);
        let a = run_episode_until(&*fam.mdp, &strat, 80, ep, true, |_, _| false).unwrap();
        let b = run_episode_until(&*fam.mdp, &strat, 80, ep, true, |_, _| false).unwrap();
        prop_assert_eq!(&a.run.states, &b.run.states);
        prop_assert_eq!(&a.modes, &b.modes);
        for m in &a.modes {
            prop_assert!(matches!(m, Mode::Slot(x) if *x < k as u64));
        }
    }
}

#[test]
fn infinite_branching_strategies() {
    let fam = build(FamilyKind::InfBranch, sch("quadratic"), true).unwrap();
    for i in [1u64, 3] {
        let run = run_episode(&*fam.mdp, &fixed_branch(i), 200, 9).unwrap();
        for w in run.states.windows(2) {
            if w[0].is("s") {
                assert_eq!(w[1], StateRef::ints("r", &[i as i64]));
            }
        }
    }
    let run = run_episode(&*fam.mdp, &IncreasingBranch, 200, 9).unwrap();
    let picks: Vec<i64> = run.states.iter().filter(|s| s.is("r")).map(|s| s.int(0).unwrap()).collect();
    assert_eq!(picks, (1..=picks.len() as i64).collect::<Vec<_>>());
}

#[test]
fn loop_chain_strategies() {
    let fam = build(FamilyKind::Puterman, sch("quadratic"), true).unwrap();
    let run = run_episode(&*fam.mdp, &stuck_at(3), 50, 0).unwrap();
    assert_eq!(run.states[2], StateRef::ints("s", &[3]));
    assert!(run.states[2..].iter().all(|s| *s == StateRef::ints("s", &[3])));
    // loop k times in s(k)
    let run = run_episode(&*fam.mdp, &loop_schedule("lin", |k| k as u64), 20, 0).unwrap();
    let ks: Vec<i64> = run.states.iter().map(|s| s.int(0).unwrap()).collect();
    assert_eq!(&ks[..10], &[1, 1, 2, 2, 2, 3, 3, 3, 3, 4]);
}

#[test]
fn md_tables_round_trip_through_csv() {
    let mut t = HashMap::new();
    t.insert(StateRef::ints("s", &[1]), StateRef::ints("s", &[2]));
    t.insert("w(3,1/2)".parse().unwrap(), StateRef::atom("bot"));
    let md = MdTable::new(t);
    let mut buf = Vec::new();
    md.write_csv(&mut buf).unwrap();
    let back = MdTable::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.actions, md.actions);
}

#[test]
fn missing_table_entries_error() {
    let fam = build(FamilyKind::Puterman, sch("quadratic"), true).unwrap();
    let empty = MdTable::new(HashMap::new());
    assert!(run_episode(&*fam.mdp, &empty, 5, 0).is_err());
}
