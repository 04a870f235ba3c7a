use std::sync::Arc;

use mdplab::constructions::{build, FamilyKind};
use mdplab::montecarlo::run_episode;
use mdplab::payoff::{dip_events, horizon_verdict, payoff_sequence, sequence_of, Certificate, PayoffKind, Verdict};
use mdplab::schedule::ParamSchedule;
use mdplab::strategy::skip_forever;
use mdplab::{RunRecord, StateRef};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn rewards() -> impl Strategy<Value = Vec<BigRational>> {
    prop::collection::vec((-50i64..50, 1i64..12).prop_map(|(n, d)| q(n, d)), 1..60)
}

proptest! {
    #[test]
    fn total_is_prefix_sum(rw in rewards()) {
        let tp = sequence_of(&rw, PayoffKind::TotalPayoff);
        let mut acc = BigRational::zero();
        for (i, r) in rw.iter().enumerate() {
            acc += r;
            prop_assert_eq!(&tp[i], &acc);
        }
    }

    #[test]
    fn mean_is_total_over_steps(rw in rewards()) {
        let tp = sequence_of(&rw, PayoffKind::TotalPayoff);
        let mp = sequence_of(&rw, PayoffKind::MeanPayoff);
        for i in 0..rw.len() {
            prop_assert_eq!(&mp[i] * BigRational::from_integer(BigInt::from(i as i64 + 1)), tp[i].clone());
        }
        prop_assert_eq!(sequence_of(&rw, PayoffKind::PointPayoff), rw);
    }

    #[test]
    fn dips_match_a_direct_scan(rw in rewards(), b in -20i64..5) {
        let mut run = RunRecord::new(StateRef::atom("x"));
        for r in &rw {
            run.push(StateRef::atom("x"), r.clone());
        }
        let bound = q(b, 1);
        for kind in PayoffKind::ALL {
            let seq = payoff_sequence(&run, kind).unwrap();
            let want: Vec<u64> = seq.iter().enumerate().filter(|(_, v)| **v <= bound).map(|(i, _)| i as u64 + 1).collect();
            prop_assert_eq!(dip_events(&run, kind, &bound), want);
        }
    }
}

#[test]
fn sink_entry_is_a_certified_loss_at_its_step() {
    let sch = Arc::new(ParamSchedule::preset("halving").unwrap());
    let fam = build(FamilyKind::Chain, sch.clone(), false).unwrap();
    let strat = skip_forever(FamilyKind::Chain, sch.clone());
    let lane = run_episode(&*fam.mdp, &strat, 40, 3).unwrap();
    assert!(lane.sink_step().is_none());
    assert!(matches!(horizon_verdict(&lane, PayoffKind::TotalPayoff, &BigRational::zero()), Verdict::Undetermined(_)));

    let mimic = mdplab::strategy::mimic_strategy(FamilyKind::Chain, sch);
    let lost = (0..500)
        .map(|seed| run_episode(&*fam.mdp, &mimic, 400, seed).unwrap())
        .find(|r| r.absorbed)
        .expect("some mimic run falls into bot");
    let first_bot = lost.states.iter().position(|s| s.is("bot")).unwrap() as u64;
    assert_eq!(
        horizon_verdict(&lost, PayoffKind::PointPayoff, &BigRational::zero()),
        Verdict::LoseCertified(Certificate::Sink, first_bot)
    );
}

#[test]
fn simulated_totals_match_rewards() {
    let sch = Arc::new(ParamSchedule::preset("quadratic").unwrap());
    let fam = build(FamilyKind::Chain, sch.clone(), false).unwrap();
    let strat = mdplab::strategy::mimic_strategy(FamilyKind::Chain, sch);
    for seed in 0..20 {
        let run = run_episode(&*fam.mdp, &strat, 200, seed).unwrap();
        run.check(&*fam.mdp).unwrap();
        assert_eq!(run.recomputed_total(), run.total_reward);
        let tp = payoff_sequence(&run, PayoffKind::TotalPayoff).unwrap();
        assert_eq!(tp.last().unwrap(), &run.total_reward);
    }
}
