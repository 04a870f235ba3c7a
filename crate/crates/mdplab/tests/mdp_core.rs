use std::sync::Arc;

use mdplab::constructions::{build, FamilyKind};
use mdplab::label::Arg;
use mdplab::mdp::{reachable, rooted, validate_mdp, Branch, Prob, SuccessorDist};
use mdplab::schedule::ParamSchedule;
use mdplab::{LazyMdp, StateRef};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use smallvec::SmallVec;

fn arg() -> impl Strategy<Value = Arg> {
    prop_oneof![
        any::<i64>().prop_map(Arg::Int),
        (any::<i64>(), 1i64..1_000_000).prop_map(|(n, d)| Arg::num(BigRational::new(BigInt::from(n), BigInt::from(d)))),
        (any::<u64>(), 0u32..200).prop_map(|(x, sh)| Arg::num(BigRational::from_integer(BigInt::from(x) << sh))),
    ]
}

fn node() -> impl Strategy<Value = StateRef> {
    let names = prop::sample::select(vec!["s", "a", "b", "c", "w", "x", "bot", "start", "ts", "z"]);
    (names, prop::collection::vec(arg(), 0..5)).prop_map(|(n, args)| StateRef::with_args(n, SmallVec::from_vec(args)))
}

fn label() -> impl Strategy<Value = StateRef> {
    prop_oneof![
        node(),
        (0u8..2, node()).prop_map(|(d, s)| StateRef::side(d, s)),
        // every encoding keeps the step, the reward or both
        (node(), prop::option::of(any::<u64>()), prop::option::of((any::<i32>(), 1i32..1000)))
            .prop_filter("empty encoding", |(_, a, b)| a.is_some() || b.is_some())
            .prop_map(|(s, step, r)| {
                StateRef::encoded(s, step, r.map(|(n, d)| BigRational::new(BigInt::from(n), BigInt::from(d))))
            }),
    ]
}

proptest! {
    #[test]
    fn labels_round_trip(s in label()) {
        let text = s.to_string();
        let back: StateRef = text.parse().unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn sampling_follows_cdf(weights in prop::collection::vec(1u64..20, 1..8), u in 0.0f64..1.0) {
        let total: u64 = weights.iter().sum();
        let d = SuccessorDist::finite(
            weights.iter().enumerate().map(|(i, &w)| Branch { target: StateRef::ints("t", &[i as i64]), prob: Prob::ratio(w, total) }).collect(),
        );
        let s = d.sample(u);
        let before: u64 = weights[..s.index].iter().sum();
        let upto = before + weights[s.index];
        prop_assert!(before as f64 / total as f64 <= u + 1e-12);
        prop_assert!(u < upto as f64 / total as f64 + 1e-12);
        prop_assert!((0.0..1.0).contains(&s.residual));
        prop_assert_eq!(s.target, StateRef::ints("t", &[s.index as i64]));
    }
}

#[test]
fn malformed_labels_are_rejected() {
    for bad in ["", "s(", "s(1,", "(1)", "s(1/0)", "s)1("] {
        assert!(bad.parse::<StateRef>().is_err(), "{bad:?}");
    }
}

#[test]
fn families_are_well_formed_near_the_root() {
    let sch = Arc::new(ParamSchedule::preset("quadratic").unwrap());
    for kind in FamilyKind::ALL {
        for exact in [false, true] {
            let fam = build(kind, sch.clone(), exact).unwrap();
            // reward-implicit lanes reach gadgets whose scales have millions of bits
            let depth = if kind.id().contains("reward-implicit") { 8 } else { 40 };
            let probe = reachable(&*fam.mdp, depth, 3000).unwrap();
            assert!(probe.len() > 5, "{}", kind.id());
            let rep = validate_mdp(&*fam.mdp, &probe);
            assert!(rep.ok(), "{} exact={exact}: {rep}", kind.id());
        }
    }
}

#[test]
fn exact_families_normalize_exactly() {
    let sch = Arc::new(ParamSchedule::preset("halving").unwrap());
    let fam = build(FamilyKind::Chain, sch, true).unwrap();
    for s in reachable(&*fam.mdp, 30, 2000).unwrap() {
        if let mdplab::Successors::Random(d) = fam.mdp.successors(&s).unwrap() {
            let total: BigRational = d.enumerate().iter().map(|b| b.prob.exact.as_deref().cloned().expect("exact")).sum();
            assert_eq!(total, BigRational::from_integer(1.into()), "{s}");
        }
    }
}

#[test]
fn rooting_moves_only_the_initial_state() {
    let sch = Arc::new(ParamSchedule::preset("quadratic").unwrap());
    let fam = build(FamilyKind::Chain, sch, false).unwrap();
    let root = StateRef::ints("s", &[5]);
    let r = rooted(fam.mdp.clone(), root.clone());
    assert_eq!(r.initial(), root);
    let a = r.successors(&root).unwrap().targets(16);
    let b = fam.mdp.successors(&root).unwrap().targets(16);
    assert_eq!(a, b);
    assert_eq!(r.reward(&StateRef::ints("a", &[5, 1]), &StateRef::ints("c", &[5])).unwrap(), fam.mdp.reward(&StateRef::ints("a", &[5, 1]), &StateRef::ints("c", &[5])).unwrap());
}

#[test]
fn unknown_states_and_transitions_error() {
    let sch = Arc::new(ParamSchedule::preset("quadratic").unwrap());
    let fam = build(FamilyKind::Chain, sch, false).unwrap();
    assert!(fam.mdp.successors(&StateRef::atom("nowhere")).is_err());
    assert!(fam.mdp.reward(&StateRef::ints("s", &[3]), &StateRef::ints("s", &[9])).is_err());
}

#[test]
fn lazy_choices_enumerate_in_order() {
    let fam = build(FamilyKind::InfBranch, Arc::new(ParamSchedule::preset("quadratic").unwrap()), true).unwrap();
    let succ = fam.mdp.successors(&StateRef::atom("s")).unwrap();
    assert!(!succ.is_finite());
    let t = succ.targets(5);
    assert_eq!(t, (1..=5).map(|i| StateRef::ints("r", &[i])).collect::<Vec<_>>());
}
