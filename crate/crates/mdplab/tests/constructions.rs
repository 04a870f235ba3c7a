use std::sync::Arc;

use mdplab::constructions::binarize::{chain_gadget_law, ri_gadget_law, OutcomeLaw};
use mdplab::constructions::infbranch::LoopTrajectory;
use mdplab::constructions::{build, build_named, BinChain, BinRi, ChainFamily, FamilyKind, RewardImplicit};
use mdplab::montecarlo::run_episode;
use mdplab::schedule::ParamSchedule;
use mdplab::strategy::loop_schedule;
use mdplab::{LazyMdp, StateRef, Successors};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

fn sch(name: &str) -> Arc<ParamSchedule> {
    Arc::new(ParamSchedule::preset(name).unwrap())
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// Law of one gadget written out by hand from the schedule: observe i with
/// δ_i, collect m·i, play j, pay m·j unless ⊥ strikes with ε_j.
fn oracle_law(s: &ParamSchedule, n: i64, j: i64) -> OutcomeLaw {
    let m = s.m_chain(n).unwrap();
    let k = s.k(n).unwrap() as i64;
    let eps = s.epsilon(j as u32, n, true).unwrap().to_rational();
    let mut law = OutcomeLaw::new();
    for i in 0..=k {
        let d = s.delta(i as u32, n, true).unwrap().to_rational();
        if d.is_zero() {
            continue;
        }
        let gain = &m * BigInt::from(i);
        let keep = &d * (BigRational::one() - &eps);
        if !keep.is_zero() {
            law.insert((i, &gain - &m * BigInt::from(j), false), keep);
        }
        let lost = &d * &eps;
        if !lost.is_zero() {
            law.insert((i, gain, true), lost);
        }
    }
    law
}

#[test]
fn chain_gadgets_match_the_hand_oracle() {
    for name in ["quadratic", "halving", "const2", "linear"] {
        let s = sch(name);
        let fam = ChainFamily::new(s.clone(), false, true);
        for n in s.nstar..s.nstar + 5 {
            for j in 0..=s.k(n).unwrap() as i64 {
                let law = chain_gadget_law(&fam, n, j).unwrap();
                assert_eq!(law, oracle_law(&s, n, j), "{name} n={n} j={j}");
                let mass: BigRational = law.values().cloned().sum();
                assert!(mass.is_one());
            }
        }
    }
}

#[test]
fn binarized_gadgets_keep_their_laws() {
    let s = sch("quadratic");
    let chain = ChainFamily::new(s.clone(), false, true);
    let bin = BinChain::new(s.clone(), true).unwrap();
    for n in s.nstar..s.nstar + 3 {
        for j in 0..=s.k(n).unwrap() as i64 {
            assert_eq!(bin.gadget_law(n, j).unwrap(), chain_gadget_law(&chain, n, j).unwrap(), "n={n} j={j}");
        }
    }
    let s = sch("const2");
    let ri = RewardImplicit::new(s.clone(), false, true);
    let bri = BinRi::new(s.clone(), true);
    for n in s.nstar..s.nstar + 3 {
        for j in 0..=s.k(n).unwrap() as i64 {
            assert_eq!(bri.gadget_law(n, j).unwrap(), ri_gadget_law(&ri, n, j).unwrap(), "n={n} j={j}");
        }
    }
}

#[test]
fn reward_implicit_gadgets_have_the_chain_outcomes() {
    // same observed-branch and ⊥ probabilities as the chain
    let s = sch("const2");
    let ri = RewardImplicit::new(s.clone(), false, true);
    for n in s.nstar..s.nstar + 3 {
        for j in 0..=s.k(n).unwrap() as i64 {
            let marginal = |law: &OutcomeLaw| {
                let mut out = std::collections::BTreeMap::new();
                for ((i, _, bot), p) in law {
                    *out.entry((*i, *bot)).or_insert_with(BigRational::zero) += p;
                }
                out
            };
            assert_eq!(marginal(&ri_gadget_law(&ri, n, j).unwrap()), marginal(&oracle_law(&s, n, j)));
        }
    }
}

#[test]
fn restart_edges_pay_the_refund_and_the_penalty() {
    let s = sch("quadratic");
    let fam = build(FamilyKind::Restart, s.clone(), true).unwrap();
    let ns = s.nstar;
    let n = ns + 2;
    let b: StateRef = StateRef::ints("b", &[0, ns, n, 1]);
    let r = StateRef::ints("r", &[1, n]);
    let m = |k: i64| BigRational::from_integer(s.m_chain(k).unwrap());
    assert_eq!(fam.mdp.reward(&b, &r).unwrap(), -m(n + 2));
    let entry = StateRef::ints("x", &[1, n + 2]);
    let Successors::Controlled(c) = fam.mdp.successors(&entry).unwrap() else { panic!("entry is controlled") };
    let into = c.get(0).unwrap();
    assert_eq!(fam.mdp.reward(&entry, &into).unwrap(), m(n + 2));
    // r → d → d → x is deterministic with reward 0
    let mut at = r.clone();
    for _ in 0..3 {
        let t = fam.mdp.successors(&at).unwrap().targets(4);
        assert_eq!(t.len(), 1);
        assert!(fam.mdp.reward(&at, &t[0]).unwrap().is_zero());
        at = t[0].clone();
    }
    assert_eq!(at, entry);
}

#[test]
fn small_families_have_their_stated_transitions() {
    let ib = build_named("inf-branch", "quadratic", true).unwrap();
    for i in 1..6i64 {
        let Successors::Random(d) = ib.mdp.successors(&StateRef::ints("r", &[i])).unwrap() else { panic!() };
        let e = d.enumerate();
        assert_eq!(e[0].target, StateRef::atom("t"));
        assert_eq!(e[0].prob.to_rational(), rat(1, 1 << i));
        assert_eq!(ib.mdp.reward(&StateRef::ints("r", &[i]), &StateRef::atom("t")).unwrap(), rat(-1, 1));
    }
    assert_eq!(ib.mdp.reward(&StateRef::atom("t"), &StateRef::atom("s")).unwrap(), rat(1, 1));

    let pu = build_named("puterman", "quadratic", true).unwrap();
    for k in 1..6i64 {
        let s = StateRef::ints("s", &[k]);
        assert_eq!(pu.mdp.reward(&s, &s).unwrap(), rat(-1, k));
        assert_eq!(pu.mdp.reward(&s, &StateRef::ints("s", &[k + 1])).unwrap(), rat(-1, 1));
    }
}

#[test]
fn loop_trajectory_matches_simulation() {
    let pu = build_named("puterman", "quadratic", true).unwrap();
    let traj = LoopTrajectory::new(|k| BigInt::from(1u64 << k), &BigInt::from(600));
    let run = run_episode(&*pu.mdp, &loop_schedule("pow2", |k| 1u64 << k), 600, 0).unwrap();
    let mut total = BigRational::zero();
    let mut ends = Vec::new();
    for (t, w) in run.states.windows(2).enumerate() {
        total += &run.rewards[t];
        if w[0] != w[1] {
            ends.push((w[0].int(0).unwrap(), BigInt::from(t + 1), total.clone()));
        }
    }
    assert_eq!(traj.phase_ends, ends[..traj.phase_ends.len()].to_vec());
    assert!(!traj.phase_ends.is_empty());
}

#[test]
fn unknown_family_is_an_error() {
    assert!(build_named("nope", "quadratic", false).is_err());
    assert!(build_named("chain", "nope", false).is_err());
}
