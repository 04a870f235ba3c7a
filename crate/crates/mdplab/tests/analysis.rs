use mdplab::analysis::{
    condensation_classify, exact_product, exact_sum, fr_decay_bound, local_error, local_error_sum, min_pair_local_error,
    n_epsilon, product_sum, survival_product, survival_product_exact, tail_index, tail_survival_lower, wilson_interval,
    Majorant, Minorant, ProductClass, SeriesClass,
};
use mdplab::schedule::ParamSchedule;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;

/// Wilson bounds as roots of (p̂ − p)² = z² p(1−p)/n.
fn wilson_oracle(s: u64, n: u64, z: f64) -> (f64, f64) {
    let (nf, ph) = (n as f64, s as f64 / n as f64);
    let a = 1.0 + z * z / nf;
    let b = -(2.0 * ph + z * z / nf);
    let c = ph * ph;
    let d = (b * b - 4.0 * a * c).max(0.0).sqrt();
    ((-b - d) / (2.0 * a), (-b + d) / (2.0 * a))
}

proptest! {
    #[test]
    fn wilson_matches_the_quadratic(n in 1u64..100_000, frac in 0.0f64..=1.0, z in 0.5f64..4.0) {
        let s = ((n as f64) * frac).round() as u64;
        let (lo, hi) = wilson_interval(s, n, z);
        let (olo, ohi) = wilson_oracle(s, n, z);
        prop_assert!(0.0 <= lo && lo <= s as f64 / n as f64 && s as f64 / n as f64 <= hi && hi <= 1.0);
        if s > 0 { prop_assert!((lo - olo).abs() < 1e-9); } else { prop_assert_eq!(lo, 0.0); }
        if s < n { prop_assert!((hi - ohi).abs() < 1e-9); } else { prop_assert_eq!(hi, 1.0); }
    }

    #[test]
    fn geometric_products_are_positive_and_bounded(c in 0.01f64..0.9, r in 0.05f64..0.95, to in 5u64..400) {
        let a = move |n: u64| c * r.powf(n as f64);
        let ps = product_sum(a, 1, to, Some(&Majorant::Geometric { c, r }), None);
        prop_assert_eq!(ps.class, ProductClass::Positive);
        let brute = (1..=to + 4000).fold(1.0f64, |acc, n| acc * (1.0 - a(n)));
        let lower = ps.product_lower.unwrap();
        prop_assert!(lower <= brute + 1e-12 && brute <= ps.product + 1e-12);
        let sum: f64 = (1..=to).map(a).sum();
        prop_assert!((ps.sum - sum).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn tail_index_is_minimal(c in 0.01f64..1.0, p in 1.2f64..3.0, eps in 0.001f64..0.3) {
        let m = Majorant::Power { c, p };
        let n = tail_index(1, eps, Some(&m)).unwrap();
        prop_assert!(m.tail_upper(n).unwrap() <= eps);
        prop_assert!(n == 1 || m.tail_upper(n - 1).unwrap() > eps);
    }

    #[test]
    fn local_error_is_linear_in_alpha(di in 0.0f64..1.0, dj in 0.0f64..1.0, ei in 0.0f64..1.0, ej in 0.0f64..1.0, t in 0.0f64..1.0) {
        let mid = local_error(di, dj, ei, ej, t);
        let ends = (1.0 - t) * local_error(di, dj, ei, ej, 0.0) + t * local_error(di, dj, ei, ej, 1.0);
        prop_assert!((mid - ends).abs() < 1e-12);
    }
}

#[test]
fn divergent_sequences_are_zero() {
    let ps = product_sum(|n| 0.5 / n as f64, 1, 5000, None, Some(&Minorant::Power { c: 0.5, p: 1.0 }));
    assert_eq!(ps.class, ProductClass::Zero);
    let ps = product_sum(|n| if n == 7 { 1.0 } else { 0.01 }, 1, 10, None, None);
    assert_eq!(ps.class, ProductClass::Zero);
    // no comparison given
    let ps = product_sum(|n| 0.5 / n as f64, 1, 50, None, None);
    assert_eq!(ps.class, ProductClass::Inconclusive);
}

#[test]
fn wrong_majorant_is_not_trusted() {
    // claims c/n^2 but the sequence is c/n
    let ps = product_sum(|n| 0.3 / n as f64, 1, 100, Some(&Majorant::Power { c: 0.3, p: 2.0 }), None);
    assert_ne!(ps.class, ProductClass::Positive);
}

#[test]
fn condensation_on_textbook_series() {
    assert_eq!(condensation_classify(|x| 1.0 / (x * x), 20).class, SeriesClass::Convergent);
    assert_eq!(condensation_classify(|x| 2f64.powf(-x / 100.0), 20).class, SeriesClass::Convergent);
    assert_eq!(condensation_classify(|x| 1.0 / x, 20).class, SeriesClass::Divergent);
    assert_eq!(condensation_classify(|x| 1.0 / (x * x.max(2.0).ln()), 20).class, SeriesClass::Divergent);
    let v = condensation_classify(|x| 1.0 / (x * x), 16);
    let (n, s) = *v.checkpoints.last().unwrap();
    let direct: f64 = (1..=n).map(|m| 1.0 / (m as f64 * m as f64)).sum();
    assert!((s - direct).abs() < 1e-9);
}

#[test]
fn exact_products_and_sums() {
    let half = |n: u64| BigRational::new(1.into(), (n + 1).into());
    // Π_{n=1}^{N} (1 − 1/(n+1)) = 1/(N+1), Σ telescopes for 1/(n(n+1))
    assert_eq!(exact_product(half, 1, 99), BigRational::new(1.into(), 100.into()));
    let tele = |n: u64| BigRational::new(1.into(), (n * (n + 1)).into());
    assert_eq!(exact_sum(tele, 1, 49), BigRational::new(49.into(), 50.into()));
}

#[test]
fn survival_float_tracks_the_exact_product() {
    for name in ["quadratic", "halving", "linear"] {
        let s = ParamSchedule::preset(name).unwrap();
        let exact = survival_product_exact(&s, s.nstar, 40).unwrap().to_f64().unwrap();
        let f = survival_product(&s, s.nstar, Some(40));
        assert!((f.value - exact).abs() <= f.error + 1e-15, "{name}: {} vs {exact}", f.value);
        assert!(f.tail_lower.is_none());
        let inf = survival_product(&s, s.nstar, None);
        if let Some(lo) = inf.tail_lower {
            assert!(lo <= exact);
        }
    }
}

#[test]
fn n_epsilon_is_the_first_certified_index() {
    let s = ParamSchedule::preset("quadratic").unwrap();
    for eps in [0.5, 0.1, 0.01] {
        let n = n_epsilon(&s, eps).unwrap();
        let certified = |m: i64| {
            tail_survival_lower(&s, m).is_some_and(|v| v >= 1.0 - eps)
                || s.risk_tail_bound(m).is_some_and(|t| t <= eps)
        };
        assert!(certified(n), "eps={eps} n={n}");
        assert!(n == s.nstar || !tail_survival_lower(&s, n - 1).is_some_and(|v| v >= 1.0 - eps));
    }
}

#[test]
fn fr_bounds_recompute_from_local_errors() {
    let s = ParamSchedule::preset("linear").unwrap();
    for k in [1u32, 2, 4] {
        for g in [s.nstar + 5, s.nstar + 30] {
            let big: Vec<i64> = (s.nstar..=g).filter(|&n| s.k(n).unwrap() > k + 1).collect();
            let prod: f64 = big.iter().map(|&n| 1.0 - min_pair_local_error(&s, n).unwrap()).product();
            let sum: f64 = big.iter().map(|&n| min_pair_local_error(&s, n).unwrap()).sum();
            assert!((fr_decay_bound(&s, k, g) - prod).abs() < 1e-9);
            assert!((local_error_sum(&s, k, g) - sum).abs() < 1e-9);
            // 1 − x ≤ e^{−x}
            assert!(prod <= (-sum).exp() + 1e-12);
        }
    }
}
