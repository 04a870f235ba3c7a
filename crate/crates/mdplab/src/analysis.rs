//! Series, products and bounds: product/sum dichotomy, tail indices, survival
//! products, local error bounds, condensation and Wilson intervals.

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::schedule::ParamSchedule;

/// Padding used when comparing float evidence against thresholds.
pub const PAD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("sequence not certified summable")]
    NotSummable,
    #[error("need 0 ≤ i < j < k(n); got i={i}, j={j}, k(n)={k}")]
    IndexOutOfRange { i: u32, j: u32, k: u32 },
}

/// Dominating bound a_n ≤ bound(n), used to certify tails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Majorant {
    /// a_n ≤ c·r^n with 0 ≤ r < 1
    Geometric { c: f64, r: f64 },
    /// a_n ≤ c·n^{-p}
    Power { c: f64, p: f64 },
}

impl Majorant {
    /// Upper bound on Σ_{n≥from} a_n, or `None` if the majorant diverges.
    pub fn tail_upper(&self, from: u64) -> Option<f64> {
        let from = from.max(1) as f64;
        match *self {
            Majorant::Geometric { c, r } if (0.0..1.0).contains(&r) => Some(c * r.powf(from) / (1.0 - r) * (1.0 + PAD)),
            Majorant::Power { c, p } if p > 1.0 => {
                Some(c * (from.powf(-p) + from.powf(1.0 - p) / (p - 1.0)) * (1.0 + PAD))
            }
            _ => None,
        }
    }

    pub fn value(&self, n: u64) -> f64 {
        match *self {
            Majorant::Geometric { c, r } => c * r.powf(n as f64),
            Majorant::Power { c, p } => c * (n as f64).powf(-p),
        }
    }
}

/// Lower comparison a_n ≥ c/n^p (p ≤ 1) or a_n ≥ c/(n ln n), certifying divergence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Minorant {
    Power { c: f64, p: f64 },
    NLogN { c: f64 },
}

impl Minorant {
    pub fn value(&self, n: u64) -> f64 {
        let x = n as f64;
        match *self {
            Minorant::Power { c, p } => c * x.powf(-p),
            Minorant::NLogN { c } => c / (x * x.ln()),
        }
    }

    pub fn diverges(&self) -> bool {
        match *self {
            Minorant::Power { c, p } => c > 0.0 && p <= 1.0,
            Minorant::NLogN { c } => c > 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProductClass {
    /// Σa finite (certified), hence Π(1−a) > 0.
    Positive,
    /// Σa infinite (certified) or some a_n = 1, hence Π(1−a) = 0.
    Zero,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductSum {
    pub product: f64,
    pub sum: f64,
    pub class: ProductClass,
    /// Certified lower bound on the infinite product when class is Positive.
    pub product_lower: Option<f64>,
}

/// Partial product Π(1−a_n) and sum Σa_n over n in `from..=to`, classified
/// by the product/sum dichotomy using the supplied comparison bounds.
pub fn product_sum(
    a: impl Fn(u64) -> f64,
    from: u64,
    to: u64,
    majorant: Option<&Majorant>,
    minorant: Option<&Minorant>,
) -> ProductSum {
    let mut product = 1.0;
    let mut sum = 0.0;
    let mut hits_one = false;
    let mut major_ok = true;
    let mut minor_ok = true;
    for n in from..=to {
        let v = a(n);
        product *= 1.0 - v;
        sum += v;
        hits_one |= v >= 1.0;
        if let Some(m) = majorant {
            major_ok &= v <= m.value(n) * (1.0 + PAD) + PAD * 1e-300;
        }
        if let Some(m) = minorant {
            minor_ok &= n < 2 || v >= m.value(n) * (1.0 - PAD);
        }
    }
    let tail = majorant.filter(|_| major_ok).and_then(|m| m.tail_upper(to + 1));
    let (class, product_lower) = if hits_one {
        (ProductClass::Zero, None)
    } else if let Some(t) = tail {
        // Π_{n>to}(1−a_n) ≥ 1 − Σ_{n>to} a_n
        (ProductClass::Positive, Some(product * (1.0 - t).max(0.0) * (1.0 - PAD)))
    } else if minorant.is_some_and(|m| minor_ok && m.diverges()) {
        (ProductClass::Zero, None)
    } else {
        (ProductClass::Inconclusive, None)
    };
    ProductSum { product, sum, class, product_lower }
}

/// Smallest N ≥ `from` whose certified lower bound 1 − Σ_{n≥N} a_n on
/// Π_{n≥N}(1−a_n) is at least 1−ε.
pub fn tail_index(from: u64, eps: f64, bound: Option<&Majorant>) -> Result<u64, AnalysisError> {
    if eps >= 1.0 {
        return Ok(from);
    }
    let b = bound.ok_or(AnalysisError::NotSummable)?;
    b.tail_upper(from).ok_or(AnalysisError::NotSummable)?;
    // tail_upper is nonincreasing: gallop, then bisect
    let ok = |n: u64| b.tail_upper(n).is_some_and(|t| t <= eps);
    if ok(from) {
        return Ok(from);
    }
    let mut lo = from;
    let mut step = 1u64;
    let mut hi = loop {
        let cand = from.saturating_add(step);
        if ok(cand) {
            break cand;
        }
        if cand == u64::MAX {
            return Err(AnalysisError::NotSummable);
        }
        lo = cand;
        step = step.saturating_mul(2);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, Serialize)]
pub struct Survival {
    /// Π over the finite range (float).
    pub value: f64,
    /// Absolute error bound on `value` from float rounding.
    pub error: f64,
    /// Certified lower bound on the infinite product, when requested.
    pub tail_lower: Option<f64>,
}

/// Π_{n=from}^{to} (1 − Σ_{j<k(n)} δ_j(n) ε_j(n)); `to = None` asks for a
/// certified lower bound on the infinite product.
pub fn survival_product(schedule: &ParamSchedule, from: i64, to: Option<i64>) -> Survival {
    let from = from.max(schedule.nstar);
    let depth = to.unwrap_or(from + 20_000);
    let mut value = 1.0;
    let mut steps = 0usize;
    for n in from..=depth {
        value *= 1.0 - schedule.risk(n);
        steps += 1;
    }
    let error = (steps as f64 + 1.0) * 4.0 * f64::EPSILON;
    let tail_lower = if to.is_none() {
        schedule.risk_tail_bound(depth + 1).map(|t| ((value - error) * (1.0 - t)).max(0.0))
    } else {
        None
    };
    Survival { value, error, tail_lower }
}

/// Exact survival product for exact toy schedules.
pub fn survival_product_exact(schedule: &ParamSchedule, from: i64, to: i64) -> Option<BigRational> {
    let mut acc = BigRational::one();
    for n in from.max(schedule.nstar)..=to {
        acc *= BigRational::one() - schedule.risk_exact(n)?;
    }
    Some(acc)
}

/// Certified lower bound on Π_{n≥N}(1 − R_n).
pub fn tail_survival_lower(schedule: &ParamSchedule, from: i64) -> Option<f64> {
    let mut value = 1.0;
    let depth = from + 4000;
    for n in from..=depth {
        value *= 1.0 - schedule.risk(n);
    }
    let t = schedule.risk_tail_bound(depth + 1)?;
    Some((value * (1.0 - t) - PAD).max(0.0))
}

/// Smallest N ≥ nstar with certified tail survival ≥ 1−ε. Near nstar the
/// windowed product is used; further out the union bound 1 − Σ_{m≥N} risk.
pub fn n_epsilon(schedule: &ParamSchedule, eps: f64) -> Option<i64> {
    let ns = schedule.nstar;
    if eps >= 1.0 {
        return Some(ns);
    }
    let union_ok = |n: i64| schedule.risk_tail_bound(n).is_some_and(|t| t <= eps);
    let union = if union_ok(ns) {
        Some(ns)
    } else {
        let mut hi = ns + 1;
        while !union_ok(hi) && hi < ns + (1 << 40) {
            hi = ns + (hi - ns) * 2;
        }
        union_ok(hi).then(|| {
            let mut lo = ns;
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if union_ok(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        })
    };
    let scan_end = union.unwrap_or(i64::MAX).min(ns + 500);
    (ns..scan_end)
        .find(|&n| tail_survival_lower(schedule, n).is_some_and(|v| v >= 1.0 - eps))
        .or(union)
}

/// δ_j(αε_j + (1−α)ε_i) + δ_i(α + (1−α)ε_i).
pub fn local_error(di: f64, dj: f64, ei: f64, ej: f64, alpha: f64) -> f64 {
    dj * (alpha * ej + (1.0 - alpha) * ei) + di * (alpha + (1.0 - alpha) * ei)
}

/// Minimum over α ∈ [0,1]; the form is linear in α so an endpoint attains it.
pub fn local_error_min(di: f64, dj: f64, ei: f64, ej: f64) -> f64 {
    local_error(di, dj, ei, ej, 0.0).min(local_error(di, dj, ei, ej, 1.0))
}

fn pair_params(s: &ParamSchedule, n: i64, i: u32, j: u32) -> Result<(f64, f64, f64, f64), AnalysisError> {
    let k = s.k(n).unwrap_or(0);
    if !(i < j && j < k) {
        return Err(AnalysisError::IndexOutOfRange { i, j, k });
    }
    let g = |p: Result<crate::mdp::Prob, _>| p.map(|p: crate::mdp::Prob| p.value).unwrap_or(0.0);
    Ok((g(s.delta(i, n, false)), g(s.delta(j, n, false)), g(s.epsilon(i, n, false)), g(s.epsilon(j, n, false))))
}

pub fn local_error_bound(s: &ParamSchedule, n: i64, i: u32, j: u32, alpha: f64) -> Result<f64, AnalysisError> {
    let (di, dj, ei, ej) = pair_params(s, n, i, j)?;
    Ok(local_error(di, dj, ei, ej, alpha))
}

pub fn minimized_local_error(s: &ParamSchedule, n: i64, i: u32, j: u32) -> Result<f64, AnalysisError> {
    let (di, dj, ei, ej) = pair_params(s, n, i, j)?;
    Ok(local_error_min(di, dj, ei, ej))
}

/// The admissible pair i < j < k(n) minimizing e_n, with that minimum.
pub fn min_pair_with_error(s: &ParamSchedule, n: i64) -> Option<((i64, i64), f64)> {
    let k = s.k(n).ok()?;
    if k < 2 {
        return None;
    }
    let d: Vec<f64> = (0..k).map(|i| s.delta(i, n, false).map(|p| p.value).unwrap_or(0.0)).collect();
    let e: Vec<f64> = (0..k).map(|i| s.epsilon(i, n, false).map(|p| p.value).unwrap_or(0.0)).collect();
    let mut best = ((0, 1), f64::INFINITY);
    for i in 0..k as usize {
        for j in i + 1..k as usize {
            let v = local_error_min(d[i], d[j], e[i], e[j]);
            if v < best.1 {
                best = ((i as i64, j as i64), v);
            }
        }
    }
    Some(best)
}

pub fn min_pair(s: &ParamSchedule, n: i64) -> Option<(i64, i64)> {
    min_pair_with_error(s, n).map(|x| x.0)
}

/// e_n minimized over every admissible pair i < j < k(n).
pub fn min_pair_local_error(s: &ParamSchedule, n: i64) -> Option<f64> {
    min_pair_with_error(s, n).map(|x| x.1)
}

/// Π over gadgets n ≤ G with k(n) > k+1 of (1 − e_n).
pub fn fr_decay_bound(s: &ParamSchedule, k: u32, g: i64) -> f64 {
    let mut p = 1.0;
    for n in s.nstar..=g {
        if s.k(n).map(|kn| kn > k + 1).unwrap_or(false) {
            p *= 1.0 - min_pair_local_error(s, n).unwrap_or(0.0);
        }
    }
    (p + PAD).min(1.0)
}

/// Σ over gadgets n ≤ G with k(n) > k+1 of e_n.
pub fn local_error_sum(s: &ParamSchedule, k: u32, g: i64) -> f64 {
    (s.nstar..=g)
        .filter(|&n| s.k(n).map(|kn| kn > k + 1).unwrap_or(false))
        .map(|n| min_pair_local_error(s, n).unwrap_or(0.0))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SeriesClass {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesVerdict {
    pub class: SeriesClass,
    /// (n, partial sum Σ_{m≤n} term(m)) at n = 2^j.
    pub checkpoints: Vec<(u64, f64)>,
    /// Condensed terms 2^j·term(2^j).
    pub condensed: Vec<f64>,
    pub levels: u32,
    /// Certified tail bound of the condensed series beyond the last level.
    pub tail_bound: Option<f64>,
    pub reason: String,
}

/// Classifies Σ term(n) (term eventually nonincreasing, caller-asserted) via
/// the condensed series Σ 2^j term(2^j).
///
/// Convergent needs the condensed terms to be dominated by C·ρ^j or C·j^{-q}
/// with q ≥ 3/2 on the upper half of the levels. Divergent needs
/// j·c_j bounded below by a constant (the n ln n comparison). Everything else
/// is Inconclusive.
pub fn condensation_classify(term: impl Fn(f64) -> f64, levels: u32) -> SeriesVerdict {
    let levels = levels.clamp(8, 1000);
    let condensed: Vec<f64> = (0..=levels).map(|j| 2f64.powi(j as i32) * term(2f64.powi(j as i32))).collect();
    let mut checkpoints = Vec::new();
    if levels <= 24 {
        let mut acc = 0.0;
        let mut next = 1u64;
        for n in 1..=(1u64 << levels) {
            acc += term(n as f64);
            if n == next {
                checkpoints.push((n, acc));
                next <<= 1;
            }
        }
    }
    let lo = (levels / 2) as usize;
    let upper = &condensed[lo..];
    let js: Vec<f64> = (lo..=levels as usize).map(|j| j.max(1) as f64).collect();
    let mut verdict = SeriesVerdict {
        class: SeriesClass::Inconclusive,
        checkpoints,
        condensed: condensed.clone(),
        levels,
        tail_bound: None,
        reason: String::new(),
    };
    if upper.iter().any(|c| !c.is_finite() || *c < 0.0) {
        verdict.reason = "non-finite or negative condensed terms".into();
        return verdict;
    }
    if upper.iter().all(|&c| c == 0.0) {
        verdict.class = SeriesClass::Convergent;
        verdict.tail_bound = Some(0.0);
        verdict.reason = "terms vanish".into();
        return verdict;
    }
    let ratios: Vec<f64> = upper.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
    let rho = ratios.iter().cloned().fold(0.0, f64::max);
    if rho < 0.9 {
        let last = *upper.last().unwrap();
        verdict.class = SeriesClass::Convergent;
        verdict.tail_bound = Some(last * rho / (1.0 - rho));
        verdict.reason = format!("condensed ratio ≤ {rho:.4}");
        return verdict;
    }
    // local exponents q_j = −Δln c / Δln j
    let qs: Vec<f64> = upper
        .windows(2)
        .zip(js.windows(2))
        .map(|(c, j)| -(c[1] / c[0]).ln() / (j[1] / j[0]).ln())
        .collect();
    let qmin = qs.iter().cloned().fold(f64::INFINITY, f64::min);
    if qmin >= 1.5 {
        let c = upper.iter().zip(&js).map(|(c, j)| c * j.powf(qmin)).fold(0.0, f64::max);
        let l = levels as f64;
        verdict.class = SeriesClass::Convergent;
        verdict.tail_bound = Some(c * l.powf(1.0 - qmin) / (qmin - 1.0));
        verdict.reason = format!("condensed terms ≤ C·j^-{qmin:.3}");
        return verdict;
    }
    let scaled: Vec<f64> = upper.iter().zip(&js).map(|(c, j)| c * j).collect();
    let smin = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = scaled.iter().cloned().fold(0.0, f64::max);
    let nondecreasing = scaled.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    if smin > 0.0 && (nondecreasing || smax / smin < 1.0 + 1e-6) {
        verdict.class = SeriesClass::Divergent;
        verdict.reason = format!("j·c_j ≥ {smin:.4} (harmonic comparison)");
        return verdict;
    }
    verdict.reason = "no certified comparison".into();
    verdict
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Exact Π_{n=from}^{to}(1 − a_n) for rational sequences.
pub fn exact_product(a: impl Fn(u64) -> BigRational, from: u64, to: u64) -> BigRational {
    (from..=to).fold(BigRational::one(), |acc, n| acc * (BigRational::one() - a(n)))
}

pub fn exact_sum(a: impl Fn(u64) -> BigRational, from: u64, to: u64) -> BigRational {
    (from..=to).fold(BigRational::zero(), |acc, n| acc + a(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.0370).abs() < 1e-4);
        let (lo, hi) = wilson_interval(100, 100, 1.96);
        assert!((lo - 0.9630).abs() < 1e-4);
        assert_eq!(hi, 1.0);
        assert_eq!(wilson_interval(50, 100, 0.0), (0.5, 0.5));
    }

    #[test]
    fn local_error_example() {
        assert!((local_error(0.1, 0.2, 0.01, 0.001, 1.0) - 0.1002).abs() < 1e-12);
        assert!((local_error(0.1, 0.2, 0.01, 0.001, 0.0) - 0.003).abs() < 1e-12);
        assert!((local_error_min(0.1, 0.2, 0.01, 0.001) - 0.003).abs() < 1e-12);
        assert_eq!(local_error_min(0.3, 0.2, 0.0, 0.0), 0.0);
    }

    #[test]
    fn tail_index_examples() {
        let b = Majorant::Geometric { c: 0.25, r: 0.5 };
        assert_eq!(tail_index(1, 0.001, Some(&b)), Ok(9));
        assert_eq!(tail_index(3, 1.0, Some(&b)), Ok(3));
        let h = Majorant::Power { c: 1.0, p: 1.0 };
        assert_eq!(tail_index(1, 0.1, Some(&h)), Err(AnalysisError::NotSummable));
        assert_eq!(tail_index(1, 0.1, None), Err(AnalysisError::NotSummable));
    }

    #[test]
    fn condensation_examples() {
        let v = condensation_classify(|n| 1.0 / (n * n.ln()), 60);
        assert_eq!(v.class, SeriesClass::Divergent, "{}", v.reason);
        let v = condensation_classify(|n| 1.0 / (n * n.ln().powi(2)), 60);
        assert_eq!(v.class, SeriesClass::Convergent, "{}", v.reason);
        let v = condensation_classify(|n| 1.0 / (n * n), 60);
        assert_eq!(v.class, SeriesClass::Convergent, "{}", v.reason);
        let v = condensation_classify(|n| 1.0 / (n * n.ln() * n.ln().ln()), 60);
        assert_eq!(v.class, SeriesClass::Inconclusive, "{}", v.reason);
    }
}
