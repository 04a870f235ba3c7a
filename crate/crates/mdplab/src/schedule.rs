//! Parameter schedules δ_i(n), ε_i(n), k(n), m(n) for the gadget families.

use std::f64::consts::E;
use std::sync::RwLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{int, Prob};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule spec: {0}")]
    InvalidSpec(String),
    #[error("h({0}) has no machine-representable value; only symbolic bounds exist")]
    SymbolicOnly(u32),
    #[error("gadget index {0} is outside the schedule domain")]
    OutOfDomain(i64),
    #[error("branch index {i} out of range at n={n}")]
    IndexOutOfRange { i: u32, n: i64 },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// Tower(0)=1, Tower(i+1)=e^{Tower(i)}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TowerValue {
    Exact(BigInt),
    Tower(u32),
}

impl TowerValue {
    /// i-fold natural logarithm; exact on symbolic towers.
    pub fn log_iter(&self, i: u32) -> Option<TowerValue> {
        match self {
            TowerValue::Tower(j) if i <= *j => Some(TowerValue::Tower(j - i)),
            TowerValue::Exact(v) if i == 0 => Some(TowerValue::Exact(v.clone())),
            _ => None,
        }
    }

    /// Float value; infinite beyond Tower(3).
    pub fn to_f64(&self) -> f64 {
        match self {
            TowerValue::Exact(v) => crate::mdp::rat_to_f64(&BigRational::from_integer(v.clone())),
            TowerValue::Tower(j) => tower_f64(*j),
        }
    }

    /// Certified upper bound on 1/value.
    pub fn recip_upper(&self) -> f64 {
        let v = self.to_f64();
        if v.is_finite() {
            next_up(1.0 / v)
        } else {
            // 1/Tower(4) < e^{-3.8e6}, far below the smallest subnormal
            f64::from_bits(1)
        }
    }
}

pub fn tower_f64(j: u32) -> f64 {
    let mut v = 1.0f64;
    for _ in 0..j {
        v = v.exp();
    }
    v
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let b = x.to_bits();
    f64::from_bits(if x > 0.0 { b + 1 } else { b - 1 })
}

/// j-fold natural logarithm of n; `None` when an intermediate is ≤ 0.
pub fn log_iter(n: f64, j: u32) -> Option<f64> {
    let mut v = n;
    for _ in 0..j {
        if v <= 0.0 {
            return None;
        }
        v = v.ln();
    }
    Some(v)
}

/// δ_i(n) of the log-tower family: 1/ln n for i=0, 1/log_{i+1} n otherwise.
pub fn log_delta(i: u32, n: f64) -> f64 {
    match log_iter(n, i + 1) {
        Some(l) => 1.0 / l,
        None => f64::NAN,
    }
}

/// ε_0(n)=1/(n ln n), ε_{i+1}(n)=ε_i(n)/log_{i+2} n.
pub fn log_epsilon(i: u32, n: f64) -> f64 {
    let mut e = match log_iter(n, 1) {
        Some(l) => 1.0 / (n * l),
        None => return f64::NAN,
    };
    for j in 0..i {
        match log_iter(n, j + 2) {
            Some(l) => e /= l,
            None => return f64::NAN,
        }
    }
    e
}

/// δ_i evaluated at n = Tower(j): the reciprocal of the returned tower.
pub fn log_delta_at_tower(i: u32, j: u32) -> Option<TowerValue> {
    TowerValue::Tower(j).log_iter(i + 1)
}

/// Certified upper bound on Σ_{i<k} δ_i(Tower(k+1)), the smallest n with k(n)=k.
pub fn log_symbolic_delta_sum(k: u32) -> f64 {
    (0..k)
        .map(|i| log_delta_at_tower(i, k + 1).expect("i < k+1").recip_upper())
        .fold(0.0, |a, b| next_up(a + b))
}

#[derive(Clone, Debug, PartialEq)]
pub enum HValue {
    Exact(u64),
    /// Value of the integral-bound definition, as a float.
    Certified(f64),
}

/// g(i) via the integral tail bound ∫_N^∞ δ_{i−1}ε_{i−1} = 1/log_i(N).
pub fn tower_g(i: u32) -> Result<HValue, ScheduleError> {
    match i {
        1 => Ok(HValue::Exact(E.powi(2).ceil() as u64)),
        2 => Ok(HValue::Certified((2f64.powi(2)).exp().exp().ceil())),
        _ => Err(ScheduleError::SymbolicOnly(i)),
    }
}

/// Smallest m+1 with Σ_{n=from}^{m} ε_0(n) ≥ 1.
fn eps0_block_end(from: u64) -> u64 {
    let mut acc = 0.0;
    let mut m = from;
    loop {
        acc += log_epsilon(0, m as f64);
        if acc >= 1.0 {
            return m + 1;
        }
        m += 1;
    }
}

pub fn tower_h(i: u32) -> Result<HValue, ScheduleError> {
    match i {
        1 => Ok(HValue::Exact(2)),
        2 => {
            let g = match tower_g(2)? {
                HValue::Certified(v) => v,
                HValue::Exact(v) => v as f64,
            };
            let block = eps0_block_end(2) as f64;
            Ok(HValue::Certified(g.max(tower_f64(3).ceil()).max(block)))
        }
        _ => Err(ScheduleError::SymbolicOnly(i)),
    }
}

/// Symbolic lower bound h(i) ≥ Tower(i+1).
pub fn tower_h_lower(i: u32) -> TowerValue {
    TowerValue::Tower(i + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KRule {
    Const { k: u32 },
    /// k(n) = n
    Linear,
    /// k(n) = min(n, cap)
    Capped { cap: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DeltaRule {
    /// δ_i = 2^{-(i+shift)}
    Geometric { shift: u32 },
    /// δ_i = num/den for every i < k(n)
    Uniform { num: u64, den: u64 },
    /// δ_i = theta_i · n^{-x_i}
    Power { theta: Vec<f64>, x: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsRule {
    /// ε_i = (num/den) / (n² · 2^i)
    InvSquare { num: u64, den: u64 },
    /// ε_i = 2^{-(n+1)}
    Halving,
    /// ε_i = min(1, phi_i · n^{-y_i})
    Power { phi: Vec<f64>, y: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub name: String,
    pub k: KRule,
    pub delta: DeltaRule,
    pub epsilon: EpsRule,
    pub nstar: i64,
}

impl ToySpec {
    pub fn preset(name: &str) -> Result<ToySpec, ScheduleError> {
        let spec = match name {
            "quadratic" => ToySpec {
                name: name.into(),
                k: KRule::Capped { cap: 8 },
                delta: DeltaRule::Geometric { shift: 2 },
                epsilon: EpsRule::InvSquare { num: 1, den: 2 },
                nstar: 1,
            },
            "linear" => ToySpec {
                name: name.into(),
                k: KRule::Linear,
                delta: DeltaRule::Geometric { shift: 2 },
                epsilon: EpsRule::InvSquare { num: 1, den: 2 },
                nstar: 1,
            },
            "halving" => ToySpec {
                name: name.into(),
                k: KRule::Const { k: 1 },
                delta: DeltaRule::Uniform { num: 1, den: 2 },
                epsilon: EpsRule::Halving,
                nstar: 1,
            },
            "const2" => ToySpec {
                name: name.into(),
                k: KRule::Const { k: 2 },
                delta: DeltaRule::Uniform { num: 1, den: 4 },
                epsilon: EpsRule::InvSquare { num: 1, den: 2 },
                nstar: 1,
            },
            "dichotomy" => ToySpec {
                name: name.into(),
                k: KRule::Const { k: 3 },
                delta: DeltaRule::Power { theta: vec![0.55, 0.425, 0.325], x: vec![0.75, 0.375, 0.0] },
                epsilon: EpsRule::Power { phi: vec![1.29, 1.68, 1.68], y: vec![0.375, 0.75, 1.125] },
                nstar: 2,
            },
            "dichotomy4" => ToySpec {
                name: name.into(),
                k: KRule::Const { k: 4 },
                delta: DeltaRule::Power {
                    theta: vec![0.4, 0.333, 0.276, 0.229],
                    x: vec![0.8, 8.0 / 15.0, 4.0 / 15.0, 0.0],
                },
                epsilon: EpsRule::Power {
                    phi: vec![1.2, 1.447, 1.741, 2.09],
                    y: vec![4.0 / 15.0, 8.0 / 15.0, 0.8, 16.0 / 15.0],
                },
                nstar: 2,
            },
            _ => return Err(ScheduleError::UnknownPreset(name.into())),
        };
        Ok(spec)
    }

    pub const PRESETS: [&'static str; 6] = ["quadratic", "linear", "halving", "const2", "dichotomy", "dichotomy4"];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Provenance {
    LogTower,
    Toy(ToySpec),
}

#[derive(Default)]
struct MCache {
    /// (m(n), Σ_{i<n} m(i)) for n = nstar, nstar+1, ...
    chain: Vec<(BigInt, BigInt)>,
    ri: Vec<BigInt>,
}

pub struct ParamSchedule {
    pub provenance: Provenance,
    pub nstar: i64,
    cache: RwLock<MCache>,
}

impl std::fmt::Debug for ParamSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamSchedule").field("provenance", &self.provenance).field("nstar", &self.nstar).finish()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleReport {
    pub depth: i64,
    pub risk_partial: f64,
    pub risk_tail_bound: Option<f64>,
    pub local_error_partial: f64,
    pub violations: Vec<String>,
}

impl ParamSchedule {
    pub fn log_tower() -> ParamSchedule {
        ParamSchedule { provenance: Provenance::LogTower, nstar: 3, cache: RwLock::default() }
    }

    pub fn toy(spec: ToySpec) -> Result<ParamSchedule, ScheduleError> {
        let s = ParamSchedule { nstar: spec.nstar, provenance: Provenance::Toy(spec), cache: RwLock::default() };
        if s.nstar < 1 {
            return Err(ScheduleError::InvalidSpec("nstar must be ≥ 1".into()));
        }
        let report = s.validity_report(s.nstar + 2000);
        if let Some(v) = report.violations.first() {
            return Err(ScheduleError::InvalidSpec(v.clone()));
        }
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<ParamSchedule, ScheduleError> {
        if name == "log-tower" {
            return Ok(ParamSchedule::log_tower());
        }
        ParamSchedule::toy(ToySpec::preset(name)?)
    }

    pub fn name(&self) -> String {
        match &self.provenance {
            Provenance::LogTower => "log-tower".into(),
            Provenance::Toy(s) => s.name.clone(),
        }
    }

    pub fn is_exact(&self) -> bool {
        match &self.provenance {
            Provenance::LogTower => false,
            Provenance::Toy(s) => {
                !matches!(s.delta, DeltaRule::Power { .. }) && !matches!(s.epsilon, EpsRule::Power { .. })
            }
        }
    }

    /// k(n): number of non-top branches of gadget n.
    pub fn k(&self, n: i64) -> Result<u32, ScheduleError> {
        match &self.provenance {
            Provenance::LogTower => {
                // h(1)=2 and h(2) > 5e23 exceeds every i64
                if n < 2 {
                    Err(ScheduleError::OutOfDomain(n))
                } else {
                    Ok(1)
                }
            }
            Provenance::Toy(s) => {
                if n < 1 {
                    return Err(ScheduleError::OutOfDomain(n));
                }
                Ok(match s.k {
                    KRule::Const { k } => k,
                    KRule::Linear => n as u32,
                    KRule::Capped { cap } => (n as u32).min(cap),
                })
            }
        }
    }

    fn raw_delta(&self, i: u32, n: i64, exact: bool) -> Prob {
        match &self.provenance {
            Provenance::LogTower => Prob::float(log_delta(i, n as f64)),
            Provenance::Toy(s) => match &s.delta {
                DeltaRule::Geometric { shift } => {
                    if exact {
                        Prob::exact(BigRational::new(BigInt::one(), BigInt::one() << (i + shift)))
                    } else {
                        Prob::float(2f64.powi(-((i + shift) as i32)))
                    }
                }
                DeltaRule::Uniform { num, den } => {
                    if exact {
                        Prob::ratio(*num, *den)
                    } else {
                        Prob::float(*num as f64 / *den as f64)
                    }
                }
                DeltaRule::Power { theta, x } => {
                    let idx = (i as usize).min(theta.len() - 1);
                    Prob::float(theta[idx] * (n as f64).powf(-x[idx.min(x.len() - 1)]))
                }
            },
        }
    }

    fn raw_epsilon(&self, i: u32, n: i64, exact: bool) -> Prob {
        match &self.provenance {
            Provenance::LogTower => Prob::float(log_epsilon(i, n as f64)),
            Provenance::Toy(s) => match &s.epsilon {
                EpsRule::InvSquare { num, den } => {
                    if exact {
                        let d = BigInt::from(*den) * BigInt::from(n) * BigInt::from(n) * (BigInt::one() << i);
                        Prob::exact(BigRational::new(BigInt::from(*num), d))
                    } else {
                        Prob::float(*num as f64 / (*den as f64 * (n as f64).powi(2) * 2f64.powi(i as i32)))
                    }
                }
                EpsRule::Halving => {
                    if exact {
                        Prob::exact(BigRational::new(BigInt::one(), BigInt::one() << (n as u32 + 1)))
                    } else {
                        Prob::float(2f64.powi(-(n as i32 + 1)))
                    }
                }
                EpsRule::Power { phi, y } => {
                    let idx = (i as usize).min(phi.len() - 1);
                    Prob::float((phi[idx] * (n as f64).powf(-y[idx.min(y.len() - 1)])).min(1.0))
                }
            },
        }
    }

    /// δ_i(n) for i ≤ k(n); the top branch takes the remaining mass.
    pub fn delta(&self, i: u32, n: i64, exact: bool) -> Result<Prob, ScheduleError> {
        let k = self.k(n)?;
        let exact = exact && self.is_exact();
        if i < k {
            Ok(self.raw_delta(i, n, exact))
        } else if i == k {
            if exact {
                let mut rest = BigRational::one();
                for j in 0..k {
                    rest -= &*self.raw_delta(j, n, true).exact.expect("exact toy");
                }
                Ok(Prob::exact(rest))
            } else {
                let s: f64 = (0..k).map(|j| self.raw_delta(j, n, false).value).sum();
                Ok(Prob::float(1.0 - s))
            }
        } else {
            Err(ScheduleError::IndexOutOfRange { i, n })
        }
    }

    /// ε_i(n) for i ≤ k(n), with ε_{k(n)}(n) = 0.
    pub fn epsilon(&self, i: u32, n: i64, exact: bool) -> Result<Prob, ScheduleError> {
        let k = self.k(n)?;
        let exact = exact && self.is_exact();
        if i < k {
            Ok(self.raw_epsilon(i, n, exact))
        } else if i == k {
            Ok(if exact { Prob::exact(BigRational::zero()) } else { Prob::float(0.0) })
        } else {
            Err(ScheduleError::IndexOutOfRange { i, n })
        }
    }

    /// R_n = Σ_{j<k(n)} δ_j(n) ε_j(n).
    pub fn risk(&self, n: i64) -> f64 {
        let k = self.k(n).unwrap_or(0);
        (0..k).map(|j| self.raw_delta(j, n, false).value * self.raw_epsilon(j, n, false).value).sum()
    }

    pub fn risk_exact(&self, n: i64) -> Option<BigRational> {
        if !self.is_exact() {
            return None;
        }
        let k = self.k(n).ok()?;
        let mut acc = BigRational::zero();
        for j in 0..k {
            acc += &*self.raw_delta(j, n, true).exact? * &*self.raw_epsilon(j, n, true).exact?;
        }
        Some(acc)
    }

    /// Certified bound on Σ_{n≥from} R_n, if the schedule family admits one.
    pub fn risk_tail_bound(&self, from: i64) -> Option<f64> {
        let from = from.max(self.nstar);
        match &self.provenance {
            Provenance::LogTower => None,
            Provenance::Toy(s) => match (&s.delta, &s.epsilon) {
                (_, EpsRule::InvSquare { num, den }) => {
                    // δ_j ≤ 1 and Σ_j 2^{-j} < 2, so R_n ≤ 2c/n²; Σ_{n≥N} 1/n² ≤ 1/(N−1/2)
                    let c = *num as f64 / *den as f64;
                    let dsum: f64 = match &s.delta {
                        DeltaRule::Geometric { shift } => 2f64.powi(1 - *shift as i32),
                        DeltaRule::Uniform { num, den } => *num as f64 / *den as f64 * 2.0,
                        DeltaRule::Power { .. } => 2.0,
                    };
                    Some(next_up(c * dsum / (from as f64 - 0.5)))
                }
                (DeltaRule::Uniform { num, den }, EpsRule::Halving) => {
                    // Σ_{n≥N} k·δ·2^{-(n+1)} = k·δ·2^{-N}
                    let k = self.k(from).ok()? as f64;
                    Some(next_up(k * (*num as f64 / *den as f64) * 2f64.powi(-(from as i32))))
                }
                (DeltaRule::Power { theta, x }, EpsRule::Power { phi, y }) => {
                    // R_n ≤ Σ_i θ_iφ_i n^{-(x_i+y_i)} ≤ C n^{-p}, p = min_i(x_i+y_i) > 1
                    let p = x.iter().zip(y).map(|(a, b)| a + b).fold(f64::INFINITY, f64::min);
                    if p <= 1.0 {
                        return None;
                    }
                    let c: f64 = theta.iter().zip(phi).map(|(a, b)| a * b).sum();
                    let nf = from as f64;
                    // Σ_{n≥N} n^{-p} ≤ N^{-p} + N^{1-p}/(p-1)
                    Some(next_up(c * (nf.powf(-p) + nf.powf(1.0 - p) / (p - 1.0)) * (1.0 + 1e-12)))
                }
                _ => None,
            },
        }
    }

    /// m(n) for the chain family: m(nstar)=1, m(n)=2k(n)·Σ_{i<n} m(i).
    pub fn m_chain(&self, n: i64) -> Result<BigInt, ScheduleError> {
        if n < self.nstar {
            return Err(ScheduleError::OutOfDomain(n));
        }
        let idx = (n - self.nstar) as usize;
        if let Some((m, _)) = self.cache.read().expect("cache").chain.get(idx) {
            return Ok(m.clone());
        }
        let mut c = self.cache.write().expect("cache");
        while c.chain.len() <= idx {
            let cur = self.nstar + c.chain.len() as i64;
            let entry = match c.chain.last() {
                None => (BigInt::one(), BigInt::zero()),
                Some((m, pre)) => {
                    let pre = pre + m;
                    (BigInt::from(2 * self.k(cur)? as u64) * &pre, pre)
                }
            };
            c.chain.push(entry);
        }
        Ok(c.chain[idx].0.clone())
    }

    /// m(n) for the reward-implicit family: m(nstar)=1, m(n)=Σ_{i<n} m(i)^{k(n)}.
    pub fn m_ri(&self, n: i64) -> Result<BigInt, ScheduleError> {
        if n < self.nstar {
            return Err(ScheduleError::OutOfDomain(n));
        }
        let idx = (n - self.nstar) as usize;
        if let Some(m) = self.cache.read().expect("cache").ri.get(idx) {
            return Ok(m.clone());
        }
        let mut c = self.cache.write().expect("cache");
        while c.ri.len() <= idx {
            let cur = self.nstar + c.ri.len() as i64;
            let v = if c.ri.is_empty() {
                BigInt::one()
            } else {
                let k = self.k(cur)?;
                c.ri.iter().map(|m| Pow::pow(m, k)).sum()
            };
            c.ri.push(v);
        }
        Ok(c.ri[idx].clone())
    }

    /// Numeric evidence for both dichotomy conditions up to `depth`.
    pub fn validity_report(&self, depth: i64) -> ScheduleReport {
        let mut violations = Vec::new();
        let mut risk = 0.0;
        let mut le = 0.0;
        for n in self.nstar..=depth {
            let k = match self.k(n) {
                Ok(k) => k,
                Err(e) => {
                    violations.push(e.to_string());
                    break;
                }
            };
            let mut dsum = 0.0;
            for i in 0..k {
                let d = self.raw_delta(i, n, false).value;
                let e = self.raw_epsilon(i, n, false).value;
                if !(0.0..=1.0).contains(&d) || !(0.0..=1.0).contains(&e) || d.is_nan() || e.is_nan() {
                    violations.push(format!("n={n}, i={i}: δ={d}, ε={e} not probabilities"));
                }
                dsum += d;
            }
            if dsum > 1.0 + 1e-12 {
                violations.push(format!("n={n}: Σδ_i = {dsum} > 1"));
            }
            if self.is_exact() && n <= self.nstar + 64 {
                let mut ex = BigRational::zero();
                for i in 0..k {
                    ex += &*self.raw_delta(i, n, true).exact.expect("exact");
                }
                if ex > BigRational::one() {
                    violations.push(format!("n={n}: exact Σδ_i > 1"));
                }
            }
            risk += self.risk(n);
            if (2..=128).contains(&k) && n <= self.nstar + 400 {
                le += crate::analysis::min_pair_local_error(self, n).unwrap_or(0.0);
            }
            if violations.len() > 16 {
                break;
            }
        }
        ScheduleReport {
            depth,
            risk_partial: risk,
            risk_tail_bound: self.risk_tail_bound(self.nstar),
            local_error_partial: le,
            violations,
        }
    }

    /// Log-tower check of Σ_{i<k(n)} δ_i(n) ≤ 1 on `from..=to`.
    pub fn delta_sum_violations(&self, from: i64, to: i64) -> Vec<(i64, f64)> {
        let mut out = Vec::new();
        for n in from..=to {
            let Ok(k) = self.k(n) else { continue };
            let s: f64 = (0..k).map(|i| self.raw_delta(i, n, false).value).sum();
            if !(s <= 1.0 + 1e-12) {
                out.push((n, s));
            }
        }
        out
    }
}

/// Reference value of m(n) in small integers, for cross-checks.
pub fn m_chain_i128(k: impl Fn(i64) -> u32, nstar: i64, n: i64) -> i128 {
    let mut ms: Vec<i128> = vec![1];
    for cur in nstar + 1..=n {
        let s: i128 = ms.iter().sum();
        ms.push(2 * k(cur) as i128 * s);
    }
    *ms.last().unwrap()
}

pub fn int_rational(v: i64) -> BigRational {
    int(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas() {
        assert!((log_delta(0, 100.0) - 0.217147).abs() < 1e-6);
        assert!((log_epsilon(1, 100.0) - 0.0014219).abs() < 1e-7);
    }

    #[test]
    fn tower_logs() {
        for j in 0..8 {
            for i in 0..=j {
                assert_eq!(TowerValue::Tower(j).log_iter(i), Some(TowerValue::Tower(j - i)));
            }
        }
        assert_eq!(log_delta_at_tower(1, 5), Some(TowerValue::Tower(3)));
        assert!((tower_f64(3) - 3.8142791e6).abs() < 1.0);
    }

    #[test]
    fn const_two_m() {
        let s = ParamSchedule::preset("const2").unwrap();
        assert_eq!(s.m_chain(2).unwrap(), BigInt::from(4));
        assert_eq!(s.m_chain(3).unwrap(), BigInt::from(20));
    }

    #[test]
    fn invalid_spec() {
        let spec = ToySpec {
            name: "bad".into(),
            k: KRule::Const { k: 3 },
            delta: DeltaRule::Uniform { num: 1, den: 2 },
            epsilon: EpsRule::Halving,
            nstar: 1,
        };
        assert!(matches!(ParamSchedule::toy(spec), Err(ScheduleError::InvalidSpec(_))));
    }

    #[test]
    fn h_values() {
        assert_eq!(tower_h(1), Ok(HValue::Exact(2)));
        assert_eq!(tower_g(1), Ok(HValue::Exact(8)));
        match tower_h(2).unwrap() {
            HValue::Certified(v) => assert!(v > 5.1e23 && v < 5.2e23),
            h => panic!("{h:?}"),
        }
        assert_eq!(tower_h(3), Err(ScheduleError::SymbolicOnly(3)));
    }
}
