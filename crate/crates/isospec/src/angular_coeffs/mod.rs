//! Wigner 3j and 6j symbols, Clebsch-Gordan coefficients and rotation
//! matrices for integer angular momenta.
//!
//! Every symbol is evaluated exactly as `sign * sqrt(rational)` and cached;
//! the `f64` entry points read the cached float rendering.

mod exact;
mod rotation;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use num_bigint::BigInt;
use num_rational::BigRational;
use once_cell::sync::Lazy;
use parking_lot::RwLock;

pub use exact::{alternating_sum, rational_to_f64, CoefficientValue, Factored};
pub use rotation::{
    euler_to_rotation, rotation_to_euler, wigner_d_matrix, wigner_small_d, EulerAngles,
    RotationMatrixBlock,
};

use crate::error::{domain, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AngularIndex {
    pub l: i32,
    pub m: i32,
}

impl AngularIndex {
    pub fn new(l: i32, m: i32) -> Result<Self> {
        check_lm(l, m)?;
        Ok(AngularIndex { l, m })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    ThreeJ([i32; 6]),
    SixJ([i32; 6]),
}

const DEFAULT_CACHE_CAPACITY: usize = 1 << 20;

static CACHE: Lazy<RwLock<HashMap<Key, CoefficientValue>>> =
    Lazy::new(|| RwLock::new(HashMap::new()));
static CACHE_CAPACITY: AtomicUsize = AtomicUsize::new(DEFAULT_CACHE_CAPACITY);

/// Maximum number of cached symbols. When the table is full it is cleared
/// before the next insert.
pub fn set_cache_capacity(capacity: usize) {
    CACHE_CAPACITY.store(capacity, Ordering::Relaxed);
    let mut cache = CACHE.write();
    if cache.len() > capacity {
        cache.clear();
    }
}

pub fn cache_len() -> usize {
    CACHE.read().len()
}

pub fn clear_cache() {
    CACHE.write().clear();
}

fn cached(key: Key, compute: impl FnOnce() -> CoefficientValue) -> CoefficientValue {
    if let Some(v) = CACHE.read().get(&key) {
        return v.clone();
    }
    let value = compute();
    let capacity = CACHE_CAPACITY.load(Ordering::Relaxed);
    if capacity > 0 {
        let mut cache = CACHE.write();
        if cache.len() >= capacity {
            cache.clear();
        }
        cache.insert(key, value.clone());
    }
    value
}

fn check_l(l: i32) -> Result<()> {
    if l < 0 {
        return Err(domain(format!("negative multipole l = {l}")));
    }
    Ok(())
}

fn check_lm(l: i32, m: i32) -> Result<()> {
    check_l(l)?;
    if m.abs() > l {
        return Err(domain(format!("|m| > l for (l, m) = ({l}, {m})")));
    }
    Ok(())
}

pub fn triangle(a: i32, b: i32, c: i32) -> bool {
    c >= (a - b).abs() && c <= a + b
}

fn fact(n: i32) -> Factored {
    debug_assert!(n >= 0);
    Factored::factorial(n as u64)
}

fn parity_sign(n: i32) -> i8 {
    if n.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

/// Square of the triangle coefficient `(a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)!`.
fn triangle_factor(a: i32, b: i32, c: i32) -> Factored {
    fact(a + b - c)
        .mul(&fact(a - b + c))
        .mul(&fact(-a + b + c))
        .div(&fact(a + b + c + 1))
}

fn compute_3j(l1: i32, l2: i32, l3: i32, m1: i32, m2: i32, m3: i32) -> CoefficientValue {
    let radicand = triangle_factor(l1, l2, l3)
        .mul(&fact(l1 + m1))
        .mul(&fact(l1 - m1))
        .mul(&fact(l2 + m2))
        .mul(&fact(l2 - m2))
        .mul(&fact(l3 + m3))
        .mul(&fact(l3 - m3));
    let kmin = 0.max(l2 - l3 - m1).max(l1 - l3 + m2);
    let kmax = (l1 + l2 - l3).min(l1 - m1).min(l2 + m2);
    let terms: Vec<(i8, Factored)> = (kmin..=kmax)
        .map(|k| {
            let den = fact(k)
                .mul(&fact(l3 - l2 + k + m1))
                .mul(&fact(l3 - l1 + k - m2))
                .mul(&fact(l1 + l2 - l3 - k))
                .mul(&fact(l1 - k - m1))
                .mul(&fact(l2 - k + m2));
            (parity_sign(k), Factored::one().div(&den))
        })
        .collect();
    let (s, g) = alternating_sum(&terms);
    CoefficientValue::from_parts(parity_sign(l1 - l2 - m3), &radicand, &s, &g)
}

/// Exact Wigner 3j symbol.
pub fn wigner3j_exact(l1: i32, l2: i32, l3: i32, m1: i32, m2: i32, m3: i32) -> Result<CoefficientValue> {
    check_lm(l1, m1)?;
    check_lm(l2, m2)?;
    check_lm(l3, m3)?;
    if m1 + m2 + m3 != 0 || !triangle(l1, l2, l3) {
        return Ok(CoefficientValue::zero());
    }
    Ok(cached(Key::ThreeJ([l1, l2, l3, m1, m2, m3]), || {
        compute_3j(l1, l2, l3, m1, m2, m3)
    }))
}

pub fn wigner3j(l1: i32, l2: i32, l3: i32, m1: i32, m2: i32, m3: i32) -> Result<f64> {
    Ok(wigner3j_exact(l1, l2, l3, m1, m2, m3)?.float)
}

/// Exact Clebsch-Gordan coefficient `C^{l3 m3}_{l1 m1 l2 m2}`.
pub fn clebsch_gordan_exact(l1: i32, m1: i32, l2: i32, m2: i32, l3: i32, m3: i32) -> Result<CoefficientValue> {
    check_lm(l1, m1)?;
    check_lm(l2, m2)?;
    check_lm(l3, m3)?;
    if m1 + m2 != m3 {
        return Ok(CoefficientValue::zero());
    }
    let tj = wigner3j_exact(l1, l2, l3, m1, m2, -m3)?;
    Ok(tj.scale_sqrt(parity_sign(l1 - l2 + m3), (2 * l3 + 1) as u64))
}

pub fn clebsch_gordan(l1: i32, m1: i32, l2: i32, m2: i32, l3: i32, m3: i32) -> Result<f64> {
    Ok(clebsch_gordan_exact(l1, m1, l2, m2, l3, m3)?.float)
}

/// Clebsch-Gordan coefficient that returns 0 instead of an error when some
/// `|m| > l`; convenient inside summations.
pub fn cg(l1: i32, m1: i32, l2: i32, m2: i32, l3: i32, m3: i32) -> f64 {
    if l1 < 0 || l2 < 0 || l3 < 0 || m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return 0.0;
    }
    clebsch_gordan(l1, m1, l2, m2, l3, m3).unwrap_or(0.0)
}

/// `C^{l3 0}_{l1 0 l2 0}` from the closed form for vanishing orders.
pub fn cg_zero_m_exact(l1: i32, l2: i32, l3: i32) -> Result<CoefficientValue> {
    check_l(l1)?;
    check_l(l2)?;
    check_l(l3)?;
    let two_g = l1 + l2 + l3;
    if two_g % 2 != 0 || !triangle(l1, l2, l3) {
        return Ok(CoefficientValue::zero());
    }
    let g = two_g / 2;
    // (-1)^{g - l3} sqrt(2 l3 + 1) g! / ((g-l1)!(g-l2)!(g-l3)!) * sqrt(triangle)
    let ratio = fact(g)
        .div(&fact(g - l1))
        .div(&fact(g - l2))
        .div(&fact(g - l3));
    let radicand = triangle_factor(l1, l2, l3)
        .mul(&ratio.pow(2))
        .mul(&Factored::integer((2 * l3 + 1) as u64));
    Ok(CoefficientValue::new(
        parity_sign(g - l3),
        radicand.to_rational(),
    ))
}

pub fn cg_zero_m(l1: i32, l2: i32, l3: i32) -> Result<f64> {
    Ok(cg_zero_m_exact(l1, l2, l3)?.float)
}

fn compute_6j(a: i32, b: i32, c: i32, d: i32, e: i32, f: i32) -> CoefficientValue {
    let radicand = triangle_factor(a, b, c)
        .mul(&triangle_factor(a, e, f))
        .mul(&triangle_factor(d, b, f))
        .mul(&triangle_factor(d, e, c));
    let tmin = (a + b + c).max(a + e + f).max(d + b + f).max(d + e + c);
    let tmax = (a + b + d + e).min(a + c + d + f).min(b + c + e + f);
    let terms: Vec<(i8, Factored)> = (tmin..=tmax)
        .map(|t| {
            let den = fact(t - a - b - c)
                .mul(&fact(t - a - e - f))
                .mul(&fact(t - d - b - f))
                .mul(&fact(t - d - e - c))
                .mul(&fact(a + b + d + e - t))
                .mul(&fact(a + c + d + f - t))
                .mul(&fact(b + c + e + f - t));
            (parity_sign(t), fact(t + 1).div(&den))
        })
        .collect();
    let (s, g) = alternating_sum(&terms);
    CoefficientValue::from_parts(1, &radicand, &s, &g)
}

/// Exact 6j symbol `{j1 j2 j3; j4 j5 j6}` by the single-sum Racah formula.
pub fn wigner6j_exact(j1: i32, j2: i32, j3: i32, j4: i32, j5: i32, j6: i32) -> Result<CoefficientValue> {
    for j in [j1, j2, j3, j4, j5, j6] {
        check_l(j)?;
    }
    if !(triangle(j1, j2, j3) && triangle(j1, j5, j6) && triangle(j4, j2, j6) && triangle(j4, j5, j3)) {
        return Ok(CoefficientValue::zero());
    }
    Ok(cached(Key::SixJ([j1, j2, j3, j4, j5, j6]), || {
        compute_6j(j1, j2, j3, j4, j5, j6)
    }))
}

pub fn wigner6j(j1: i32, j2: i32, j3: i32, j4: i32, j5: i32, j6: i32) -> Result<f64> {
    Ok(wigner6j_exact(j1, j2, j3, j4, j5, j6)?.float)
}

/// 6j symbol returning 0 for negative arguments.
pub fn sixj(j1: i32, j2: i32, j3: i32, j4: i32, j5: i32, j6: i32) -> f64 {
    wigner6j(j1, j2, j3, j4, j5, j6).unwrap_or(0.0)
}

/// Exact value of `p/q` as a coefficient, for comparisons in tests and the CLI.
pub fn exact_ratio(sign: i8, num: i64, den: i64) -> CoefficientValue {
    CoefficientValue::new(sign, BigRational::new(BigInt::from(num), BigInt::from(den)))
}
