//! Spherical harmonics and a band-limited transform on a Gauss-Legendre grid.
//!
//! `Y_lm(theta, phi) = N_lm P_lm(cos theta) e^{i m phi}` with the
//! Condon-Shortley phase inside `P_lm`, orthonormal on the unit sphere, and
//! `Y_{l,-m} = (-1)^m conj(Y_lm)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{domain, invalid, Result};

/// Associated Legendre function `P_lm(x)` including the `(-1)^m` phase.
pub fn legendre_assoc(l: i32, m: i32, x: f64) -> Result<f64> {
    if m < 0 || m > l {
        return Err(domain(format!("need 0 <= m <= l, got l = {l}, m = {m}")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(domain(format!("|x| > 1: {x}")));
    }
    let s = (1.0 - x * x).sqrt();
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= -((2 * k - 1) as f64) * s;
    }
    if l == m {
        return Ok(pmm);
    }
    let mut prev = pmm;
    let mut cur = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * x * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

#[inline]
fn tri_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Normalized `N_lm P_lm(x)` for all `0 <= m <= l <= lmax`, stored at
/// `l (l + 1) / 2 + m`.
pub fn normalized_legendre_table(lmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; tri_index(lmax, lmax) + 1];
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=lmax {
        if m > 0 {
            pmm *= -s * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        }
        p[tri_index(m, m)] = pmm;
        if m < lmax {
            p[tri_index(m + 1, m)] = x * ((2 * m + 3) as f64).sqrt() * pmm;
        }
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[tri_index(l, m)] = a * (x * p[tri_index(l - 1, m)] - b * p[tri_index(l - 2, m)]);
        }
    }
    p
}

pub fn ylm(l: i32, m: i32, theta: f64, phi: f64) -> Result<Complex64> {
    if l < 0 || m.abs() > l {
        return Err(domain(format!("invalid (l, m) = ({l}, {m})")));
    }
    let table = normalized_legendre_table(l as usize, theta.cos());
    let ma = m.unsigned_abs() as usize;
    let y = table[tri_index(l as usize, ma)] * Complex64::from_polar(1.0, ma as f64 * phi);
    if m >= 0 {
        Ok(y)
    } else if ma % 2 == 0 {
        Ok(y.conj())
    } else {
        Ok(-y.conj())
    }
}

/// Triangular array `a_lm`, `0 <= l <= L`. Real-field arrays store `m >= 0`
/// only and reconstruct negative orders by `a_{l,-m} = (-1)^m conj(a_lm)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCoefficients {
    lmax: usize,
    real_field: bool,
    data: Vec<Complex64>,
}

impl HarmonicCoefficients {
    pub fn zeros(lmax: usize, real_field: bool) -> Self {
        let len = if real_field {
            tri_index(lmax, lmax) + 1
        } else {
            (lmax + 1) * (lmax + 1)
        };
        HarmonicCoefficients {
            lmax,
            real_field,
            data: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn is_real_field(&self) -> bool {
        self.real_field
    }

    pub fn get(&self, l: usize, m: i32) -> Complex64 {
        debug_assert!(l <= self.lmax && m.unsigned_abs() as usize <= l);
        if self.real_field {
            let ma = m.unsigned_abs() as usize;
            let v = self.data[tri_index(l, ma)];
            if m >= 0 {
                v
            } else if ma % 2 == 0 {
                v.conj()
            } else {
                -v.conj()
            }
        } else {
            self.data[l * l + (l as i32 + m) as usize]
        }
    }

    /// Set `a_lm`; for real fields the partner `a_{l,-m}` follows and the
    /// imaginary part of `a_l0` is dropped.
    pub fn set(&mut self, l: usize, m: i32, value: Complex64) {
        if self.real_field {
            let ma = m.unsigned_abs() as usize;
            let stored = if m == 0 {
                Complex64::new(value.re, 0.0)
            } else if m > 0 {
                value
            } else if ma % 2 == 0 {
                value.conj()
            } else {
                -value.conj()
            };
            self.data[tri_index(l, ma)] = stored;
        } else {
            self.data[l * l + (l as i32 + m) as usize] = value;
        }
    }

    /// `a_{l.}` as a vector over `m = -l..=l`.
    pub fn block(&self, l: usize) -> Vec<Complex64> {
        (-(l as i32)..=l as i32).map(|m| self.get(l, m)).collect()
    }

    pub fn set_block(&mut self, l: usize, values: &[Complex64]) {
        for (k, v) in values.iter().enumerate() {
            self.set(l, k as i32 - l as i32, *v);
        }
    }

    /// Full-storage copy, valid for any field.
    pub fn to_complex_field(&self) -> Self {
        let mut out = Self::zeros(self.lmax, false);
        for l in 0..=self.lmax {
            for m in -(l as i32)..=l as i32 {
                out.set(l, m, self.get(l, m));
            }
        }
        out
    }

    /// Largest violation of `a_{l,-m} = (-1)^m conj(a_lm)`.
    pub fn conjugation_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..=self.lmax {
            for m in 0..=l as i32 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                worst = worst.max((self.get(l, -m) - sign * self.get(l, m).conj()).norm());
            }
        }
        worst
    }

    /// Truncate or zero-pad to band limit `lmax`.
    pub fn with_lmax(&self, lmax: usize) -> Self {
        let mut out = Self::zeros(lmax, self.real_field);
        for l in 0..=lmax.min(self.lmax) {
            for m in 0..=l as i32 {
                out.set(l, m, self.get(l, m));
                if !self.real_field {
                    out.set(l, -m, self.get(l, -m));
                }
            }
        }
        out
    }

    /// `(1 / (2l+1)) sum_m |a_lm|^2`.
    pub fn power(&self, l: usize) -> f64 {
        self.block(l).iter().map(|z| z.norm_sqr()).sum::<f64>() / (2 * l + 1) as f64
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = if self.real_field && other.real_field {
            self.clone()
        } else {
            self.to_complex_field()
        };
        for l in 0..=self.lmax.min(other.lmax) {
            for m in -(l as i32)..=l as i32 {
                if out.real_field && m < 0 {
                    continue;
                }
                out.set(l, m, self.get(l, m) + other.get(l, m));
            }
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= factor;
        }
        out
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes descending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            // p0 = P_n(z), p1 = P_{n-1}(z)
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Product grid: Gauss-Legendre in `cos theta`, equispaced in `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalGrid {
    pub cos_theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub phi_count: usize,
}

impl SphericalGrid {
    /// Smallest grid that analyzes band-`band` fields exactly.
    pub fn for_band(band: usize) -> Self {
        Self::new(band + 1, 2 * band + 1)
    }

    pub fn new(theta_count: usize, phi_count: usize) -> Self {
        let (cos_theta, weights) = gauss_legendre(theta_count);
        SphericalGrid {
            cos_theta,
            weights,
            phi_count,
        }
    }

    /// Largest band limit analyzed exactly.
    pub fn band(&self) -> usize {
        (self.cos_theta.len().saturating_sub(1)).min(self.phi_count.saturating_sub(1) / 2)
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.cos_theta[i].clamp(-1.0, 1.0).acos()
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.phi_count as f64
    }

    pub fn len(&self) -> usize {
        self.cos_theta.len() * self.phi_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of node `(i, k)`.
    pub fn node_weight(&self, i: usize) -> f64 {
        self.weights[i] * 2.0 * PI / self.phi_count as f64
    }

    pub fn to_json(&self) -> String {
        format!(
            "{{\"kind\":\"gauss-legendre\",\"theta_count\":{},\"phi_count\":{},\"band\":{}}}",
            self.cos_theta.len(),
            self.phi_count,
            self.band()
        )
    }
}

/// Field values on a grid, ring-major (`theta` outer, `phi` inner).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSamples {
    pub grid: SphericalGrid,
    pub values: Vec<Complex64>,
}

impl FieldSamples {
    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.values[i * self.grid.phi_count + k]
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |a, z| a.max(z.im.abs()))
    }

    /// Quadrature integral of `|T|^2`.
    pub fn norm_sqr(&self) -> f64 {
        (0..self.grid.cos_theta.len())
            .map(|i| {
                let w = self.grid.node_weight(i);
                (0..self.grid.phi_count).map(|k| self.get(i, k).norm_sqr()).sum::<f64>() * w
            })
            .sum()
    }
}

/// `T(x) = sum_{l <= L} sum_m a_lm Y_lm(x)` on every grid node.
pub fn synthesize(coeffs: &HarmonicCoefficients, grid: &SphericalGrid) -> Result<FieldSamples> {
    let lmax = coeffs.lmax();
    if grid.band() < lmax {
        return Err(invalid(format!(
            "grid band {} is too coarse for L = {lmax}",
            grid.band()
        )));
    }
    let nphi = grid.phi_count;
    let real = coeffs.is_real_field();
    let rings: Vec<Vec<Complex64>> = grid
        .cos_theta
        .par_iter()
        .map(|&x| {
            let p = normalized_legendre_table(lmax, x);
            // f[m + lmax] = sum_l a_lm N_lm P_lm
            let mut f = vec![Complex64::new(0.0, 0.0); 2 * lmax + 1];
            for m in 0..=lmax {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                for l in m..=lmax {
                    let pl = p[tri_index(l, m)];
                    f[lmax + m] += coeffs.get(l, m as i32) * pl;
                    if m > 0 && !real {
                        f[lmax - m] += coeffs.get(l, -(m as i32)) * (sign * pl);
                    }
                }
            }
            (0..nphi)
                .map(|k| {
                    let phi = 2.0 * PI * k as f64 / nphi as f64;
                    let mut t = f[lmax];
                    for m in 1..=lmax {
                        let e = Complex64::from_polar(1.0, m as f64 * phi);
                        if real {
                            t += 2.0 * (f[lmax + m] * e).re;
                        } else {
                            t += f[lmax + m] * e + f[lmax - m] * e.conj();
                        }
                    }
                    if real {
                        Complex64::new(t.re, 0.0)
                    } else {
                        t
                    }
                })
                .collect()
        })
        .collect();
    Ok(FieldSamples {
        grid: grid.clone(),
        values: rings.into_iter().flatten().collect(),
    })
}

/// Quadrature projection `a_lm = int T conj(Y_lm)` up to band `lmax`.
/// Returns a real-field array when every sample is real.
pub fn analyze(samples: &FieldSamples, lmax: usize) -> Result<HarmonicCoefficients> {
    let grid = &samples.grid;
    if grid.band() < lmax {
        return Err(invalid(format!(
            "grid band {} is too coarse for L = {lmax}",
            grid.band()
        )));
    }
    if samples.values.len() != grid.len() {
        return Err(invalid("sample count does not match grid"));
    }
    let real = samples.values.iter().all(|z| z.im == 0.0);
    let nphi = grid.phi_count;
    let width = 2 * lmax + 1;
    // Per-ring contributions, reduced in ring order for determinism.
    let partial: Vec<Vec<Complex64>> = (0..grid.cos_theta.len())
        .into_par_iter()
        .map(|i| {
            let p = normalized_legendre_table(lmax, grid.cos_theta[i]);
            let w = grid.node_weight(i);
            // g[m + lmax] = sum_k T_ik e^{-i m phi_k}
            let mut g = vec![Complex64::new(0.0, 0.0); width];
            for k in 0..nphi {
                let t = samples.get(i, k);
                let phi = 2.0 * PI * k as f64 / nphi as f64;
                for m in -(lmax as i32)..=lmax as i32 {
                    g[(m + lmax as i32) as usize] += t * Complex64::from_polar(1.0, -(m as f64) * phi);
                }
            }
            let mut out = vec![Complex64::new(0.0, 0.0); (lmax + 1) * (lmax + 1)];
            for l in 0..=lmax {
                for m in -(l as i32)..=l as i32 {
                    let ma = m.unsigned_abs() as usize;
                    let sign = if m < 0 && ma % 2 == 1 { -1.0 } else { 1.0 };
                    out[l * l + (l as i32 + m) as usize] =
                        g[(m + lmax as i32) as usize] * (w * sign * p[tri_index(l, ma)]);
                }
            }
            out
        })
        .collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); (lmax + 1) * (lmax + 1)];
    for ring in partial {
        for (a, b) in acc.iter_mut().zip(ring) {
            *a += b;
        }
    }
    let mut coeffs = HarmonicCoefficients::zeros(lmax, real);
    for l in 0..=lmax {
        for m in -(l as i32)..=l as i32 {
            if real && m < 0 {
                continue;
            }
            coeffs.set(l, m, acc[l * l + (l as i32 + m) as usize]);
        }
    }
    Ok(coeffs)
}

/// Apply `f` to every real node value.
pub fn pointwise_map(samples: &FieldSamples, f: impl Fn(f64) -> f64 + Sync) -> FieldSamples {
    FieldSamples {
        grid: samples.grid.clone(),
        values: samples
            .values
            .par_iter()
            .map(|z| Complex64::new(f(z.re), 0.0))
            .collect(),
    }
}
