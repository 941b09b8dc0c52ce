//! Isotropic Gaussian and Gaussian-subordinated random fields.
//!
//! Random streams are ChaCha8 generators keyed by `(master seed, purpose)`,
//! with the replicate index as stream id and a sub-index (usually `l`)
//! selecting a disjoint block of the stream. Raising the band limit therefore
//! leaves the draws for lower multipoles untouched.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::angular_coeffs::{cg, wigner_d_matrix, EulerAngles};
use crate::error::{domain, invalid, Result};
use crate::sht::{analyze, pointwise_map, synthesize, FieldSamples, HarmonicCoefficients, SphericalGrid};

/// Angular power spectrum `C_l`, `l = 0..=L`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrum {
    c: Vec<f64>,
}

impl PowerSpectrum {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(invalid("empty power spectrum"));
        }
        if let Some((l, v)) = c.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(domain(format!("C_{l} = {v} is not a finite nonnegative number")));
        }
        Ok(PowerSpectrum { c })
    }

    /// `C_l = amplitude * (l + 1)^(-alpha)`.
    pub fn parametric(amplitude: f64, alpha: f64, lmax: usize) -> Result<Self> {
        Self::new((0..=lmax).map(|l| amplitude * ((l + 1) as f64).powf(-alpha)).collect())
    }

    pub fn flat(lmax: usize) -> Self {
        PowerSpectrum { c: vec![1.0; lmax + 1] }
    }

    pub fn lmax(&self) -> usize {
        self.c.len() - 1
    }

    /// `C_l`, zero beyond the stored band.
    pub fn get(&self, l: usize) -> f64 {
        self.c.get(l).copied().unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    pub fn truncate(&self, lmax: usize) -> Self {
        PowerSpectrum {
            c: (0..=lmax).map(|l| self.get(l)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        PowerSpectrum {
            c: self.c.iter().map(|v| v * factor).collect(),
        }
    }

    /// `Var T = sum_l (2l+1) C_l / (4 pi)`.
    pub fn variance(&self) -> f64 {
        self.c.iter().enumerate().map(|(l, c)| (2 * l + 1) as f64 * c).sum::<f64>() / (4.0 * PI)
    }
}

/// Master seed plus the derivation rule for independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedSpec {
    pub master: u64,
}

impl SeedSpec {
    pub const PURPOSE_GAUSS: u64 = 1;
    pub const PURPOSE_HAAR: u64 = 2;
    pub const PURPOSE_ZONAL: u64 = 3;

    pub fn new(master: u64) -> Self {
        SeedSpec { master }
    }

    /// Stream for `(purpose, replicate, sub)`. Distinct triples never share
    /// key and position, so their outputs are independent.
    pub fn stream(&self, purpose: u64, replicate: u64, sub: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master.to_le_bytes());
        key[8..16].copy_from_slice(&purpose.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate);
        // 2^40 words per block is far beyond any single draw sequence here.
        rng.set_word_pos(u128::from(sub) << 40);
        rng
    }

    /// Seed for an independent run derived from this one.
    pub fn child(&self, index: u64) -> SeedSpec {
        let mut rng = self.stream(u64::MAX, index, 0);
        SeedSpec { master: rng.gen() }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian coefficients with `E|a_lm|^2 = C_l`, for component `component`
/// of replicate `replicate`.
pub fn sample_gaussian_component(
    spectrum: &PowerSpectrum,
    lmax: usize,
    seed: &SeedSpec,
    replicate: u64,
    component: u64,
) -> Result<HarmonicCoefficients> {
    if lmax > spectrum.lmax() {
        return Err(invalid(format!(
            "band limit {lmax} exceeds spectrum length {}",
            spectrum.lmax()
        )));
    }
    let mut a = HarmonicCoefficients::zeros(lmax, true);
    for l in 0..=lmax {
        let c = spectrum.get(l);
        let sub = (component << 20) | l as u64;
        let mut rng = seed.stream(SeedSpec::PURPOSE_GAUSS, replicate, sub);
        a.set(l, 0, Complex64::new(normal(&mut rng) * c.sqrt(), 0.0));
        let s = (c / 2.0).sqrt();
        for m in 1..=l as i32 {
            let re = normal(&mut rng) * s;
            let im = normal(&mut rng) * s;
            a.set(l, m, Complex64::new(re, im));
        }
    }
    Ok(a)
}

pub fn sample_gaussian_alm(
    spectrum: &PowerSpectrum,
    lmax: usize,
    seed: &SeedSpec,
    replicate: u64,
) -> Result<HarmonicCoefficients> {
    sample_gaussian_component(spectrum, lmax, seed, replicate, 0)
}

/// Probabilists' Hermite polynomial `H_j`.
pub fn hermite(j: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if j == 0 {
        return prev;
    }
    let mut cur = x;
    for k in 1..j {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelVariant {
    Gaussian,
    /// `sum_j f_j H_j(T_G / sigma)`, coefficients `f_1, ..., f_q`.
    HermiteSubordinated(Vec<f64>),
    /// `T_G + f_NL (T_G^2 - E T_G^2)`.
    SachsWolfe(f64),
    /// `sum_{i <= nu} (T_i / sigma)^2 - nu` for independent copies `T_i`.
    ChiSquare(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    pub variant: ModelVariant,
    pub spectrum: PowerSpectrum,
}

impl FieldModel {
    pub fn new(variant: ModelVariant, spectrum: PowerSpectrum) -> Result<Self> {
        match &variant {
            ModelVariant::HermiteSubordinated(f) => {
                if f.is_empty() {
                    return Err(invalid("Hermite model needs at least one coefficient"));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(domain("Hermite coefficients must be finite"));
                }
            }
            ModelVariant::SachsWolfe(f) if !f.is_finite() => {
                return Err(domain("f_NL must be finite"));
            }
            ModelVariant::ChiSquare(0) => return Err(domain("chi-square needs nu >= 1")),
            _ => {}
        }
        Ok(FieldModel { variant, spectrum })
    }

    /// Polynomial degree of the map applied to the Gaussian field.
    pub fn degree(&self) -> usize {
        match &self.variant {
            ModelVariant::Gaussian => 1,
            ModelVariant::HermiteSubordinated(f) => f.len(),
            ModelVariant::SachsWolfe(_) | ModelVariant::ChiSquare(_) => 2,
        }
    }
}

/// Simulate a model on `grid`: sample Gaussian coefficients to band `lmax`,
/// synthesize, transform pointwise and analyze back to the grid band (capped
/// at the polynomial degree times `lmax`).
pub fn realize_field(
    model: &FieldModel,
    lmax: usize,
    seed: &SeedSpec,
    replicate: u64,
    grid: &SphericalGrid,
) -> Result<(FieldSamples, HarmonicCoefficients)> {
    let degree = model.degree();
    if degree >= 2 && grid.band() < 2 * lmax {
        return Err(invalid(format!(
            "nonlinear models need grid band >= 2L = {}, got {}",
            2 * lmax,
            grid.band()
        )));
    }
    let out_l = grid.band().min(degree * lmax);
    let sigma2 = model.spectrum.truncate(lmax).variance();
    let sigma = sigma2.sqrt();
    match &model.variant {
        ModelVariant::Gaussian => {
            let a = sample_gaussian_alm(&model.spectrum, lmax, seed, replicate)?;
            let t = synthesize(&a, grid)?;
            Ok((t, a))
        }
        ModelVariant::SachsWolfe(f) => {
            let a = sample_gaussian_alm(&model.spectrum, lmax, seed, replicate)?;
            let t = synthesize(&a, grid)?;
            let sq = pointwise_map(&t, |x| x * x - sigma2);
            let a2 = analyze(&sq, out_l)?;
            let coeffs = a.with_lmax(out_l).add(&a2.scale(*f));
            let values = t
                .values
                .iter()
                .zip(&sq.values)
                .map(|(x, q)| Complex64::new(x.re + f * q.re, 0.0))
                .collect();
            Ok((
                FieldSamples {
                    grid: grid.clone(),
                    values,
                },
                coeffs,
            ))
        }
        ModelVariant::HermiteSubordinated(fs) => {
            let a = sample_gaussian_alm(&model.spectrum, lmax, seed, replicate)?;
            let t = synthesize(&a, grid)?;
            let fs = fs.clone();
            let mapped = pointwise_map(&t, move |x| {
                fs.iter()
                    .enumerate()
                    .map(|(j, f)| f * hermite(j + 1, x / sigma))
                    .sum()
            });
            let coeffs = analyze(&mapped, out_l)?;
            Ok((mapped, coeffs))
        }
        ModelVariant::ChiSquare(nu) => {
            let mut acc = vec![Complex64::new(-f64::from(*nu), 0.0); grid.len()];
            for comp in 0..u64::from(*nu) {
                let a = sample_gaussian_component(&model.spectrum, lmax, seed, replicate, comp)?;
                let t = synthesize(&a, grid)?;
                for (s, x) in acc.iter_mut().zip(&t.values) {
                    s.re += x.re * x.re / sigma2;
                }
            }
            let samples = FieldSamples {
                grid: grid.clone(),
                values: acc,
            };
            let coeffs = analyze(&samples, out_l)?;
            Ok((samples, coeffs))
        }
    }
}

/// `a_l -> D^l(g) a_l` for every block.
pub fn rotate_coefficients(coeffs: &HarmonicCoefficients, g: &EulerAngles) -> Result<HarmonicCoefficients> {
    let mut out = HarmonicCoefficients::zeros(coeffs.lmax(), coeffs.is_real_field());
    for l in 0..=coeffs.lmax() {
        let d = wigner_d_matrix(l as i32, g)?.entries;
        let block = nalgebra::DVector::from_vec(coeffs.block(l));
        let rotated = d * block;
        out.set_block(l, rotated.as_slice());
    }
    Ok(out)
}

/// Haar-distributed Euler angles: `phi, psi ~ U[0, 2 pi)`, `cos theta ~ U[-1, 1]`.
pub fn haar_angles<R: Rng>(rng: &mut R) -> EulerAngles {
    let phi = rng.gen_range(0.0..2.0 * PI);
    let psi = rng.gen_range(0.0..2.0 * PI);
    let z: f64 = rng.gen_range(-1.0..=1.0);
    EulerAngles {
        phi,
        theta: z.clamp(-1.0, 1.0).acos(),
        psi,
    }
}

pub fn haar_rotation(seed: &SeedSpec, index: u64) -> EulerAngles {
    haar_angles(&mut seed.stream(SeedSpec::PURPOSE_HAAR, index, 0))
}

/// Zonal field `a_l0 = X_l` rotated by a Haar-random rotation.
pub fn rotated_zonal_field(x: &[f64], seed: &SeedSpec, index: u64) -> Result<HarmonicCoefficients> {
    if x.is_empty() {
        return Err(invalid("empty zonal sequence"));
    }
    let mut a = HarmonicCoefficients::zeros(x.len() - 1, true);
    for (l, v) in x.iter().enumerate() {
        a.set(l, 0, Complex64::new(*v, 0.0));
    }
    let g = haar_angles(&mut seed.stream(SeedSpec::PURPOSE_ZONAL, index, 0));
    rotate_coefficients(&a, &g)
}

/// Gaunt coefficient `int Y_{l1 m1} Y_{l2 m2} conj(Y_{lm})`.
pub fn gaunt(l1: i32, m1: i32, l2: i32, m2: i32, l: i32, m: i32) -> f64 {
    if m1 + m2 != m {
        return 0.0;
    }
    let z = cg(l1, 0, l2, 0, l, 0);
    if z == 0.0 {
        return 0.0;
    }
    cg(l1, m1, l2, m2, l, m) * z * (((2 * l1 + 1) * (2 * l2 + 1)) as f64 / (4.0 * PI * (2 * l + 1) as f64)).sqrt()
}

/// Sparse table of Gaunt coefficients for products of band-`lmax_in` arrays,
/// projected to band `lmax_out` with `m >= 0`.
#[derive(Clone, Debug)]
pub struct GauntTable {
    pub lmax_in: usize,
    pub lmax_out: usize,
    /// For target `(l, m)` at `l (l + 1) / 2 + m`: `(l1, m1, l2, m2, coefficient)`.
    entries: Vec<Vec<(usize, i32, usize, i32, f64)>>,
}

impl GauntTable {
    pub fn new(lmax_in: usize, lmax_out: usize) -> Self {
        let mut entries = Vec::with_capacity((lmax_out + 1) * (lmax_out + 2) / 2);
        for l in 0..=lmax_out as i32 {
            for m in 0..=l {
                let mut row = Vec::new();
                for l1 in 0..=lmax_in as i32 {
                    for l2 in 0..=lmax_in as i32 {
                        if (l1 + l2 + l) % 2 != 0 || !crate::angular_coeffs::triangle(l1, l2, l) {
                            continue;
                        }
                        for m1 in -l1..=l1 {
                            let m2 = m - m1;
                            if m2.abs() > l2 {
                                continue;
                            }
                            let g = gaunt(l1, m1, l2, m2, l, m);
                            if g != 0.0 {
                                row.push((l1 as usize, m1, l2 as usize, m2, g));
                            }
                        }
                    }
                }
                entries.push(row);
            }
        }
        GauntTable {
            lmax_in,
            lmax_out,
            entries,
        }
    }

    /// Coefficients of the pointwise product of two real fields.
    pub fn product(&self, a: &HarmonicCoefficients, b: &HarmonicCoefficients) -> HarmonicCoefficients {
        let mut out = HarmonicCoefficients::zeros(self.lmax_out, true);
        for l in 0..=self.lmax_out {
            for m in 0..=l {
                let row = &self.entries[l * (l + 1) / 2 + m];
                let mut s = Complex64::new(0.0, 0.0);
                for &(l1, m1, l2, m2, g) in row {
                    s += a.get(l1, m1) * b.get(l2, m2) * g;
                }
                out.set(l, m as i32, s);
            }
        }
        out
    }

    /// Single coefficient `(a b)_{lm}`, any sign of `m`.
    pub fn product_entry(&self, a: &HarmonicCoefficients, b: &HarmonicCoefficients, l: usize, m: i32) -> Complex64 {
        let ma = m.unsigned_abs() as usize;
        let row = &self.entries[l * (l + 1) / 2 + ma];
        let mut s = Complex64::new(0.0, 0.0);
        for &(l1, m1, l2, m2, g) in row {
            s += a.get(l1, m1) * b.get(l2, m2) * g;
        }
        if m >= 0 {
            s
        } else if ma % 2 == 0 {
            s.conj()
        } else {
            -s.conj()
        }
    }
}

/// Centered quadratic coefficients `a_lm(2)` of `T^2 - E T^2`.
pub fn quadratic_alm(a: &HarmonicCoefficients, spectrum: &PowerSpectrum, table: &GauntTable) -> HarmonicCoefficients {
    let mut q = table.product(a, a);
    let mean = (4.0 * PI).sqrt() * spectrum.truncate(table.lmax_in).variance();
    let c00 = q.get(0, 0);
    q.set(0, 0, c00 - mean);
    q
}

/// Output coefficients of `model` computed from Gaussian draws by exact
/// Gaunt convolution (no grid). Hermite models above degree 2 are rejected.
pub fn sample_model_alm(
    model: &FieldModel,
    lmax_in: usize,
    seed: &SeedSpec,
    replicate: u64,
    table: &GauntTable,
) -> Result<HarmonicCoefficients> {
    let spec = model.spectrum.truncate(lmax_in);
    let sigma2 = spec.variance();
    let lout = table.lmax_out;
    match &model.variant {
        ModelVariant::Gaussian => Ok(sample_gaussian_alm(&spec, lmax_in, seed, replicate)?.with_lmax(lout)),
        ModelVariant::SachsWolfe(f) => {
            let a = sample_gaussian_alm(&spec, lmax_in, seed, replicate)?;
            let q = quadratic_alm(&a, &spec, table);
            Ok(a.with_lmax(lout).add(&q.scale(*f)))
        }
        ModelVariant::ChiSquare(nu) => {
            let mut acc = HarmonicCoefficients::zeros(lout, true);
            for comp in 0..u64::from(*nu) {
                let a = sample_gaussian_component(&spec, lmax_in, seed, replicate, comp)?;
                acc = acc.add(&quadratic_alm(&a, &spec, table).scale(1.0 / sigma2));
            }
            Ok(acc)
        }
        ModelVariant::HermiteSubordinated(fs) => {
            if fs.len() > 2 {
                return Err(invalid("exact convolution supports Hermite degree <= 2"));
            }
            let sigma = sigma2.sqrt();
            let a = sample_gaussian_alm(&spec, lmax_in, seed, replicate)?;
            let mut out = a.with_lmax(lout).scale(fs[0] / sigma);
            if fs.len() == 2 {
                out = out.add(&quadratic_alm(&a, &spec, table).scale(fs[1] / sigma2));
            }
            Ok(out)
        }
    }
}
