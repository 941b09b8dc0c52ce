//! Monte Carlo recovery of Clebsch-Gordan coefficients from squared Gaussian
//! fields.
//!
//! With `a(2)` the centered quadratic coefficients of a Gaussian field,
//! `E a_{l1 m1}(2) a_{l2 m2}(2) conj(a_{l3 m3}(2)) = h_{l1 l2 l3} C^{l3 m3}_{l1 m1 l2 m2}`,
//! so a table of `h` (O(L^3) numbers) and `B` stored replicates (O(B L^2))
//! give every coefficient up to `L`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::angular_coeffs::triangle;
use crate::error::{domain, invalid, Result};
use crate::random_fields::{quadratic_alm, sample_gaussian_alm, GauntTable, PowerSpectrum, SeedSpec};
use crate::sht::HarmonicCoefficients;
use crate::spectra::chi1_bispectrum_h;

/// Largest band accepted by [`precompute_h`]; the full table costs O(L^6).
pub const MAX_H_BAND: usize = 24;

/// Largest `B (L + 1)^2` accepted by [`build_replicates`].
pub const MAX_REPLICATE_ENTRIES: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub struct HTable {
    pub lmax: usize,
    values: Vec<f64>,
}

impl HTable {
    fn index(&self, l1: usize, l2: usize, l3: usize) -> usize {
        let n = self.lmax + 1;
        (l1 * n + l2) * n + l3
    }

    pub fn get(&self, l1: i32, l2: i32, l3: i32) -> f64 {
        let n = self.lmax as i32;
        if [l1, l2, l3].iter().any(|&l| l < 0 || l > n) {
            return 0.0;
        }
        self.values[self.index(l1 as usize, l2 as usize, l3 as usize)]
    }

    pub fn from_values(lmax: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != (lmax + 1).pow(3) {
            return Err(invalid("h table has the wrong length"));
        }
        Ok(HTable { lmax, values })
    }

    /// Dense `(L + 1)^3` layout, `l3` fastest.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// `h_{l1 l2 l3}` for all `l_i <= L`; odd-sum and non-triangle entries are
/// left at zero without evaluation.
pub fn precompute_h(lmax: usize, spectrum: &PowerSpectrum) -> Result<HTable> {
    if lmax > MAX_H_BAND {
        return Err(domain(format!("h table band {lmax} exceeds {MAX_H_BAND}")));
    }
    let n = lmax + 1;
    let triples: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|a| (0..n).flat_map(move |b| (0..n).map(move |c| (a, b, c))))
        .collect();
    let values = triples
        .par_iter()
        .map(|&(a, b, c)| {
            let (a, b, c) = (a as i32, b as i32, c as i32);
            if (a + b + c) % 2 != 0 || !triangle(a, b, c) {
                0.0
            } else {
                chi1_bispectrum_h(a, b, c, spectrum)
            }
        })
        .collect();
    Ok(HTable { lmax, values })
}

/// Quadratic coefficient arrays `a^{(i)}(2)`, `i < B`, at band `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateStore {
    pub lmax: usize,
    pub replicates: Vec<HarmonicCoefficients>,
}

impl ReplicateStore {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }
}

/// Replicate `i` squares a Gaussian field drawn from stream `(seed, i)` with
/// the exact Gaunt convolution.
pub fn build_replicates(lmax: usize, spectrum: &PowerSpectrum, replicates: usize, seed: &SeedSpec) -> Result<ReplicateStore> {
    if replicates == 0 {
        return Err(invalid("need at least one replicate"));
    }
    if replicates.saturating_mul((lmax + 1) * (lmax + 1)) > MAX_REPLICATE_ENTRIES {
        return Err(domain("replicate store exceeds the memory guard"));
    }
    let band_in = spectrum.lmax();
    let table = GauntTable::new(band_in, lmax);
    let reps = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let a = sample_gaussian_alm(spectrum, band_in, seed, i as u64)?;
            Ok(quadratic_alm(&a, spectrum, &table))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateStore {
        lmax,
        replicates: reps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgEstimate {
    pub estimate: f64,
    pub std_err: f64,
    /// Mean imaginary part of the scaled triple product.
    pub imag: f64,
    /// True when a selection rule fixes the value at zero.
    pub exact: bool,
}

/// `C^{l3 m3}_{l1 m1 l2 m2} ~ h^{-1} B^{-1} sum_i a_{l1 m1}(2) a_{l2 m2}(2) conj(a_{l3 m3}(2))`.
pub fn mc_estimate_cg(
    l1: i32,
    m1: i32,
    l2: i32,
    m2: i32,
    l3: i32,
    m3: i32,
    store: &ReplicateStore,
    htable: &HTable,
) -> Result<CgEstimate> {
    if [l1, l2, l3].iter().any(|&l| l < 0) || m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return Err(domain(format!("invalid target ({l1} {m1} {l2} {m2} | {l3} {m3})")));
    }
    if m1 + m2 != m3 || !triangle(l1, l2, l3) {
        return Ok(CgEstimate {
            estimate: 0.0,
            std_err: 0.0,
            imag: 0.0,
            exact: true,
        });
    }
    let top = l1.max(l2).max(l3) as usize;
    if top > store.lmax || top > htable.lmax {
        return Err(invalid("target exceeds the band of the store or h table"));
    }
    if store.len() < 2 {
        return Err(invalid("need at least two replicates"));
    }
    let h = htable.get(l1, l2, l3);
    if h == 0.0 {
        return Err(domain(format!("h_{{{l1} {l2} {l3}}} = 0, estimator undefined")));
    }
    let (l1u, l2u, l3u) = (l1 as usize, l2 as usize, l3 as usize);
    let (mut s, mut q) = (Complex64::new(0.0, 0.0), 0.0);
    for a in &store.replicates {
        let x = a.get(l1u, m1) * a.get(l2u, m2) * a.get(l3u, m3).conj() / h;
        s += x;
        q += x.re * x.re;
    }
    let n = store.len() as f64;
    let mean = s / n;
    let var = ((q / n - mean.re * mean.re) * n / (n - 1.0)).max(0.0);
    Ok(CgEstimate {
        estimate: mean.re,
        std_err: (var / n).sqrt(),
        imag: mean.im,
        exact: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionReport {
    pub lmax: u64,
    pub replicates: u64,
    /// `B L^2 + L^3`.
    pub compressed: u128,
    /// `L^6`.
    pub full: u128,
    pub ratio: f64,
}

pub fn compression_report(lmax: u64, replicates: u64) -> CompressionReport {
    let l = u128::from(lmax);
    let compressed = u128::from(replicates) * l * l + l * l * l;
    let full = l.pow(6);
    CompressionReport {
        lmax,
        replicates,
        compressed,
        full,
        ratio: if full == 0 { f64::INFINITY } else { compressed as f64 / full as f64 },
    }
}
