//! Clebsch-Gordan block matrices, generalized coupling matrices, the selector
//! `E` and the isotropy projector `Delta`.
//!
//! Linearization: a multi-index `(m_1, ..., m_n)` maps to the row-major
//! position over `m_j = -l_j..=l_j`, last index fastest. Columns of coupling
//! matrices are ordered by coupling path (lexicographic in the `lambda`
//! vector), then by the final order `mu` ascending.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::angular_coeffs::{cg, triangle, wigner_d_matrix, EulerAngles};
use crate::error::{domain, invalid, Error, Result};
use crate::random_fields::{haar_angles, SeedSpec};
use crate::spectra::{partition_permutation, SetPartition};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

static DIMENSION_CAP: AtomicUsize = AtomicUsize::new(DEFAULT_DIMENSION_CAP);

/// Largest `prod(2 l_j + 1)` accepted by dense constructions.
pub fn dimension_cap() -> usize {
    DIMENSION_CAP.load(Ordering::Relaxed)
}

pub fn set_dimension_cap(cap: usize) {
    DIMENSION_CAP.store(cap, Ordering::Relaxed);
}

pub fn dimension(ls: &[i32]) -> usize {
    ls.iter().map(|&l| (2 * l + 1) as usize).product()
}

pub(crate) fn check_ls(ls: &[i32]) -> Result<usize> {
    if ls.is_empty() {
        return Err(invalid("empty multipole list"));
    }
    if let Some(&l) = ls.iter().find(|&&l| l < 0) {
        return Err(domain(format!("negative multipole l = {l}")));
    }
    let dim = dimension(ls);
    let cap = dimension_cap();
    if dim > cap {
        return Err(Error::Cap { dim, cap });
    }
    Ok(dim)
}

/// Row-major position of `ms` for multipoles `ls`.
pub fn linear_index(ls: &[i32], ms: &[i32]) -> usize {
    ls.iter()
        .zip(ms)
        .fold(0, |acc, (&l, &m)| acc * (2 * l + 1) as usize + (m + l) as usize)
}

/// Inverse of [`linear_index`].
pub fn multi_index(ls: &[i32], mut index: usize) -> Vec<i32> {
    let mut ms = vec![0; ls.len()];
    for j in (0..ls.len()).rev() {
        let d = (2 * ls[j] + 1) as usize;
        ms[j] = (index % d) as i32 - ls[j];
        index /= d;
    }
    ms
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CouplingPath {
    pub lambdas: Vec<i32>,
}

impl CouplingPath {
    pub fn last(&self) -> i32 {
        *self.lambdas.last().expect("paths are nonempty")
    }
}

/// Admissible coupling paths for `ls`, ascending in lexicographic order.
pub fn coupling_paths(ls: &[i32]) -> Result<Vec<CouplingPath>> {
    if ls.len() < 2 {
        return Err(invalid("coupling paths need at least two multipoles"));
    }
    if let Some(&l) = ls.iter().find(|&&l| l < 0) {
        return Err(domain(format!("negative multipole l = {l}")));
    }
    let mut paths: Vec<Vec<i32>> = ((ls[0] - ls[1]).abs()..=ls[0] + ls[1]).map(|l| vec![l]).collect();
    for &l in &ls[2..] {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                let prev = *p.last().unwrap();
                ((prev - l).abs()..=prev + l).map(move |lam| {
                    let mut q = p.clone();
                    q.push(lam);
                    q
                })
            })
            .collect();
    }
    Ok(paths.into_iter().map(|lambdas| CouplingPath { lambdas }).collect())
}

/// Column layout of a coupling matrix: `(path, mu)` pairs in column order.
pub fn column_labels(ls: &[i32]) -> Result<Vec<(CouplingPath, i32)>> {
    Ok(coupling_paths(ls)?
        .into_iter()
        .flat_map(|p| {
            let lam = p.last();
            (-lam..=lam).map(move |mu| (p.clone(), mu))
        })
        .collect())
}

/// `C_{l1 l2}`: rows `(m1, m2)`, columns `(l, m)` with
/// `|l1 - l2| <= l <= l1 + l2`.
pub fn cg_matrix(l1: i32, l2: i32) -> Result<DMatrix<f64>> {
    let dim = check_ls(&[l1, l2])?;
    let mut c = DMatrix::zeros(dim, dim);
    let mut col = 0;
    for l in (l1 - l2).abs()..=l1 + l2 {
        for m in -l..=l {
            for m1 in -l1..=l1 {
                let m2 = m - m1;
                if m2.abs() <= l2 {
                    c[(linear_index(&[l1, l2], &[m1, m2]), col)] = cg(l1, m1, l2, m2, l, m);
                }
            }
            col += 1;
        }
    }
    Ok(c)
}

/// Block-diagonal sum of `C_{lambda, l}` over the given `lambda` values.
fn direct_sum_cg(lambdas: &[i32], l: i32) -> Result<DMatrix<f64>> {
    let blocks: Vec<DMatrix<f64>> = lambdas.iter().map(|&lam| cg_matrix(lam, l)).collect::<Result<_>>()?;
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(&b);
        off += k;
    }
    Ok(out)
}

/// Generalized coupling matrix `C_{l1 ... ln}` built by the iterated product
/// `(C_{l1..l_{n-1}} (x) I) (sum_paths C_{lambda_{n-2} l_n})`.
pub fn generalized_cg_matrix(ls: &[i32]) -> Result<DMatrix<f64>> {
    check_ls(ls)?;
    if ls.len() < 2 {
        return Err(invalid("coupling matrices need at least two multipoles"));
    }
    let mut c = cg_matrix(ls[0], ls[1])?;
    for k in 2..ls.len() {
        let prefix = &ls[..k];
        let lk = ls[k];
        let eye = DMatrix::<f64>::identity((2 * lk + 1) as usize, (2 * lk + 1) as usize);
        let lifted = c.kronecker(&eye);
        let lasts: Vec<i32> = coupling_paths(prefix)?.iter().map(|p| p.last()).collect();
        c = lifted * direct_sum_cg(&lasts, lk)?;
    }
    Ok(c)
}

/// `C^{lambda_1 ... lambda_{n-1}, mu}_{l1 m1 ... ln mn}` by direct
/// convolution of pairwise coefficients.
pub fn generalized_cg_entry(ls: &[i32], ms: &[i32], path: &CouplingPath, mu: i32) -> f64 {
    let n = ls.len();
    if n < 2 || path.lambdas.len() != n - 1 || ms.iter().sum::<i32>() != mu {
        return 0.0;
    }
    let mut value = 1.0;
    let mut prev_l = ls[0];
    let mut prev_m = ms[0];
    for k in 1..n {
        let lam = path.lambdas[k - 1];
        let mm = prev_m + ms[k];
        if mm.abs() > lam || !triangle(prev_l, ls[k], lam) {
            return 0.0;
        }
        value *= cg(prev_l, prev_m, ls[k], ms[k], lam, mm);
        if value == 0.0 {
            return 0.0;
        }
        prev_l = lam;
        prev_m = mm;
    }
    value
}

/// Diagonal selector `E_{l1 ... ln}` with ones where the path ends in 0.
pub fn e_matrix(ls: &[i32]) -> Result<DMatrix<f64>> {
    let dim = check_ls(ls)?;
    let labels = column_labels(ls)?;
    let mut e = DMatrix::zeros(dim, dim);
    for (j, (p, _)) in labels.iter().enumerate() {
        if p.last() == 0 {
            e[(j, j)] = 1.0;
        }
    }
    Ok(e)
}

/// Columns of the generalized coupling matrix whose path ends in 0; an
/// orthonormal basis of the rotation-invariant subspace.
pub fn invariant_columns(ls: &[i32]) -> Result<(Vec<CouplingPath>, DMatrix<f64>)> {
    let c = generalized_cg_matrix(ls)?;
    let labels = column_labels(ls)?;
    let picked: Vec<(usize, CouplingPath)> = labels
        .into_iter()
        .enumerate()
        .filter(|(_, (p, _))| p.last() == 0)
        .map(|(j, (p, _))| (j, p))
        .collect();
    let mut basis = DMatrix::zeros(c.nrows(), picked.len());
    for (k, (j, _)) in picked.iter().enumerate() {
        basis.set_column(k, &c.column(*j));
    }
    Ok((picked.into_iter().map(|(_, p)| p).collect(), basis))
}

/// `Delta = C E C^T`.
pub fn delta_exact(ls: &[i32]) -> Result<DMatrix<f64>> {
    let (_, basis) = invariant_columns(ls)?;
    Ok(&basis * basis.transpose())
}

/// Closed form for two multipoles: zero unless `l1 = l2`, then the rank-one
/// projector onto `C^{00}_{l m l -m} = (-1)^{l-m} / sqrt(2l+1)`.
pub fn delta_pair(l1: i32, l2: i32) -> Result<DMatrix<f64>> {
    let dim = check_ls(&[l1, l2])?;
    if l1 != l2 {
        return Ok(DMatrix::zeros(dim, dim));
    }
    let l = l1;
    let mut v = nalgebra::DVector::zeros(dim);
    let norm = ((2 * l + 1) as f64).sqrt();
    for m in -l..=l {
        let sign = if (l - m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        v[linear_index(&[l, l], &[m, -m])] = sign / norm;
    }
    Ok(&v * v.transpose())
}

/// `D^{l1}(g) (x) ... (x) D^{ln}(g)`.
pub fn delta_of_g(ls: &[i32], g: &EulerAngles) -> Result<DMatrix<Complex64>> {
    check_ls(ls)?;
    let mut out = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    for &l in ls {
        out = out.kronecker(&wigner_d_matrix(l, g)?.entries);
    }
    Ok(out)
}

/// Haar average of `Delta(g)` estimated from independent rotations.
#[derive(Clone, Debug)]
pub struct NumericProjector {
    pub mean: DMatrix<Complex64>,
    /// Standard error of the real part of each entry.
    pub std_err: DMatrix<f64>,
    pub samples: usize,
}

/// Monte Carlo Haar integral of `Delta(g)`. Samples are split into fixed
/// chunks reduced in order, so the result does not depend on thread count.
pub fn delta_numeric(ls: &[i32], samples: usize, seed: &SeedSpec) -> Result<NumericProjector> {
    let dim = check_ls(ls)?;
    if samples < 2 {
        return Err(invalid("need at least two samples"));
    }
    const CHUNK: usize = 1024;
    let chunks: Vec<(usize, usize)> = (0..samples)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(samples)))
        .collect();
    let partials: Vec<Result<(DMatrix<Complex64>, DMatrix<f64>)>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
            let mut sq = DMatrix::<f64>::zeros(dim, dim);
            for i in start..end {
                let mut rng = seed.stream(SeedSpec::PURPOSE_HAAR, i as u64, 0);
                let g = haar_angles(&mut rng);
                let d = delta_of_g(ls, &g)?;
                sum += &d;
                sq += d.map(|z| z.re * z.re);
            }
            Ok((sum, sq))
        })
        .collect();
    let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
    let mut sq = DMatrix::<f64>::zeros(dim, dim);
    for p in partials {
        let (s, q) = p?;
        sum += s;
        sq += q;
    }
    let n = samples as f64;
    let mean = sum / Complex64::new(n, 0.0);
    let std_err = DMatrix::from_fn(dim, dim, |i, j| {
        let m = mean[(i, j)].re;
        let var = ((sq[(i, j)] / n - m * m) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    });
    Ok(NumericProjector {
        mean,
        std_err,
        samples,
    })
}

/// `Delta` for the multipoles reordered by the permutation attached to a
/// partition.
pub fn delta_permuted(ls: &[i32], partition: &SetPartition) -> Result<DMatrix<f64>> {
    let perm = partition_permutation(partition);
    if perm.len() != ls.len() {
        return Err(invalid("partition size does not match multipole count"));
    }
    let permuted: Vec<i32> = perm.iter().map(|&i| ls[i - 1]).collect();
    delta_exact(&permuted)
}

/// `sum_paths (2 lambda_{n-1} + 1)`, which equals `prod (2 l_j + 1)`.
pub fn path_dimension_sum(ls: &[i32]) -> Result<usize> {
    Ok(coupling_paths(ls)?.iter().map(|p| (2 * p.last() + 1) as usize).sum())
}

/// Block-diagonal `sum_paths D^{lambda_{n-1}}(g)` in path order.
pub fn direct_sum_rotation(ls: &[i32], g: &EulerAngles) -> Result<DMatrix<Complex64>> {
    let dim = check_ls(ls)?;
    let mut out = DMatrix::zeros(dim, dim);
    let mut off = 0;
    for p in coupling_paths(ls)? {
        let d = wigner_d_matrix(p.last(), g)?.entries;
        let k = d.nrows();
        out.view_mut((off, off), (k, k)).copy_from(&d);
        off += k;
    }
    Ok(out)
}
