//! Set partitions, empirical polyspectra, isotropy diagnostics, reduced
//! polyspectra and closed forms for quadratic (chi-square) fields.
//!
//! Reduced polyspectra are coefficients in the basis
//! `v_path(m) = (-1)^{m_n} C^{path, l_n -m_n}_{l_1 m_1 ... l_{n-1} m_{n-1}}`,
//! whose columns are orthogonal with squared norm `2 l_n + 1`. All internal
//! `l` sums in the closed forms run up to the band limit of the supplied
//! spectrum. The closed forms describe the unstandardized quadratic
//! coefficients `a_lm(2)` of `T^2 - E T^2`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::angular_coeffs::{cg, sixj, triangle};
use crate::coupling::{check_ls, coupling_paths, dimension, generalized_cg_entry, invariant_columns, multi_index, CouplingPath};
use crate::error::{domain, invalid, Result};
use crate::random_fields::{
    gaunt, hermite, sample_gaussian_alm, sample_model_alm, FieldModel, GauntTable, ModelVariant, PowerSpectrum,
    SeedSpec,
};
use crate::sht::HarmonicCoefficients;

fn parity(k: i32) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// A partition of `{1, ..., n}`: blocks sorted internally and ordered by
/// their smallest element.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        blocks.retain(|b| !b.is_empty());
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        let mut all: Vec<usize> = blocks.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.iter().enumerate().any(|(i, &x)| x != i + 1) {
            return Err(invalid("blocks must be disjoint and cover 1..=n"));
        }
        Ok(SetPartition { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// All partitions of `{1, ..., n}` in restricted-growth order.
pub fn partitions(n: usize) -> Result<Vec<SetPartition>> {
    if !(1..=8).contains(&n) {
        return Err(domain(format!("partitions need 1 <= n <= 8, got {n}")));
    }
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    loop {
        let k = rgs.iter().max().unwrap() + 1;
        let mut blocks = vec![Vec::new(); k];
        for (i, &b) in rgs.iter().enumerate() {
            blocks[b].push(i + 1);
        }
        out.push(SetPartition { blocks });
        // next restricted growth string
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            let bound = rgs[..i].iter().max().unwrap() + 1;
            if rgs[i] < bound {
                rgs[i] += 1;
                for r in &mut rgs[i + 1..] {
                    *r = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Concatenation of the blocks, 1-based.
pub fn partition_permutation(p: &SetPartition) -> Vec<usize> {
    p.blocks.iter().flatten().copied().collect()
}

/// Polyspectrum vector over `(m_1, ..., m_n)` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyspectrumVector {
    pub ls: Vec<i32>,
    pub entries: DVector<Complex64>,
    /// Standard errors of the real and imaginary parts, in the respective
    /// components.
    pub std_err: Option<DVector<Complex64>>,
}

impl PolyspectrumVector {
    pub fn new(ls: Vec<i32>, entries: DVector<Complex64>) -> Result<Self> {
        if entries.len() != dimension(&ls) {
            return Err(invalid("entry count does not match multipoles"));
        }
        Ok(PolyspectrumVector {
            ls,
            entries,
            std_err: None,
        })
    }

    pub fn from_real(ls: Vec<i32>, entries: &DVector<f64>) -> Result<Self> {
        Self::new(ls, entries.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Entry-wise tensor `a_{l_1} (x) ... (x) a_{l_n}`.
pub fn coefficient_tensor(a: &HarmonicCoefficients, ls: &[i32]) -> DVector<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for &l in ls {
        let block = a.block(l as usize);
        let mut next = Vec::with_capacity(out.len() * block.len());
        for x in &out {
            for y in &block {
                next.push(x * y);
            }
        }
        out = next;
    }
    DVector::from_vec(out)
}

/// Basis of the reduced polyspectrum for `ls` (`n >= 2`): path labels
/// `(lambda_1, ..., lambda_{n-3})` and columns of squared norm `2 l_n + 1`.
pub fn reduced_basis(ls: &[i32]) -> Result<(Vec<Vec<i32>>, Vec<DVector<f64>>)> {
    let dim = check_ls(ls)?;
    let n = ls.len();
    if n < 2 {
        return Err(invalid("reduced polyspectra need at least two multipoles"));
    }
    let ln = ls[n - 1];
    let head = &ls[..n - 1];
    let paths: Vec<CouplingPath> = if n == 2 {
        if ls[0] == ln {
            vec![CouplingPath { lambdas: vec![ln] }]
        } else {
            Vec::new()
        }
    } else {
        coupling_paths(head)?.into_iter().filter(|p| p.last() == ln).collect()
    };
    let mut cols = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut v = DVector::zeros(dim);
        for (i, x) in v.iter_mut().enumerate() {
            let ms = multi_index(ls, i);
            let mn = ms[n - 1];
            let c = if n == 2 {
                if ms[0] == -mn {
                    1.0
                } else {
                    0.0
                }
            } else {
                generalized_cg_entry(head, &ms[..n - 1], p, -mn)
            };
            *x = parity(mn) * c;
        }
        cols.push(v);
    }
    let labels = paths.into_iter().map(|p| p.lambdas[..p.lambdas.len() - 1].to_vec()).collect();
    Ok((labels, cols))
}

/// Synthesize `S = sum_path P(path) v_path`.
pub fn synthesize_reduced(ls: &[i32], values: &[f64]) -> Result<PolyspectrumVector> {
    let (_, cols) = reduced_basis(ls)?;
    if cols.len() != values.len() {
        return Err(invalid(format!("expected {} reduced values, got {}", cols.len(), values.len())));
    }
    let mut s = DVector::zeros(dimension(ls));
    for (c, v) in cols.iter().zip(values) {
        s += c * *v;
    }
    PolyspectrumVector::from_real(ls.to_vec(), &s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedPolyspectrum {
    pub ls: Vec<i32>,
    /// `(lambda_1, ..., lambda_{n-3})` per value; a single empty label for
    /// `n = 3`.
    pub paths: Vec<Vec<i32>>,
    pub values: Vec<f64>,
    /// Imaginary parts of the projections, zero for real-field spectra.
    pub imag: Vec<f64>,
    /// Norm of the component of `S` outside the span of the basis.
    pub residual: f64,
}

/// Orthogonal projection of `S` onto the reduced basis.
pub fn extract_reduced(s: &PolyspectrumVector) -> Result<ReducedPolyspectrum> {
    let (paths, cols) = reduced_basis(&s.ls)?;
    let mut rest = s.entries.clone();
    let mut values = Vec::with_capacity(cols.len());
    let mut imag = Vec::with_capacity(cols.len());
    for c in &cols {
        let norm2 = c.norm_squared();
        let p: Complex64 = c.iter().zip(s.entries.iter()).map(|(a, z)| z * *a).sum::<Complex64>() / norm2;
        for (r, a) in rest.iter_mut().zip(c.iter()) {
            *r -= p * *a;
        }
        values.push(p.re);
        imag.push(p.im);
    }
    let residual = rest.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(ReducedPolyspectrum {
        ls: s.ls.clone(),
        paths,
        values,
        imag,
        residual,
    })
}

/// `(I - Delta) x` with `Delta = Q Q^T`.
fn off_invariant(q: &DMatrix<f64>, x: &DVector<Complex64>) -> DVector<Complex64> {
    let mut r = x.clone();
    for k in 0..q.ncols() {
        let col = q.column(k);
        let p: Complex64 = col.iter().zip(x.iter()).map(|(a, z)| z * *a).sum();
        for (ri, a) in r.iter_mut().zip(col.iter()) {
            *ri -= p * *a;
        }
    }
    r
}

/// `|Delta S - S| / max(|S|, eps)`.
pub fn eigenvector_residual(s: &PolyspectrumVector) -> Result<f64> {
    let (_, q) = invariant_columns(&s.ls)?;
    let r = off_invariant(&q, &s.entries);
    let rn = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(rn / s.norm().max(f64::MIN_POSITIVE))
}

/// Isotropy residual of a Monte Carlo moment vector with its standard error,
/// `sqrt(sum_j Var(((I - Delta) S_i)_j) / B)`, both relative to `|S|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropyDiagnostic {
    pub residual: f64,
    pub propagated_se: f64,
}

/// Reduced coefficients estimated replicate by replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedEstimate {
    pub paths: Vec<Vec<i32>>,
    pub values: Vec<f64>,
    pub std_err: Vec<f64>,
    pub imag: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MomentEstimate {
    pub moment: PolyspectrumVector,
    pub replicates: usize,
    pub isotropy: Option<IsotropyDiagnostic>,
    pub reduced: Option<ReducedEstimate>,
}

struct Accum {
    sum: DVector<Complex64>,
    sq_re: DVector<f64>,
    sq_im: DVector<f64>,
    off_sq: f64,
    red_sum: Vec<Complex64>,
    red_sq: Vec<f64>,
}

impl Accum {
    fn new(dim: usize, k: usize) -> Self {
        Accum {
            sum: DVector::zeros(dim),
            sq_re: DVector::zeros(dim),
            sq_im: DVector::zeros(dim),
            off_sq: 0.0,
            red_sum: vec![Complex64::new(0.0, 0.0); k],
            red_sq: vec![0.0; k],
        }
    }

    fn merge(&mut self, o: Accum) {
        self.sum += o.sum;
        self.sq_re += o.sq_re;
        self.sq_im += o.sq_im;
        self.off_sq += o.off_sq;
        for (a, b) in self.red_sum.iter_mut().zip(o.red_sum) {
            *a += b;
        }
        for (a, b) in self.red_sq.iter_mut().zip(o.red_sq) {
            *a += b;
        }
    }
}

struct Target {
    ls: Vec<i32>,
    q: Option<DMatrix<f64>>,
    basis: Option<(Vec<Vec<i32>>, Vec<DVector<f64>>)>,
}

fn sample_var(sum: f64, sq: f64, n: f64) -> f64 {
    let m = sum / n;
    ((sq / n - m * m) * n / (n - 1.0)).max(0.0)
}

/// Monte Carlo moment polyspectra `E[a_{l_1} (x) ... (x) a_{l_n}]` for several
/// multipole tuples from one set of replicates. Coefficients come from
/// Gaussian draws at band `lmax_in` by exact Gaunt convolution. Replicates
/// are reduced in fixed-size chunks in order, so results do not depend on the
/// thread count.
pub fn mc_moment_polyspectra(
    model: &FieldModel,
    ls_list: &[Vec<i32>],
    lmax_in: usize,
    replicates: usize,
    seed: &SeedSpec,
) -> Result<Vec<MomentEstimate>> {
    if replicates < 2 {
        return Err(invalid("need at least two replicates"));
    }
    let mut targets = Vec::with_capacity(ls_list.len());
    let mut lout = 0;
    for ls in ls_list {
        check_ls(ls)?;
        lout = lout.max(*ls.iter().max().unwrap() as usize);
        let (q, basis) = if ls.len() >= 2 {
            (Some(invariant_columns(ls)?.1), Some(reduced_basis(ls)?))
        } else {
            (None, None)
        };
        targets.push(Target {
            ls: ls.clone(),
            q,
            basis,
        });
    }
    let table = GauntTable::new(lmax_in, lout);
    const CHUNK: usize = 512;
    let chunks: Vec<(usize, usize)> = (0..replicates)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(replicates)))
        .collect();
    let partials: Vec<Result<Vec<Accum>>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut acc: Vec<Accum> = targets
                .iter()
                .map(|t| Accum::new(dimension(&t.ls), t.basis.as_ref().map_or(0, |b| b.1.len())))
                .collect();
            for i in start..end {
                let a = sample_model_alm(model, lmax_in, seed, i as u64, &table)?;
                for (t, acc) in targets.iter().zip(acc.iter_mut()) {
                    let x = coefficient_tensor(&a, &t.ls);
                    for (j, z) in x.iter().enumerate() {
                        acc.sum[j] += z;
                        acc.sq_re[j] += z.re * z.re;
                        acc.sq_im[j] += z.im * z.im;
                    }
                    if let Some(q) = &t.q {
                        acc.off_sq += off_invariant(q, &x).iter().map(|z| z.norm_sqr()).sum::<f64>();
                    }
                    if let Some((_, cols)) = &t.basis {
                        for (k, c) in cols.iter().enumerate() {
                            let p: Complex64 =
                                c.iter().zip(x.iter()).map(|(w, z)| z * *w).sum::<Complex64>() / c.norm_squared();
                            acc.red_sum[k] += p;
                            acc.red_sq[k] += p.re * p.re;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total: Vec<Accum> = targets
        .iter()
        .map(|t| Accum::new(dimension(&t.ls), t.basis.as_ref().map_or(0, |b| b.1.len())))
        .collect();
    for p in partials {
        for (t, a) in total.iter_mut().zip(p?) {
            t.merge(a);
        }
    }
    let n = replicates as f64;
    let mut out = Vec::with_capacity(targets.len());
    for (t, acc) in targets.into_iter().zip(total) {
        let mean = &acc.sum / Complex64::new(n, 0.0);
        let se = DVector::from_fn(mean.len(), |j, _| {
            Complex64::new(
                (sample_var(acc.sum[j].re, acc.sq_re[j], n) / n).sqrt(),
                (sample_var(acc.sum[j].im, acc.sq_im[j], n) / n).sqrt(),
            )
        });
        let moment = PolyspectrumVector {
            ls: t.ls.clone(),
            entries: mean,
            std_err: Some(se),
        };
        let isotropy = t.q.as_ref().map(|q| {
            let r = off_invariant(q, &moment.entries);
            let r2 = r.iter().map(|z| z.norm_sqr()).sum::<f64>();
            // sum_j Var(r_ij) = E|r_i|^2 - |E r_i|^2, with the unbiased correction
            let var = ((acc.off_sq / n - r2) * n / (n - 1.0)).max(0.0);
            let norm = moment.norm().max(f64::MIN_POSITIVE);
            IsotropyDiagnostic {
                residual: r2.sqrt() / norm,
                propagated_se: (var / n).sqrt() / norm,
            }
        });
        let reduced = t.basis.map(|(paths, _)| ReducedEstimate {
            paths,
            values: acc.red_sum.iter().map(|z| z.re / n).collect(),
            std_err: acc
                .red_sum
                .iter()
                .zip(&acc.red_sq)
                .map(|(s, q)| (sample_var(s.re, *q, n) / n).sqrt())
                .collect(),
            imag: acc.red_sum.iter().map(|z| z.im / n).collect(),
        });
        out.push(MomentEstimate {
            moment,
            replicates,
            isotropy,
            reduced,
        });
    }
    Ok(out)
}

pub fn mc_moment_polyspectrum(
    model: &FieldModel,
    ls: &[i32],
    lmax_in: usize,
    replicates: usize,
    seed: &SeedSpec,
) -> Result<MomentEstimate> {
    Ok(mc_moment_polyspectra(model, &[ls.to_vec()], lmax_in, replicates, seed)?.remove(0))
}

/// Moment vectors keyed by the sorted 1-based positions they cover.
pub type MomentTable = HashMap<Vec<usize>, DVector<Complex64>>;

/// Cumulant polyspectrum from moments by the alternating partition sum, each
/// Kronecker product put back into the original index order.
pub fn cumulant_from_moments(ls: &[i32], moments: &MomentTable) -> Result<PolyspectrumVector> {
    let n = ls.len();
    if n > 6 {
        return Err(domain("cumulants are supported up to n = 6"));
    }
    let dim = check_ls(ls)?;
    let mut out = DVector::<Complex64>::zeros(dim);
    for p in partitions(n)? {
        let k = p.blocks().len();
        let weight = parity(k as i32 - 1) * (1..k).map(|x| x as f64).product::<f64>();
        let mut factors = Vec::with_capacity(k);
        for b in p.blocks() {
            let v = moments
                .get(b)
                .ok_or_else(|| invalid(format!("missing moment for block {b:?}")))?;
            let bl: Vec<i32> = b.iter().map(|&i| ls[i - 1]).collect();
            if v.len() != dimension(&bl) {
                return Err(invalid(format!("moment for block {b:?} has wrong length")));
            }
            factors.push((b.clone(), bl, v));
        }
        for (idx, o) in out.iter_mut().enumerate() {
            let ms = multi_index(ls, idx);
            let mut term = Complex64::new(weight, 0.0);
            for (b, bl, v) in &factors {
                let sub: Vec<i32> = b.iter().map(|&i| ms[i - 1]).collect();
                term *= v[crate::coupling::linear_index(bl, &sub)];
            }
            *o += term;
        }
    }
    PolyspectrumVector::new(ls.to_vec(), out)
}

/// Power spectrum of the centered quadratic coefficients `a_lm(2)`.
pub fn quadratic_power_spectrum(l: i32, spectrum: &PowerSpectrum) -> f64 {
    let lmax = spectrum.lmax() as i32;
    let mut s = 0.0;
    for l1 in 0..=lmax {
        for l2 in 0..=lmax {
            let c = cg(l1, 0, l2, 0, l, 0);
            if c != 0.0 {
                s += spectrum.get(l1 as usize)
                    * spectrum.get(l2 as usize)
                    * ((2 * l1 + 1) * (2 * l2 + 1)) as f64
                    * c
                    * c;
            }
        }
    }
    2.0 * s / (4.0 * PI * (2 * l + 1) as f64)
}

/// Reduced bispectrum `h_{l1 l2 l3}` of the quadratic coefficients:
/// `E a_{l1 m1}(2) a_{l2 m2}(2) conj(a_{l3 m3}(2)) = h C^{l3 m3}_{l1 m1 l2 m2}`.
pub fn chi1_bispectrum_h(l1: i32, l2: i32, l3: i32, spectrum: &PowerSpectrum) -> f64 {
    if (l1 + l2 + l3) % 2 != 0 || !triangle(l1, l2, l3) {
        return 0.0;
    }
    let lmax = spectrum.lmax() as i32;
    let c = |l: i32| spectrum.get(l as usize);
    let terms: Vec<f64> = (0..=lmax)
        .into_par_iter()
        .map(|a| {
            let mut s = 0.0;
            for b in 0..=lmax {
                let z1 = cg(a, 0, b, 0, l1, 0);
                if z1 == 0.0 {
                    continue;
                }
                for cc in 0..=lmax {
                    let z2 = cg(a, 0, cc, 0, l2, 0);
                    let z3 = cg(b, 0, cc, 0, l3, 0);
                    if z2 == 0.0 || z3 == 0.0 {
                        continue;
                    }
                    let w = c(a) * c(b) * c(cc) * ((2 * a + 1) * (2 * b + 1) * (2 * cc + 1)) as f64;
                    s += w * z1 * z2 * z3 * parity(a + b + cc) * sixj(l1, l2, l3, cc, b, a);
                }
            }
            s
        })
        .collect();
    let sum: f64 = terms.iter().sum();
    8.0 * parity(l1 - l2) / ((2 * l3 + 1) as f64).sqrt() * sum / (4.0 * PI).powf(1.5)
}

/// Reduced bispectrum of `T_G + f (T_G^2 - E T_G^2)`: the first-order term
/// plus `f^3 h`.
pub fn bispectrum_sachs_wolfe(l1: i32, l2: i32, l3: i32, spectrum: &PowerSpectrum, f: f64) -> f64 {
    if f == 0.0 || (l1 + l2 + l3) % 2 != 0 || !triangle(l1, l2, l3) {
        return 0.0;
    }
    let c = |l: i32| spectrum.get(l as usize);
    let first = 2.0
        * f
        * (((2 * l1 + 1) * (2 * l2 + 1)) as f64 / (4.0 * PI * (2 * l3 + 1) as f64)).sqrt()
        * cg(l1, 0, l2, 0, l3, 0)
        * (c(l1) * c(l2) + c(l1) * c(l3) + c(l2) * c(l3));
    first + f.powi(3) * chi1_bispectrum_h(l1, l2, l3, spectrum)
}

/// One cyclic chain of the fourth-order quadratic cumulant, in the basis with
/// intermediate `lambda` coupling `(l1, l2)`.
fn p4_cycle(l1: i32, l2: i32, l3: i32, l4: i32, lambda: i32, spectrum: &PowerSpectrum) -> f64 {
    let lmax = spectrum.lmax() as i32;
    let c = |l: i32| spectrum.get(l as usize);
    let terms: Vec<f64> = (0..=lmax)
        .into_par_iter()
        .map(|a| {
            let mut s = 0.0;
            for b in 0..=lmax {
                let z1 = cg(a, 0, b, 0, l1, 0);
                if z1 == 0.0 {
                    continue;
                }
                for cc in 0..=lmax {
                    let z2 = cg(b, 0, cc, 0, l3, 0);
                    if z2 == 0.0 {
                        continue;
                    }
                    for d in 0..=lmax {
                        let z3 = cg(cc, 0, d, 0, l4, 0);
                        let z4 = cg(d, 0, a, 0, l2, 0);
                        if z3 == 0.0 || z4 == 0.0 {
                            continue;
                        }
                        let w = c(a) * c(b) * c(cc) * c(d) * ((2 * a + 1) * (2 * b + 1) * (2 * cc + 1) * (2 * d + 1)) as f64;
                        s += w
                            * z1
                            * z2
                            * z3
                            * z4
                            * parity(l2 + b + d)
                            * sixj(l1, l2, lambda, d, b, a)
                            * sixj(lambda, l3, l4, cc, d, b);
                    }
                }
            }
            s
        })
        .collect();
    let sum: f64 = terms.iter().sum();
    16.0 * ((2 * lambda + 1) as f64 / ((4.0 * PI).powi(4) * (2 * l4 + 1) as f64)).sqrt() * sum
}

fn p4_swapped(l1: i32, l2: i32, l3: i32, l4: i32, lambda: i32, spectrum: &PowerSpectrum) -> f64 {
    parity(lambda) * ((2 * l3 + 1) as f64 / (2 * l4 + 1) as f64).sqrt() * p4_cycle(l1, l2, l4, l3, lambda, spectrum)
}

/// Reduced cumulant trispectrum `P(lambda)` of a chi-square field with `nu`
/// degrees of freedom, built from the three cyclic pairings of the four
/// quadratic factors.
pub fn chi2_trispectrum_p4(ls: [i32; 4], lambda: i32, spectrum: &PowerSpectrum, nu: u32) -> Result<f64> {
    let [l1, l2, l3, l4] = ls;
    if ls.iter().any(|&l| l < 0) {
        return Err(domain("negative multipole"));
    }
    if nu == 0 {
        return Err(domain("chi-square needs nu >= 1"));
    }
    if !triangle(l1, l2, lambda) || !triangle(lambda, l3, l4) {
        return Err(domain(format!("lambda = {lambda} outside the coupling range")));
    }
    if (l1 + l2 + l3 + l4) % 2 != 0 {
        return Ok(0.0);
    }
    let direct = p4_cycle(l1, l2, l3, l4, lambda, spectrum);
    let swapped = p4_swapped(l1, l2, l3, l4, lambda, spectrum);
    // third chain: couple (l1, l3) first, then recouple to (l1, l2)
    let lo = (l1 - l3).abs().max((l2 - l4).abs());
    let hi = (l1 + l3).min(l2 + l4);
    let mut crossed = 0.0;
    for mu in lo..=hi {
        let r = parity(l2 + l3 + lambda + mu)
            * (((2 * lambda + 1) * (2 * mu + 1)) as f64).sqrt()
            * sixj(l2, l1, lambda, l3, l4, mu);
        if r != 0.0 {
            crossed += r * p4_swapped(l1, l3, l2, l4, mu, spectrum);
        }
    }
    Ok(f64::from(nu) * (direct + swapped + crossed))
}

/// Row types for the diagram oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    /// A Gaussian coefficient `a_lm`.
    Linear,
    /// A quadratic coefficient `a_lm(2)`.
    Quadratic,
}

/// Distinct connected non-flat diagrams for the given rows: canonical walk
/// (row sequence, closed?) with multiplicity.
fn connected_diagrams(kinds: &[RowKind]) -> Vec<(Vec<usize>, bool, usize)> {
    let mut owner = Vec::new();
    for (r, k) in kinds.iter().enumerate() {
        let c = if *k == RowKind::Linear { 1 } else { 2 };
        owner.extend(std::iter::repeat(r).take(c));
    }
    let nodes = owner.len();
    let mut counts: HashMap<(Vec<usize>, bool), usize> = HashMap::new();
    if nodes % 2 != 0 || nodes == 0 {
        return Vec::new();
    }
    let mut partner = vec![usize::MAX; nodes];
    fn rec(
        owner: &[usize],
        partner: &mut Vec<usize>,
        kinds: &[RowKind],
        counts: &mut HashMap<(Vec<usize>, bool), usize>,
    ) {
        let Some(i) = partner.iter().position(|&p| p == usize::MAX) else {
            if let Some(key) = walk(owner, partner, kinds) {
                *counts.entry(key).or_default() += 1;
            }
            return;
        };
        for j in i + 1..owner.len() {
            if partner[j] == usize::MAX && owner[j] != owner[i] {
                partner[i] = j;
                partner[j] = i;
                rec(owner, partner, kinds, counts);
                partner[i] = usize::MAX;
                partner[j] = usize::MAX;
            }
        }
    }
    rec(&owner, &mut partner, kinds, &mut counts);
    let mut out: Vec<(Vec<usize>, bool, usize)> = counts.into_iter().map(|((s, c), n)| (s, c, n)).collect();
    out.sort();
    out
}

/// Follow the edges of a matching; `None` when it is disconnected.
fn walk(owner: &[usize], partner: &[usize], kinds: &[RowKind]) -> Option<(Vec<usize>, bool)> {
    let rows = kinds.len();
    let nodes_of = |r: usize| -> Vec<usize> { (0..owner.len()).filter(|&i| owner[i] == r).collect() };
    let start_row = kinds.iter().position(|k| *k == RowKind::Linear);
    let closed = start_row.is_none();
    let start_row = start_row.unwrap_or(0);
    let mut seq = vec![start_row];
    let mut node = nodes_of(start_row)[0];
    loop {
        let next = partner[node];
        let r = owner[next];
        if closed && r == start_row {
            break;
        }
        seq.push(r);
        let ns = nodes_of(r);
        if ns.len() == 1 {
            break;
        }
        node = if ns[0] == next { ns[1] } else { ns[0] };
    }
    if seq.len() != rows {
        return None;
    }
    Some((canonical(seq, closed), closed))
}

fn canonical(seq: Vec<usize>, closed: bool) -> Vec<usize> {
    let mut rev = seq.clone();
    rev.reverse();
    if !closed {
        return seq.min(rev);
    }
    let n = seq.len();
    let mut best = seq.clone();
    for s in [&seq, &rev] {
        for k in 0..n {
            let rot: Vec<usize> = s[k..].iter().chain(&s[..k]).copied().collect();
            best = best.min(rot);
        }
    }
    best
}

/// Number of connected non-flat pairings for `n` quadratic rows.
pub fn connected_diagram_count(n: usize) -> Result<usize> {
    if !(1..=6).contains(&n) {
        return Err(domain("row count must be between 1 and 6"));
    }
    Ok(connected_diagrams(&vec![RowKind::Quadratic; n]).iter().map(|d| d.2).sum())
}

/// Joint cumulant of Gaussian coefficients (`Linear` rows) and centered
/// quadratic coefficients (`Quadratic` rows) for `T_G` with `spectrum`,
/// summed over connected Gaussian diagrams without flat edges.
pub fn diagram_cumulant_mixed(kinds: &[RowKind], ls: &[i32], spectrum: &PowerSpectrum) -> Result<PolyspectrumVector> {
    if kinds.len() != ls.len() {
        return Err(invalid("one row kind per multipole"));
    }
    if kinds.is_empty() || kinds.len() > 6 {
        return Err(domain("row count must be between 1 and 6"));
    }
    let dim = check_ls(ls)?;
    let band = spectrum.lmax();
    let nidx = (band + 1) * (band + 1);
    let idx = |l: i32, m: i32| (l * l + l + m) as usize;
    // covariance E[a_x a_y] = (-1)^mu C_l for y = (l, -mu)
    let mut g = DMatrix::<f64>::zeros(nidx, nidx);
    for l in 0..=band as i32 {
        for mu in -l..=l {
            g[(idx(l, mu), idx(l, -mu))] = parity(mu) * spectrum.get(l as usize);
        }
    }
    let diagrams = connected_diagrams(kinds);
    let mut cache: HashMap<(i32, i32), DMatrix<f64>> = HashMap::new();
    let mut rows_for = |l: i32, m: i32| -> DMatrix<f64> {
        cache
            .entry((l, m))
            .or_insert_with(|| {
                let mut a = DMatrix::zeros(nidx, nidx);
                for l1 in 0..=band as i32 {
                    for m1 in -l1..=l1 {
                        for l2 in 0..=band as i32 {
                            let m2 = m - m1;
                            if m2.abs() <= l2 {
                                a[(idx(l1, m1), idx(l2, m2))] = gaunt(l1, m1, l2, m2, l, m);
                            }
                        }
                    }
                }
                &a * &g
            })
            .clone()
    };
    let mut out = DVector::<Complex64>::zeros(dim);
    for (i, o) in out.iter_mut().enumerate() {
        let ms = multi_index(ls, i);
        if ms.iter().sum::<i32>() != 0 {
            continue;
        }
        let mut total = 0.0;
        for (seq, closed, mult) in &diagrams {
            let value = if *closed {
                let mut p = DMatrix::<f64>::identity(nidx, nidx);
                for &r in seq {
                    p = p * rows_for(ls[r], ms[r]);
                }
                p.trace()
            } else {
                let (first, last) = (seq[0], *seq.last().unwrap());
                if ls[first] as usize > band || ls[last] as usize > band {
                    0.0
                } else {
                    // row vector e_first^T g, then the quadratic rows, then e_last
                    let mut v = g.row(idx(ls[first], ms[first])).into_owned();
                    for &r in &seq[1..seq.len() - 1] {
                        v = v * rows_for(ls[r], ms[r]);
                    }
                    v[idx(ls[last], ms[last])]
                }
            };
            total += *mult as f64 * value;
        }
        *o = Complex64::new(total, 0.0);
    }
    PolyspectrumVector::new(ls.to_vec(), out)
}

/// Cumulant polyspectrum of the quadratic coefficients `a_{l_i}(2)`.
pub fn diagram_cumulant_oracle(ls: &[i32], spectrum: &PowerSpectrum) -> Result<PolyspectrumVector> {
    diagram_cumulant_mixed(&vec![RowKind::Quadratic; ls.len()], ls, spectrum)
}

/// Number of perfect matchings of a `p x q` node array with no edge inside a
/// row, i.e. `E H_q(Z)^p`.
pub fn gaussian_diagram_count(p: usize, q: usize) -> Result<u128> {
    if p > 8 || q > 4 {
        return Err(domain("gaussian_diagram_count supports p <= 8, q <= 4"));
    }
    if (p * q) % 2 != 0 {
        return Ok(0);
    }
    fn count(rem: Vec<usize>, memo: &mut HashMap<Vec<usize>, u128>) -> u128 {
        let mut key = rem.clone();
        key.sort_unstable();
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let Some(i) = rem.iter().position(|&r| r > 0) else {
            return 1;
        };
        let mut total = 0;
        for j in i + 1..rem.len() {
            if rem[j] > 0 {
                let mut next = rem.clone();
                next[i] -= 1;
                next[j] -= 1;
                total += rem[j] as u128 * count(next, memo);
            }
        }
        memo.insert(key, total);
        total
    }
    Ok(count(vec![q; p], &mut HashMap::new()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentIdentityReport {
    pub p: u32,
    pub mc_mean: f64,
    pub mc_se: f64,
    /// Closed form where one exists: `c_{p,1} sigma^p` for Gaussian fields,
    /// `f_q^p c_{p,q}` for a single standardized Hermite term.
    pub closed_form: Option<f64>,
}

impl MomentIdentityReport {
    pub fn z_score(&self) -> Option<f64> {
        self.closed_form.map(|c| (self.mc_mean - c) / self.mc_se.max(f64::MIN_POSITIVE))
    }
}

/// Monte Carlo `E T(north)^p` against its Gaussian-diagram closed form.
pub fn moment_identity_check(
    p: u32,
    model: &FieldModel,
    lmax: usize,
    replicates: usize,
    seed: &SeedSpec,
) -> Result<MomentIdentityReport> {
    if replicates < 2 {
        return Err(invalid("need at least two replicates"));
    }
    if !(1..=8).contains(&p) {
        return Err(domain("moment order must be between 1 and 8"));
    }
    let spec = model.spectrum.truncate(lmax);
    let sigma2 = spec.variance();
    let sigma = sigma2.sqrt();
    let hermite_fs = match &model.variant {
        ModelVariant::Gaussian => None,
        ModelVariant::HermiteSubordinated(fs) => Some(fs.clone()),
        _ => return Err(invalid("moment identity covers Gaussian and Hermite models")),
    };
    let values: Vec<Result<(f64, f64)>> = (0..replicates)
        .collect::<Vec<_>>()
        .par_chunks(1024)
        .map(|chunk| {
            let (mut s, mut q) = (0.0, 0.0);
            for &i in chunk {
                let a = sample_gaussian_alm(&spec, lmax, seed, i as u64)?;
                let t: f64 = (0..=lmax)
                    .map(|l| a.get(l, 0).re * ((2 * l + 1) as f64 / (4.0 * PI)).sqrt())
                    .sum();
                let x = match &hermite_fs {
                    None => t,
                    Some(fs) => fs.iter().enumerate().map(|(j, f)| f * hermite(j + 1, t / sigma)).sum(),
                };
                let v = x.powi(p as i32);
                s += v;
                q += v * v;
            }
            Ok((s, q))
        })
        .collect();
    let (mut s, mut q) = (0.0, 0.0);
    for v in values {
        let (a, b) = v?;
        s += a;
        q += b;
    }
    let n = replicates as f64;
    let closed_form = match &hermite_fs {
        None => Some(gaussian_diagram_count(p as usize, 1)? as f64 * sigma.powi(p as i32)),
        Some(fs) => {
            let nonzero: Vec<usize> = (0..fs.len()).filter(|&j| fs[j] != 0.0).collect();
            match nonzero.as_slice() {
                [j] if j + 1 <= 4 => Some(fs[*j].powi(p as i32) * gaussian_diagram_count(p as usize, j + 1)? as f64),
                _ => None,
            }
        }
    };
    Ok(MomentIdentityReport {
        p,
        mc_mean: s / n,
        mc_se: (sample_var(s, q, n) / n).sqrt(),
        closed_form,
    })
}
