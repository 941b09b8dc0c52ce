//! Euler angles, rotation matrices and Wigner d/D matrices.
//!
//! Angles follow the z-x-z convention `A = R_z(psi) R_x(theta) R_z(phi)`.
//! `D^l(g)` acts on coefficient vectors so that rotating a field `T` to
//! `T(A^{-1} x)` maps `a_l` to `D^l(g) a_l`; rows and columns are indexed by
//! `m = -l..=l` in ascending order.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;

use crate::error::{domain, invalid, Result};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl EulerAngles {
    pub fn new(phi: f64, theta: f64, psi: f64) -> Result<Self> {
        if !(0.0..TWO_PI).contains(&phi) || !(0.0..TWO_PI).contains(&psi) {
            return Err(domain(format!("phi, psi must lie in [0, 2pi): {phi}, {psi}")));
        }
        if !(0.0..=PI).contains(&theta) {
            return Err(domain(format!("theta must lie in [0, pi]: {theta}")));
        }
        Ok(EulerAngles { phi, theta, psi })
    }

    pub fn identity() -> Self {
        EulerAngles {
            phi: 0.0,
            theta: 0.0,
            psi: 0.0,
        }
    }

    /// Angles of `A(self) * A(other)`.
    pub fn compose(&self, other: &EulerAngles) -> EulerAngles {
        rotation_to_euler(&(euler_to_rotation(self) * euler_to_rotation(other)))
            .expect("product of rotations is a rotation")
    }

    pub fn inverse(&self) -> EulerAngles {
        rotation_to_euler(&euler_to_rotation(self).transpose())
            .expect("transpose of a rotation is a rotation")
    }
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn euler_to_rotation(g: &EulerAngles) -> Matrix3<f64> {
    rz(g.psi) * rx(g.theta) * rz(g.phi)
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(TWO_PI);
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Inverse of [`euler_to_rotation`]. At `theta` in `{0, pi}` only `phi + psi`
/// is determined and `psi = 0` is returned.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<EulerAngles> {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    if orth > 1e-10 || (r.determinant() - 1.0).abs() > 1e-10 {
        return Err(invalid("matrix is not a rotation"));
    }
    let theta = r[(2, 2)].clamp(-1.0, 1.0).acos();
    let sin_theta = (r[(2, 0)].powi(2) + r[(2, 1)].powi(2)).sqrt();
    let (phi, psi) = if sin_theta < 1e-12 {
        if r[(2, 2)] > 0.0 {
            (r[(1, 0)].atan2(r[(0, 0)]), 0.0)
        } else {
            ((-r[(0, 1)]).atan2(r[(0, 0)]), 0.0)
        }
    } else {
        (r[(2, 0)].atan2(r[(2, 1)]), r[(0, 2)].atan2(-r[(1, 2)]))
    };
    let theta = if sin_theta < 1e-12 {
        if r[(2, 2)] > 0.0 {
            0.0
        } else {
            PI
        }
    } else {
        theta
    };
    Ok(EulerAngles {
        phi: wrap(phi),
        theta,
        psi: wrap(psi),
    })
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Wigner small-d matrix `d^l(theta)`, entry `(m + l, n + l)` holding
/// `d^l_{mn}`.
pub fn wigner_small_d(l: i32, theta: f64) -> Result<DMatrix<f64>> {
    if l < 0 {
        return Err(domain(format!("negative multipole l = {l}")));
    }
    if !(0.0..=PI).contains(&theta) {
        return Err(domain(format!("theta must lie in [0, pi]: {theta}")));
    }
    let dim = (2 * l + 1) as usize;
    let (s, c) = (theta / 2.0).sin_cos();
    let mut d = DMatrix::zeros(dim, dim);
    for m in -l..=l {
        for n in -l..=l {
            let pre = (factorial(l + m) * factorial(l - m) * factorial(l + n) * factorial(l - n)).sqrt();
            let kmin = 0.max(-m - n);
            let kmax = (l - m).min(l - n);
            let mut sum = 0.0;
            for k in kmin..=kmax {
                let den = factorial(k)
                    * factorial(l - m - k)
                    * factorial(l - n - k)
                    * factorial(m + n + k);
                let pc = m + n + 2 * k;
                let ps = 2 * l - m - n - 2 * k;
                let term = pre / den * c.powi(pc) * s.powi(ps);
                if k % 2 == 0 {
                    sum += term;
                } else {
                    sum -= term;
                }
            }
            let sign = if (l - n).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            d[((m + l) as usize, (n + l) as usize)] = sign * sum;
        }
    }
    Ok(d)
}

/// A `(2l+1) x (2l+1)` complex block `D^l(g)`.
#[derive(Clone, Debug)]
pub struct RotationMatrixBlock {
    pub l: i32,
    pub entries: DMatrix<Complex64>,
}

impl RotationMatrixBlock {
    pub fn get(&self, m: i32, n: i32) -> Complex64 {
        self.entries[((m + self.l) as usize, (n + self.l) as usize)]
    }
}

fn i_pow(k: i32) -> Complex64 {
    match k.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `D^l_{mn}(g) = e^{-i m psi} i^{m-n} d^l_{mn}(theta) e^{-i n phi}`.
pub fn wigner_d_matrix(l: i32, g: &EulerAngles) -> Result<RotationMatrixBlock> {
    let d = wigner_small_d(l, g.theta)?;
    let dim = (2 * l + 1) as usize;
    let mut entries = DMatrix::zeros(dim, dim);
    for m in -l..=l {
        for n in -l..=l {
            let phase = Complex64::from_polar(1.0, -(m as f64) * g.psi - (n as f64) * g.phi);
            entries[((m + l) as usize, (n + l) as usize)] =
                phase * i_pow(m - n) * d[((m + l) as usize, (n + l) as usize)];
        }
    }
    Ok(RotationMatrixBlock { l, entries })
}
