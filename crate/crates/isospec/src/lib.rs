//! Angular polyspectra of isotropic random fields on the sphere.
//!
//! The crate covers the whole chain from Wigner coefficients to Monte Carlo
//! estimation:
//!
//! - [`angular_coeffs`]: exact 3j/6j/Clebsch-Gordan values, Wigner d/D matrices.
//! - [`coupling`]: Clebsch-Gordan block matrices, coupling paths and the
//!   isotropy projector.
//! - [`sht`]: spherical harmonics and a Gauss-Legendre transform.
//! - [`random_fields`]: Gaussian and subordinated field simulation.
//! - [`spectra`]: polyspectra, cumulants, reduced spectra, analytic formulas
//!   for quadratic fields and the Gaussian diagram oracle.
//! - [`cg_compress`]: Monte Carlo recovery of Clebsch-Gordan coefficients.
//! - [`io`]: CSV and binary formats for coefficients and matrices.

pub mod angular_coeffs;
pub mod cg_compress;
pub mod coupling;
pub mod error;
pub mod io;
pub mod random_fields;
pub mod sht;
pub mod spectra;

pub use error::{Error, Result};
