//! Spectral limit theory and covariance-structure tests for Gram matrices of
//! proportionally wide data: p variables, n samples, p/n = phi >= 1, with the
//! n x n Gram matrix Q = X^T Sigma X built from entries of variance
//! (pn)^{-1/2}.
//!
//! The crate has four layers:
//!
//! * [`law`]: the deformed Marchenko-Pastur limit of the spectrum of Q for an
//!   atomic population spectrum. Stieltjes transform solver, support edges,
//!   density/CDF grids, and closed identity-case forms.
//! * [`clt`]: Gaussian limits of linear spectral statistics. Global (smooth)
//!   functionals get kappa4-dependent mean and covariance; edge- and
//!   bulk-local functionals get universal limits free of both kappa4 and the
//!   population spectrum.
//! * [`stats`]: eight standardized test statistics for H0: Sigma = I (four
//!   global, four local), exact null centerings, p-values and decisions.
//! * [`sim`]: seeded, bitwise-reproducible Monte Carlo: ensemble sampling
//!   with blocked Gram accumulation, ECDF/power/ROC experiments, and
//!   cluster/spiked alternatives.
//!
//! Everything is plain f64; errors are explicit via [`error::DmpError`]
//! (unsupported regime phi < 1, solver failures, invalid spectra, ...).

pub mod clt;
pub mod error;
pub mod law;
pub mod sim;
pub mod stats;

mod quad;

pub use error::{DmpError, Result};
pub use law::PopulationSpectrum;
pub use num_complex::Complex64;
pub use stats::{TestKind, TestParams};
