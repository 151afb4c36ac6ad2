//! Numerical engine for heat kernels of time-inhomogeneous, possibly
//! non-symmetric, mixed stable-like nonlocal operators, built on the Levi
//! parametrix method, together with a Monte Carlo simulator of the
//! underlying jump processes for independent cross-validation.
//!
//! Module map:
//! - [`profiles`]: the radial jump-scale function phi (evaluation,
//!   inversion, case classification, scaling-bound and integrability
//!   checks, the reference weight rho).
//! - [`moduli`]: continuity moduli (Dini / slowly varying / regularly
//!   varying classes), the integrals Gamma and M, Potter bounds, and the
//!   convolution weight h.
//! - [`frozen`]: densities of the x-independent time-inhomogeneous jump
//!   process: characteristic exponents, Fourier inversion, scaling
//!   reduction, derivatives, the nonlocal difference operators, the
//!   big/small-jump decomposition and the compensator drift.
//! - [`parametrix`]: the Levi construction for variable coefficients:
//!   defect kernel, Picard series, kernel assembly, and the
//!   Chapman-Kolmogorov extension.
//! - [`simulate`]: Monte Carlo sampling and exit/hitting statistics.
//! - [`config`] / [`report`]: experiment configuration and validation
//!   reporting used by the CLI harness.

pub mod config;
pub mod error;
pub mod frozen;
pub mod moduli;
pub mod parametrix;
pub mod profiles;
pub mod quad;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
