//! Tensor networks preparable by constant-depth circuits plus a single round of
//! measurement and feedback.
//!
//! The crate is organised bottom-up: [`tensors`] holds dense complex algebra,
//! [`mf_basis`] builds and validates measurement bases, [`qudit_clifford`] does
//! Weyl-Heisenberg string arithmetic and Clifford synthesis, and the remaining
//! modules implement the MPS, PEPS and MPO structure results together with a
//! simulator of the preparation protocol.

pub mod cli;
pub mod error;
pub mod mf_basis;
pub mod mf_mpo;
pub mod mf_mps;
pub mod mf_peps;
pub mod mf_protocol;
pub mod qudit_clifford;
pub mod report;
pub mod tensors;

pub use error::{Error, Result};
pub use tensors::{DenseTensor, MatrixView, C64};

/// Default tolerance for every "equal / proportional to" check.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Tolerance from `MFTN_TOL` if set and parseable, else [`DEFAULT_TOL`].
pub fn env_tolerance() -> f64 {
    std::env::var("MFTN_TOL")
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|t| *t > 0.0 && t.is_finite())
        .unwrap_or(DEFAULT_TOL)
}
