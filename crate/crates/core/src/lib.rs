//! Perpetual American puts and first-passage problems for regime-switching
//! jump-diffusions with phase-type jumps, solved through a fluid embedding and
//! the matrix Wiener-Hopf factorization of the embedded process.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod american_put;
pub mod embedding;
pub mod error;
pub mod exit;
pub mod first_passage;
pub mod linalg;
pub mod mc_oracle;
pub mod measure;
pub mod model;
pub mod phase_type;
pub mod poly;
pub mod quad;
pub mod wiener_hopf;

pub use error::{Error, Result};
