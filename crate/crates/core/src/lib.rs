//! Tensor completion toolkit.
//!
//! Reconstructs a dense multi-way array from a sparse set of observed
//! entries. The main solver is a variational Bayesian CP factorization whose
//! per-component precisions shrink unneeded rank-1 terms, so the CP rank is
//! inferred rather than supplied. A slice-wise compressed-sensing baseline
//! (orthonormal 2-D DCT dictionary, l1-regularized least squares) is provided
//! for comparison.
//!
//! Multi-indices are 1-based at every public boundary; dense storage is
//! row-major with the last index varying fastest.

pub mod bayes;
pub mod error;
pub mod flags;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tns;
pub mod vp;

pub use error::{Error, Result};
pub use tensor::{CpModel, DenseTensor, MultiIndex, ObservationSet};
