//! Low-rank factorized training, nuclear-norm proximal solvers and
//! loss-landscape certificates for factored (`X = A B^T`) objectives.
//!
//! The crate is organised bottom-up:
//!
//! - [`matcore`]: SVD-based kernels (rank projection, singular value
//!   thresholding, subgradient membership, balanced factorizations).
//! - [`objectives`]: the [`Objective`] trait, synthetic generators and the
//!   regularized wrappers in nuclear and factored form.
//! - [`optim`]: factored gradient descent with weight decay and the proximal
//!   gradient method.
//! - [`landscape`]: second-order stationarity certificates and the
//!   global/spurious classification.
//! - [`constants`]: Monte-Carlo estimation of restricted strong convexity and
//!   smoothness constants.
//! - [`dynamics`]: approximate low-rank checks along weight-decayed trajectories.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod dynamics;
pub mod error;
pub mod landscape;
pub mod matcore;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use objectives::{Objective, RegularizedForm, RegularizedObjective};
pub use types::{CompactSvd, FactorPair, FactorTuple, MatrixTuple, MatrixVar};
