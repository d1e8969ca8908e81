//! Differentiable objectives `f(X)` over matrix tuples, the regularized
//! wrappers and a finite-difference derivative checker.

mod check;
mod mlp;
mod planted;
mod quadratic;
mod regularized;
mod sensing;

use std::sync::Arc;

use crate::types::MatrixTuple;

pub use check::{derivative_check, DerivativeCheck};
pub use mlp::{load_dataset_csv, mlp_objective, synthetic_dataset, Mlp, Sample, TunedLayer};
pub use planted::{planted_spurious_quadratic, PlantedInstance};
pub use quadratic::{quadratic_objective, Basis, QuadraticObjective};
pub use regularized::{RegularizedForm, RegularizedObjective};
pub use sensing::{matrix_sensing_objective, MatrixSensing};

/// A twice-differentiable scalar function of a [`MatrixTuple`].
///
/// Implementations are immutable after construction. Callers guarantee that
/// arguments match [`Objective::shapes`]; the solvers and checkers validate
/// shapes at their entry points.
pub trait Objective: Send + Sync {
    fn shapes(&self) -> &[(usize, usize)];

    fn value(&self, x: &MatrixTuple) -> f64;

    fn gradient(&self, x: &MatrixTuple) -> MatrixTuple;

    /// `∇²f(x)[d1, d2]`.
    fn hessian_cross(&self, x: &MatrixTuple, d1: &MatrixTuple, d2: &MatrixTuple) -> f64;

    /// `∇²f(x)[d, d]`.
    fn hessian_quadratic(&self, x: &MatrixTuple, d: &MatrixTuple) -> f64 {
        self.hessian_cross(x, d, d)
    }

    /// `∇²f(x)[d, ·]` as a tuple, so that `⟨hvp, e⟩ = ∇²f(x)[d, e]`.
    fn hessian_vector(&self, x: &MatrixTuple, d: &MatrixTuple) -> MatrixTuple;

    fn known_minimizer(&self) -> Option<&MatrixTuple> {
        None
    }

    /// Number of samples when the objective is an empirical mean.
    fn num_samples(&self) -> Option<usize> {
        None
    }

    /// Mean loss over the samples in `batch`.
    fn batch_value(&self, _x: &MatrixTuple, _batch: &[usize]) -> Option<f64> {
        None
    }

    /// Gradient of [`Objective::batch_value`].
    fn batch_gradient(&self, _x: &MatrixTuple, _batch: &[usize]) -> Option<MatrixTuple> {
        None
    }
}

/// `c · f` for a positive constant `c`.
pub struct ScaledObjective {
    inner: Arc<dyn Objective>,
    factor: f64,
}

impl ScaledObjective {
    pub fn new(inner: Arc<dyn Objective>, factor: f64) -> crate::Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return crate::error::invalid(format!("scale must be finite and > 0, got {factor}"));
        }
        Ok(Self { inner, factor })
    }
}

impl Objective for ScaledObjective {
    fn shapes(&self) -> &[(usize, usize)] {
        self.inner.shapes()
    }

    fn value(&self, x: &MatrixTuple) -> f64 {
        self.factor * self.inner.value(x)
    }

    fn gradient(&self, x: &MatrixTuple) -> MatrixTuple {
        self.inner.gradient(x).scaled(self.factor)
    }

    fn hessian_cross(&self, x: &MatrixTuple, d1: &MatrixTuple, d2: &MatrixTuple) -> f64 {
        self.factor * self.inner.hessian_cross(x, d1, d2)
    }

    fn hessian_vector(&self, x: &MatrixTuple, d: &MatrixTuple) -> MatrixTuple {
        self.inner.hessian_vector(x, d).scaled(self.factor)
    }

    fn known_minimizer(&self) -> Option<&MatrixTuple> {
        self.inner.known_minimizer()
    }

    fn num_samples(&self) -> Option<usize> {
        self.inner.num_samples()
    }

    fn batch_value(&self, x: &MatrixTuple, batch: &[usize]) -> Option<f64> {
        self.inner.batch_value(x, batch).map(|v| self.factor * v)
    }

    fn batch_gradient(&self, x: &MatrixTuple, batch: &[usize]) -> Option<MatrixTuple> {
        self.inner
            .batch_gradient(x, batch)
            .map(|g| g.scaled(self.factor))
    }
}

pub(crate) fn validate_batch(batch: &[usize], n: usize) -> bool {
    !batch.is_empty() && batch.iter().all(|&i| i < n)
}
