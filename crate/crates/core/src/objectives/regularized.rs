use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{invalid, Result};
use crate::types::{add_scaled, FactorPair, FactorTuple, MatrixTuple};

/// Which regularized problem a [`RegularizedObjective`] stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizedForm {
    /// `f(X) + λ Σ_l ‖X_l‖_*`
    Nuclear,
    /// `g(A, B) = f(A B^T) + (λ/2) Σ_l (‖A_l‖_F² + ‖B_l‖_F²)`
    Factored,
}

/// A base objective with weight decay / nuclear-norm regularization.
///
/// Both forms share `base` and `lambda`; the helpers for either form are
/// always available so the two problems can be compared at matched points.
#[derive(Clone)]
pub struct RegularizedObjective {
    pub base: Arc<dyn Objective>,
    pub lambda: f64,
    pub form: RegularizedForm,
}

impl std::fmt::Debug for RegularizedObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegularizedObjective")
            .field("shapes", &self.base.shapes())
            .field("lambda", &self.lambda)
            .field("form", &self.form)
            .finish()
    }
}

impl RegularizedObjective {
    pub fn new(base: Arc<dyn Objective>, lambda: f64, form: RegularizedForm) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("lambda must be finite and >= 0, got {lambda}"));
        }
        Ok(Self { base, lambda, form })
    }

    pub fn nuclear(base: Arc<dyn Objective>, lambda: f64) -> Result<Self> {
        Self::new(base, lambda, RegularizedForm::Nuclear)
    }

    pub fn factored(base: Arc<dyn Objective>, lambda: f64) -> Result<Self> {
        Self::new(base, lambda, RegularizedForm::Factored)
    }

    /// Same base and `lambda` in the other form.
    pub fn with_form(&self, form: RegularizedForm) -> Self {
        Self {
            base: Arc::clone(&self.base),
            lambda: self.lambda,
            form,
        }
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        self.base.shapes()
    }

    /// `f(X) + λ ‖X‖_*`.
    pub fn full_value(&self, x: &MatrixTuple) -> f64 {
        self.base.value(x) + self.lambda * x.nuclear_norm()
    }

    /// `f(A B^T) + (λ/2)(‖A‖_F² + ‖B‖_F²)`.
    pub fn factored_value(&self, factors: &FactorTuple) -> f64 {
        self.base.value(&factors.product()) + 0.5 * self.lambda * factors.norm_squared()
    }

    /// Gradient of `g` in both factors, together with `∇f(A B^T)`.
    pub fn factored_gradient(&self, factors: &FactorTuple) -> (FactorTuple, MatrixTuple) {
        let grad_x = self.base.gradient(&factors.product());
        (self.factored_gradient_from(factors, &grad_x), grad_x)
    }

    /// `(G B + λ A, G^T A + λ B)` per layer for a given `G = ∇f`.
    pub fn factored_gradient_from(&self, factors: &FactorTuple, grad_x: &MatrixTuple) -> FactorTuple {
        let pairs = factors
            .pairs()
            .iter()
            .zip(grad_x.layers())
            .map(|(p, g)| {
                let mut ga = g * &p.b;
                add_scaled(&mut ga, self.lambda, &p.a);
                let mut gb = g.transpose() * &p.a;
                add_scaled(&mut gb, self.lambda, &p.b);
                FactorPair {
                    a: ga,
                    b: gb,
                    rank_budget: p.rank_budget,
                }
            })
            .collect();
        FactorTuple::from_pairs_unchecked(pairs)
    }

    /// `Σ_l A_l V_l^T + U_l B_l^T`: the product-space image of a factor direction.
    pub fn lift_direction(factors: &FactorTuple, dir: &FactorTuple) -> MatrixTuple {
        MatrixTuple::from_layers_unchecked(
            factors
                .pairs()
                .iter()
                .zip(dir.pairs())
                .map(|(p, d)| &p.a * d.b.transpose() + &d.a * p.b.transpose())
                .collect(),
        )
    }

    /// Bilinear Hessian form of `g` at `factors`:
    /// `∇²f[Δ₁, Δ₂] + ⟨∇f, U₁V₂^T + U₂V₁^T⟩ + λ(⟨U₁,U₂⟩ + ⟨V₁,V₂⟩)`
    /// with `Δ_i = A V_i^T + U_i B^T`.
    pub fn factored_hessian_cross(
        &self,
        factors: &FactorTuple,
        d1: &FactorTuple,
        d2: &FactorTuple,
    ) -> f64 {
        let x = factors.product();
        let grad = self.base.gradient(&x);
        let lift1 = Self::lift_direction(factors, d1);
        let lift2 = Self::lift_direction(factors, d2);
        let mut total = self.base.hessian_cross(&x, &lift1, &lift2) + self.lambda * d1.dot(d2);
        for ((g, p), q) in grad.layers().iter().zip(d1.pairs()).zip(d2.pairs()) {
            total += g.dot(&(&p.a * q.b.transpose())) + g.dot(&(&q.a * p.b.transpose()));
        }
        total
    }

    /// `∇²g[(U, V), (U, V)]`.
    pub fn factored_hessian_quadratic(&self, factors: &FactorTuple, dir: &FactorTuple) -> f64 {
        self.factored_hessian_cross(factors, dir, dir)
    }

    /// Hessian-vector product of `g` for precomputed `x = A B^T` and `∇f(x)`.
    pub fn factored_hvp_with(
        &self,
        factors: &FactorTuple,
        x: &MatrixTuple,
        grad_x: &MatrixTuple,
        dir: &FactorTuple,
    ) -> FactorTuple {
        let h = self
            .base
            .hessian_vector(x, &Self::lift_direction(factors, dir));
        let pairs = factors
            .pairs()
            .iter()
            .zip(dir.pairs())
            .zip(h.layers().iter().zip(grad_x.layers()))
            .map(|((p, d), (hl, g))| {
                let mut a = hl * &p.b + g * &d.b;
                add_scaled(&mut a, self.lambda, &d.a);
                let mut b = hl.transpose() * &p.a + g.transpose() * &d.a;
                add_scaled(&mut b, self.lambda, &d.b);
                FactorPair {
                    a,
                    b,
                    rank_budget: p.rank_budget,
                }
            })
            .collect();
        FactorTuple::from_pairs_unchecked(pairs)
    }

    pub fn factored_hvp(&self, factors: &FactorTuple, dir: &FactorTuple) -> FactorTuple {
        let x = factors.product();
        let grad = self.base.gradient(&x);
        self.factored_hvp_with(factors, &x, &grad, dir)
    }

    /// `‖∇f(0)‖_F`, the scale used by the default stationarity tolerance.
    pub fn gradient_norm_at_zero(&self) -> f64 {
        self.base
            .gradient(&MatrixTuple::zeros(self.base.shapes()))
            .frobenius_norm()
    }
}
