use super::Objective;
use crate::error::{invalid, Result};
use crate::rng;
use crate::types::MatrixTuple;

/// Worst relative disagreement between analytic and finite-difference derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeCheck {
    /// `max |⟨∇f, Δ⟩ − (f(X+hΔ) − f(X−hΔ))/2h| / (1 + |⟨∇f, Δ⟩|)`
    pub grad_err: f64,
    /// Worst of the second-difference check of `hessian_quadratic` and the
    /// agreement `⟨hessian_vector(Δ), Δ⟩ = hessian_quadratic(Δ)`.
    pub hess_err: f64,
}

/// Probes `probes` seeded unit-Frobenius directions at `point`.
pub fn derivative_check(
    obj: &dyn Objective,
    point: &MatrixTuple,
    step: f64,
    probes: usize,
    seed: u64,
) -> Result<DerivativeCheck> {
    if !(step > 0.0) || !step.is_finite() {
        return invalid(format!("finite-difference step must be > 0, got {step}"));
    }
    point.ensure_shapes(obj.shapes(), "derivative_check point")?;
    let grad = obj.gradient(point);
    let f0 = obj.value(point);
    let mut g = rng::seeded(seed);
    let mut out = DerivativeCheck {
        grad_err: 0.0,
        hess_err: 0.0,
    };
    for _ in 0..probes {
        let dir = unit_direction(&mut g, obj.shapes());
        let mut plus = point.clone();
        plus.axpy(step, &dir);
        let mut minus = point.clone();
        minus.axpy(-step, &dir);
        let (fp, fm) = (obj.value(&plus), obj.value(&minus));

        let analytic = grad.dot(&dir);
        let central = (fp - fm) / (2.0 * step);
        out.grad_err = out.grad_err.max((analytic - central).abs() / (1.0 + analytic.abs()));

        let quad = obj.hessian_quadratic(point, &dir);
        let second = (fp - 2.0 * f0 + fm) / (step * step);
        let via_hvp = obj.hessian_vector(point, &dir).dot(&dir);
        let err = ((quad - second).abs()).max((quad - via_hvp).abs()) / (1.0 + quad.abs());
        out.hess_err = out.hess_err.max(err);
    }
    Ok(out)
}

fn unit_direction(g: &mut rng::Rng, shapes: &[(usize, usize)]) -> MatrixTuple {
    let layers = shapes
        .iter()
        .map(|&(m, n)| rng::gaussian_matrix(g, m, n))
        .collect();
    let d = MatrixTuple::from_layers_unchecked(layers);
    let norm = d.frobenius_norm();
    d.scaled(1.0 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::quadratic_objective;
    use nalgebra::DMatrix;

    struct Constant;

    impl Objective for Constant {
        fn shapes(&self) -> &[(usize, usize)] {
            &[(2, 2)]
        }
        fn value(&self, _x: &MatrixTuple) -> f64 {
            3.25
        }
        fn gradient(&self, _x: &MatrixTuple) -> MatrixTuple {
            MatrixTuple::zeros(&[(2, 2)])
        }
        fn hessian_cross(&self, _x: &MatrixTuple, _a: &MatrixTuple, _b: &MatrixTuple) -> f64 {
            0.0
        }
        fn hessian_vector(&self, _x: &MatrixTuple, _d: &MatrixTuple) -> MatrixTuple {
            MatrixTuple::zeros(&[(2, 2)])
        }
    }

    #[test]
    fn constant_function_is_exact() {
        let p = MatrixTuple::single(DMatrix::from_element(2, 2, 0.7)).unwrap();
        let c = derivative_check(&Constant, &p, 1e-3, 5, 1).unwrap();
        assert_eq!(c.grad_err, 0.0);
        assert_eq!(c.hess_err, 0.0);
    }

    #[test]
    fn quadratic_is_exact_to_rounding() {
        let target = MatrixTuple::single(DMatrix::from_fn(3, 2, |i, j| i as f64 - j as f64)).unwrap();
        let f = quadratic_objective(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], target, 4).unwrap();
        let p = MatrixTuple::single(DMatrix::from_element(3, 2, 0.3)).unwrap();
        let c = derivative_check(&f, &p, 1e-3, 10, 2).unwrap();
        assert!(c.grad_err <= 1e-9, "{c:?}");
        assert!(c.hess_err <= 1e-6, "{c:?}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = MatrixTuple::zeros(&[(2, 2)]);
        assert!(derivative_check(&Constant, &p, 0.0, 1, 0).is_err());
    }
}
