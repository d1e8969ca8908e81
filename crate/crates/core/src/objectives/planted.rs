use nalgebra::{DMatrix, DVector};

use super::QuadraticObjective;
use crate::error::Result;
use crate::types::MatrixTuple;

/// An ill-conditioned 3×3 quadratic with a known global minimizer of the
/// nuclear-regularized problem and a known spurious second-order stationary
/// point of the rank-2 factored problem.
///
/// The target is `diag(0.8, 0, 0)`. The Hessian couples the three diagonal
/// entries through
///
/// ```text
/// [5.0 1.0 1.0]
/// [1.0 0.3 0.2]
/// [1.0 0.2 0.3]
/// ```
///
/// and penalizes the entries `(1,2), (2,1), (1,3), (3,1)` with curvature 10
/// and `(2,3), (3,2)` with curvature 1. With `λ = 0.05` the regularized
/// minimizer is `diag(0.79, 0, 0)`, while `diag(0, 1.5, 1.5)` is stationary
/// for the factored problem: its gradient `diag(−1, −0.05, −0.05)` pulls on
/// the first diagonal entry, which a rank-2 factorization already spending
/// both columns cannot follow.
#[derive(Clone, Debug)]
pub struct PlantedInstance {
    pub objective: QuadraticObjective,
    pub lambda: f64,
    pub rank: usize,
    pub rank_star: usize,
    pub global: MatrixTuple,
    pub spurious: MatrixTuple,
}

pub fn planted_spurious_quadratic() -> Result<PlantedInstance> {
    let idx = |i: usize, j: usize| i + 3 * j;
    let mut h = DMatrix::zeros(9, 9);
    let diag_block = [[5.0, 1.0, 1.0], [1.0, 0.3, 0.2], [1.0, 0.2, 0.3]];
    for a in 0..3 {
        for b in 0..3 {
            h[(idx(a, a), idx(b, b))] = diag_block[a][b];
        }
    }
    for (i, j) in [(0, 1), (1, 0), (0, 2), (2, 0)] {
        h[(idx(i, j), idx(i, j))] = 10.0;
    }
    for (i, j) in [(1, 2), (2, 1)] {
        h[(idx(i, j), idx(i, j))] = 1.0;
    }
    let diag = |v: [f64; 3]| DMatrix::from_diagonal(&DVector::from_column_slice(&v));
    let target = MatrixTuple::single(diag([0.8, 0.0, 0.0]))?;
    let objective = QuadraticObjective::from_hessian(h, target)?;
    Ok(PlantedInstance {
        objective,
        lambda: 0.05,
        rank: 2,
        rank_star: 1,
        global: MatrixTuple::single(diag([0.79, 0.0, 0.0]))?,
        spurious: MatrixTuple::single(diag([0.0, 1.5, 1.5]))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::nuclear_subgradient_residual;
    use crate::objectives::Objective;

    #[test]
    fn global_point_satisfies_optimality() {
        let p = planted_spurious_quadratic().unwrap();
        let g = p.objective.gradient(&p.global);
        let r = nuclear_subgradient_residual(p.global.layer(0), &(-g.layer(0)), p.lambda).unwrap();
        assert!(r < 1e-12, "{r}");
    }

    #[test]
    fn spurious_point_has_expected_gradient_and_values() {
        let p = planted_spurious_quadratic().unwrap();
        let g = p.objective.gradient(&p.spurious);
        let want = DMatrix::from_diagonal(&DVector::from_column_slice(&[-1.0, -0.05, -0.05]));
        assert!((g.layer(0) - want).norm() < 1e-12);
        let full = |x: &MatrixTuple| p.objective.value(x) + p.lambda * x.nuclear_norm();
        assert!((full(&p.global) - 0.03975).abs() < 1e-12);
        assert!((full(&p.spurious) - 0.475).abs() < 1e-12);
        let (lo, hi) = p.objective.spectrum_bounds();
        assert!(hi / lo >= 100.0, "{lo} {hi}");
    }
}
