use nalgebra::{DMatrix, DVector};

use super::Objective;
use crate::error::{invalid, Result};
use crate::rng;
use crate::types::MatrixTuple;

/// Eigenbasis of the Hessian of a [`QuadraticObjective`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    /// `Q = I`: the spectrum is assigned entrywise in column-major order.
    Identity,
    /// Haar-distributed orthogonal `Q` drawn from the seed.
    Seeded(u64),
}

/// `f(X) = ½ ⟨vec(X − T), H vec(X − T)⟩` with a dense symmetric positive
/// definite `H`.
///
/// `vec` stacks the column-major entries of all layers. Restricted strong
/// convexity and smoothness constants of this family lie between the extreme
/// eigenvalues of `H`.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    shapes: Vec<(usize, usize)>,
    hessian: DMatrix<f64>,
    target: MatrixTuple,
    spectrum_min: f64,
    spectrum_max: f64,
}

/// Quadratic with Hessian `Q diag(spectrum) Q^T`, seeded orthogonal `Q`.
pub fn quadratic_objective(
    spectrum: &[f64],
    target: MatrixTuple,
    seed: u64,
) -> Result<QuadraticObjective> {
    QuadraticObjective::with_basis(spectrum, target, Basis::Seeded(seed))
}

impl QuadraticObjective {
    pub fn with_basis(spectrum: &[f64], target: MatrixTuple, basis: Basis) -> Result<Self> {
        let p = target.num_entries();
        if spectrum.len() != p {
            return invalid(format!(
                "spectrum has {} values but the target has {p} entries",
                spectrum.len()
            ));
        }
        if spectrum.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return invalid("spectrum values must be finite and > 0");
        }
        let diag = DVector::from_column_slice(spectrum);
        let hessian = match basis {
            Basis::Identity => DMatrix::from_diagonal(&diag),
            Basis::Seeded(seed) => {
                let q = rng::orthonormal_columns(&mut rng::seeded(seed), p, p);
                let mut qd = q.clone();
                for (j, s) in spectrum.iter().enumerate() {
                    qd.column_mut(j).scale_mut(*s);
                }
                let h = qd * q.transpose();
                (&h + h.transpose()) * 0.5
            }
        };
        let spectrum_min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
        let spectrum_max = spectrum.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            shapes: target.shapes(),
            hessian,
            target,
            spectrum_min,
            spectrum_max,
        })
    }

    /// Quadratic with an explicit symmetric positive definite Hessian.
    pub fn from_hessian(hessian: DMatrix<f64>, target: MatrixTuple) -> Result<Self> {
        let p = target.num_entries();
        if hessian.shape() != (p, p) {
            return invalid(format!("Hessian must be {p} x {p}"));
        }
        if (&hessian - hessian.transpose()).norm() > 1e-12 * (1.0 + hessian.norm()) {
            return invalid("Hessian must be symmetric");
        }
        let eig = hessian.clone().symmetric_eigen();
        let spectrum_min = eig.eigenvalues.min();
        let spectrum_max = eig.eigenvalues.max();
        if !(spectrum_min > 0.0) {
            return invalid("Hessian must be positive definite");
        }
        Ok(Self {
            shapes: target.shapes(),
            hessian,
            target,
            spectrum_min,
            spectrum_max,
        })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn target(&self) -> &MatrixTuple {
        &self.target
    }

    /// Smallest and largest Hessian eigenvalues.
    pub fn spectrum_bounds(&self) -> (f64, f64) {
        (self.spectrum_min, self.spectrum_max)
    }

    fn apply(&self, v: &DVector<f64>) -> MatrixTuple {
        let hv = &self.hessian * v;
        MatrixTuple::from_layers_unchecked(split(&self.shapes, &hv))
    }
}

fn split(shapes: &[(usize, usize)], v: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(m, n)| {
            let block = DMatrix::from_column_slice(m, n, &v.as_slice()[offset..offset + m * n]);
            offset += m * n;
            block
        })
        .collect()
}

impl Objective for QuadraticObjective {
    fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    fn value(&self, x: &MatrixTuple) -> f64 {
        let e = x.sub(&self.target).to_vector();
        0.5 * e.dot(&(&self.hessian * &e))
    }

    fn gradient(&self, x: &MatrixTuple) -> MatrixTuple {
        self.apply(&x.sub(&self.target).to_vector())
    }

    fn hessian_cross(&self, _x: &MatrixTuple, d1: &MatrixTuple, d2: &MatrixTuple) -> f64 {
        let v1 = d1.to_vector();
        let v2 = d2.to_vector();
        v1.dot(&(&self.hessian * &v2))
    }

    fn hessian_vector(&self, _x: &MatrixTuple, d: &MatrixTuple) -> MatrixTuple {
        self.apply(&d.to_vector())
    }

    fn known_minimizer(&self) -> Option<&MatrixTuple> {
        Some(&self.target)
    }
}
