use nalgebra::DMatrix;

use super::{validate_batch, Objective};
use crate::error::{invalid, Result};
use crate::rng;
use crate::types::{add_scaled, ensure_finite, MatrixTuple, MatrixVar};

/// `f(X) = (1/2N) Σ_i ⟨G_i, X − M⟩²` for sensing matrices `G_i`.
#[derive(Clone, Debug)]
pub struct MatrixSensing {
    shapes: Vec<(usize, usize)>,
    sensors: Vec<MatrixVar>,
    planted: MatrixTuple,
}

/// Gaussian sensing of a seeded rank-`planted_rank` matrix.
///
/// Sensing matrices have i.i.d. `N(0, 1)` entries; the planted matrix is
/// `P Q^T / sqrt(planted_rank)` with Gaussian `P`, `Q`.
pub fn matrix_sensing_objective(
    num_measurements: usize,
    shape: (usize, usize),
    planted_rank: usize,
    seed: u64,
) -> Result<MatrixSensing> {
    let (m, n) = shape;
    if num_measurements == 0 || m == 0 || n == 0 {
        return invalid("sensing needs positive measurement count and shape");
    }
    if planted_rank == 0 || planted_rank > m.min(n) {
        return invalid(format!(
            "planted rank must lie in 1..={}, got {planted_rank}",
            m.min(n)
        ));
    }
    let mut g = rng::seeded(seed);
    let p = rng::gaussian_matrix(&mut g, m, planted_rank);
    let q = rng::gaussian_matrix(&mut g, n, planted_rank);
    let planted = p * q.transpose() / (planted_rank as f64).sqrt();
    let sensors = (0..num_measurements)
        .map(|_| rng::gaussian_matrix(&mut g, m, n))
        .collect();
    MatrixSensing::from_parts(sensors, planted)
}

impl MatrixSensing {
    pub fn from_parts(sensors: Vec<MatrixVar>, planted: MatrixVar) -> Result<Self> {
        if sensors.is_empty() {
            return invalid("at least one sensing matrix is required");
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.shape() != planted.shape() {
                return invalid(format!("sensing matrix {i} has the wrong shape"));
            }
            ensure_finite(s, "sensing matrix")?;
        }
        let planted = MatrixTuple::single(planted)?;
        Ok(Self {
            shapes: planted.shapes(),
            sensors,
            planted,
        })
    }

    pub fn planted(&self) -> &MatrixVar {
        self.planted.layer(0)
    }

    pub fn sensors(&self) -> &[MatrixVar] {
        &self.sensors
    }

    fn residuals<'a>(&'a self, x: &'a MatrixVar) -> impl Iterator<Item = f64> + 'a {
        let diff = x - self.planted();
        self.sensors.iter().map(move |g| g.dot(&diff))
    }

    fn weighted_sum(&self, idx: impl Iterator<Item = (usize, f64)>) -> MatrixVar {
        let (m, n) = self.shapes[0];
        let mut out = DMatrix::zeros(m, n);
        for (i, w) in idx {
            add_scaled(&mut out, w, &self.sensors[i]);
        }
        out
    }
}

impl Objective for MatrixSensing {
    fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    fn value(&self, x: &MatrixTuple) -> f64 {
        let n = self.sensors.len() as f64;
        self.residuals(x.layer(0)).map(|r| r * r).sum::<f64>() / (2.0 * n)
    }

    fn gradient(&self, x: &MatrixTuple) -> MatrixTuple {
        let n = self.sensors.len() as f64;
        let res: Vec<f64> = self.residuals(x.layer(0)).collect();
        let g = self.weighted_sum(res.iter().enumerate().map(|(i, r)| (i, r / n)));
        MatrixTuple::from_layers_unchecked(vec![g])
    }

    fn hessian_cross(&self, _x: &MatrixTuple, d1: &MatrixTuple, d2: &MatrixTuple) -> f64 {
        let n = self.sensors.len() as f64;
        self.sensors
            .iter()
            .map(|g| g.dot(d1.layer(0)) * g.dot(d2.layer(0)))
            .sum::<f64>()
            / n
    }

    fn hessian_vector(&self, _x: &MatrixTuple, d: &MatrixTuple) -> MatrixTuple {
        let n = self.sensors.len() as f64;
        let g = self.weighted_sum(
            self.sensors
                .iter()
                .enumerate()
                .map(|(i, s)| (i, s.dot(d.layer(0)) / n)),
        );
        MatrixTuple::from_layers_unchecked(vec![g])
    }

    fn known_minimizer(&self) -> Option<&MatrixTuple> {
        Some(&self.planted)
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.sensors.len())
    }

    fn batch_value(&self, x: &MatrixTuple, batch: &[usize]) -> Option<f64> {
        if !validate_batch(batch, self.sensors.len()) {
            return None;
        }
        let diff = x.layer(0) - self.planted();
        let total: f64 = batch
            .iter()
            .map(|&i| self.sensors[i].dot(&diff).powi(2))
            .sum();
        Some(total / (2.0 * batch.len() as f64))
    }

    fn batch_gradient(&self, x: &MatrixTuple, batch: &[usize]) -> Option<MatrixTuple> {
        if !validate_batch(batch, self.sensors.len()) {
            return None;
        }
        let diff = x.layer(0) - self.planted();
        let b = batch.len() as f64;
        let g = self.weighted_sum(
            batch
                .iter()
                .map(|&i| (i, self.sensors[i].dot(&diff) / b)),
        );
        Some(MatrixTuple::from_layers_unchecked(vec![g]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_coordinate_sensor() {
        let mut e11 = DMatrix::zeros(2, 2);
        e11[(0, 0)] = 1.0;
        let f = MatrixSensing::from_parts(vec![e11.clone()], DMatrix::zeros(2, 2)).unwrap();
        let x = MatrixTuple::single(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -2.0, 5.0])).unwrap();
        assert!((f.value(&x) - 4.5).abs() < 1e-14);
        let g = f.gradient(&x);
        assert!((g.layer(0) - e11 * 3.0).norm() < 1e-14);
    }

    #[test]
    fn planted_point_is_stationary() {
        let f = matrix_sensing_objective(20, (3, 4), 2, 8).unwrap();
        let m = f.known_minimizer().unwrap().clone();
        assert!(f.value(&m).abs() < 1e-24);
        assert!(f.gradient(&m).frobenius_norm() < 1e-12);
    }

    #[test]
    fn batch_of_everything_matches_full() {
        let f = matrix_sensing_objective(6, (2, 3), 1, 3).unwrap();
        let x = MatrixTuple::single(DMatrix::from_fn(2, 3, |i, j| (i as f64) * 0.5 - j as f64)).unwrap();
        let all: Vec<usize> = (0..6).collect();
        assert!((f.batch_value(&x, &all).unwrap() - f.value(&x)).abs() < 1e-12);
        let diff = f.batch_gradient(&x, &all).unwrap().sub(&f.gradient(&x));
        assert!(diff.frobenius_norm() < 1e-12);
        assert!(f.batch_gradient(&x, &[7]).is_none());
    }

    #[test]
    fn rejects_bad_rank() {
        assert!(matrix_sensing_objective(3, (2, 3), 3, 0).is_err());
        assert!(matrix_sensing_objective(3, (2, 3), 0, 0).is_err());
    }
}
