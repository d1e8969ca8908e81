use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{validate_batch, Objective};
use crate::error::{invalid, Result};
use crate::rng;
use crate::types::MatrixTuple;

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: DVector<f64>,
    pub target: DVector<f64>,
}

/// Which weight matrix of the two-layer network receives the additive update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TunedLayer {
    /// `W1` (hidden × input), inside the nonlinearity.
    Hidden,
    /// `W2` (output × hidden); the loss is then quadratic in the update.
    Output,
}

impl TunedLayer {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Self::Hidden),
            1 => Ok(Self::Output),
            _ => invalid(format!("tuned layer must be 0 or 1, got {i}")),
        }
    }
}

/// Squared-loss risk of `x ↦ W2 tanh(W1 x)` as a function of an additive
/// update to one of the frozen weight matrices.
///
/// The loss is `(1/2N) Σ ‖W2 tanh(W1 x_i) − y_i‖²`; derivatives are exact.
#[derive(Clone, Debug)]
pub struct Mlp {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    tuned: TunedLayer,
    data: Vec<Sample>,
    shapes: Vec<(usize, usize)>,
}

/// Two-layer tanh network with frozen weights drawn from `seed`.
///
/// `W1` has `N(0, 1/d_in)` entries and `W2` has `N(0, 1/d_hidden)` entries.
pub fn mlp_objective(
    widths: (usize, usize, usize),
    dataset: Vec<Sample>,
    tuned_layer: TunedLayer,
    seed: u64,
) -> Result<Mlp> {
    let (d_in, d_hidden, d_out) = widths;
    if d_in == 0 || d_hidden == 0 || d_out == 0 {
        return invalid("network widths must be positive");
    }
    let mut g = rng::seeded(seed);
    let w1 = rng::gaussian_matrix(&mut g, d_hidden, d_in) / (d_in as f64).sqrt();
    let w2 = rng::gaussian_matrix(&mut g, d_out, d_hidden) / (d_hidden as f64).sqrt();
    Mlp::from_weights(w1, w2, dataset, tuned_layer)
}

impl Mlp {
    pub fn from_weights(
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        dataset: Vec<Sample>,
        tuned: TunedLayer,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return invalid("dataset is empty");
        }
        if w2.ncols() != w1.nrows() {
            return invalid("W2 columns must equal W1 rows");
        }
        for (i, s) in dataset.iter().enumerate() {
            if s.input.len() != w1.ncols() || s.target.len() != w2.nrows() {
                return invalid(format!("sample {i} does not match the network widths"));
            }
            if !s.input.iter().chain(s.target.iter()).all(|v| v.is_finite()) {
                return invalid(format!("sample {i} has non-finite entries"));
            }
        }
        let shapes = vec![match tuned {
            TunedLayer::Hidden => w1.shape(),
            TunedLayer::Output => w2.shape(),
        }];
        Ok(Self {
            w1,
            w2,
            tuned,
            data: dataset,
            shapes,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.data
    }

    pub fn tuned_layer(&self) -> TunedLayer {
        self.tuned
    }

    /// Outputs of the frozen network (zero update) on `inputs`.
    pub fn frozen_outputs(&self, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        inputs
            .iter()
            .map(|x| &self.w2 * (&self.w1 * x).map(f64::tanh))
            .collect()
    }

    fn weights(&self, x: &MatrixTuple) -> (DMatrix<f64>, DMatrix<f64>) {
        match self.tuned {
            TunedLayer::Hidden => (&self.w1 + x.layer(0), self.w2.clone()),
            TunedLayer::Output => (self.w1.clone(), &self.w2 + x.layer(0)),
        }
    }

    fn loss_over(&self, x: &MatrixTuple, idx: impl Iterator<Item = usize>, count: usize) -> f64 {
        let (w1, w2) = self.weights(x);
        let total: f64 = idx
            .map(|i| {
                let s = &self.data[i];
                let h = (&w1 * &s.input).map(f64::tanh);
                (&w2 * h - &s.target).norm_squared()
            })
            .sum();
        total / (2.0 * count as f64)
    }

    fn grad_over(&self, x: &MatrixTuple, idx: impl Iterator<Item = usize>, count: usize) -> MatrixTuple {
        let (w1, w2) = self.weights(x);
        let (rows, cols) = self.shapes[0];
        let mut g = DMatrix::zeros(rows, cols);
        for i in idx {
            let s = &self.data[i];
            let h = (&w1 * &s.input).map(f64::tanh);
            let r = &w2 * &h - &s.target;
            match self.tuned {
                TunedLayer::Hidden => {
                    let delta = (w2.transpose() * &r).component_mul(&h.map(|v| 1.0 - v * v));
                    g.ger(1.0, &delta, &s.input, 1.0);
                }
                TunedLayer::Output => g.ger(1.0, &r, &h, 1.0),
            }
        }
        MatrixTuple::from_layers_unchecked(vec![g / count as f64])
    }
}

impl Objective for Mlp {
    fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    fn value(&self, x: &MatrixTuple) -> f64 {
        self.loss_over(x, 0..self.data.len(), self.data.len())
    }

    fn gradient(&self, x: &MatrixTuple) -> MatrixTuple {
        self.grad_over(x, 0..self.data.len(), self.data.len())
    }

    fn hessian_cross(&self, x: &MatrixTuple, d1: &MatrixTuple, d2: &MatrixTuple) -> f64 {
        let (w1, w2) = self.weights(x);
        let (e1, e2) = (d1.layer(0), d2.layer(0));
        let mut total = 0.0;
        for s in &self.data {
            let h = (&w1 * &s.input).map(f64::tanh);
            match self.tuned {
                TunedLayer::Hidden => {
                    let slope = h.map(|v| 1.0 - v * v);
                    let curv = h.zip_map(&slope, |v, d| -2.0 * v * d);
                    let z1 = e1 * &s.input;
                    let z2 = e2 * &s.input;
                    let back = w2.transpose() * (&w2 * &h - &s.target);
                    let j1 = &w2 * z1.component_mul(&slope);
                    let j2 = &w2 * z2.component_mul(&slope);
                    total += j1.dot(&j2) + back.component_mul(&curv).dot(&z1.component_mul(&z2));
                }
                TunedLayer::Output => total += (e1 * &h).dot(&(e2 * &h)),
            }
        }
        total / self.data.len() as f64
    }

    fn hessian_vector(&self, x: &MatrixTuple, d: &MatrixTuple) -> MatrixTuple {
        let (w1, w2) = self.weights(x);
        let e = d.layer(0);
        let (rows, cols) = self.shapes[0];
        let mut out = DMatrix::zeros(rows, cols);
        let gram = w2.transpose() * &w2;
        for s in &self.data {
            let h = (&w1 * &s.input).map(f64::tanh);
            match self.tuned {
                TunedLayer::Hidden => {
                    let slope = h.map(|v| 1.0 - v * v);
                    let curv = h.zip_map(&slope, |v, d| -2.0 * v * d);
                    let z = e * &s.input;
                    let back = w2.transpose() * (&w2 * &h - &s.target);
                    let v = (&gram * z.component_mul(&slope)).component_mul(&slope)
                        + back.component_mul(&curv).component_mul(&z);
                    out.ger(1.0, &v, &s.input, 1.0);
                }
                TunedLayer::Output => out.ger(1.0, &(e * &h), &h, 1.0),
            }
        }
        MatrixTuple::from_layers_unchecked(vec![out / self.data.len() as f64])
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn batch_value(&self, x: &MatrixTuple, batch: &[usize]) -> Option<f64> {
        validate_batch(batch, self.data.len())
            .then(|| self.loss_over(x, batch.iter().copied(), batch.len()))
    }

    fn batch_gradient(&self, x: &MatrixTuple, batch: &[usize]) -> Option<MatrixTuple> {
        validate_batch(batch, self.data.len())
            .then(|| self.grad_over(x, batch.iter().copied(), batch.len()))
    }
}

/// Gaussian inputs with `N(0, 1)` entries and independent `N(0, 1)` targets.
pub fn synthetic_dataset(n: usize, d_in: usize, d_out: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 || d_in == 0 || d_out == 0 {
        return invalid("dataset size and widths must be positive");
    }
    let mut g = rng::seeded(seed);
    Ok((0..n)
        .map(|_| Sample {
            input: rng::gaussian_matrix(&mut g, d_in, 1).column(0).into_owned(),
            target: rng::gaussian_matrix(&mut g, d_out, 1).column(0).into_owned(),
        })
        .collect())
}

/// Reads samples from a CSV file with header columns `x_0..x_{d_in-1}` and
/// `y_0..y_{d_out-1}` (any order, extra columns ignored).
pub fn load_dataset_csv(path: &Path, d_in: usize, d_out: usize) -> Result<Vec<Sample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| crate::Error::InvalidInput(format!("dataset is missing column {name}")))
    };
    let x_cols = (0..d_in).map(|i| find(format!("x_{i}"))).collect::<Result<Vec<_>>>()?;
    let y_cols = (0..d_out).map(|i| find(format!("y_{i}"))).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| {
                crate::Error::InvalidInput(format!("row {row}: cannot parse {raw:?} as a number"))
            })
        };
        let input = x_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        let target = y_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        out.push(Sample {
            input: DVector::from_vec(input),
            target: DVector::from_vec(target),
        });
    }
    if out.is_empty() {
        return invalid("dataset is empty");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(tuned: TunedLayer) -> Mlp {
        let mut g = rng::seeded(1);
        let data = (0..4)
            .map(|_| Sample {
                input: DVector::from_iterator(3, rng::gaussian_matrix(&mut g, 3, 1).iter().copied()),
                target: DVector::from_iterator(2, rng::gaussian_matrix(&mut g, 2, 1).iter().copied()),
            })
            .collect();
        mlp_objective((3, 5, 2), data, tuned, 7).unwrap()
    }

    #[test]
    fn zero_update_is_pretrained_loss() {
        let f = toy(TunedLayer::Hidden);
        let inputs: Vec<_> = f.samples().iter().map(|s| s.input.clone()).collect();
        let outs = f.frozen_outputs(&inputs);
        let expected: f64 = outs
            .iter()
            .zip(f.samples())
            .map(|(o, s)| (o - &s.target).norm_squared())
            .sum::<f64>()
            / 8.0;
        let zero = MatrixTuple::zeros(f.shapes());
        assert!((f.value(&zero) - expected).abs() < 1e-14);
    }

    #[test]
    fn realizable_data_has_zero_loss_at_zero() {
        let f = toy(TunedLayer::Output);
        let inputs: Vec<_> = f.samples().iter().map(|s| s.input.clone()).collect();
        let data = inputs
            .iter()
            .cloned()
            .zip(f.frozen_outputs(&inputs))
            .map(|(input, target)| Sample { input, target })
            .collect();
        let g = mlp_objective((3, 5, 2), data, TunedLayer::Output, 7).unwrap();
        let zero = MatrixTuple::zeros(g.shapes());
        assert!(g.value(&zero) < 1e-28);
        assert!(g.gradient(&zero).frobenius_norm() < 1e-14);
    }

    #[test]
    fn rejects_empty_dataset_and_bad_layer() {
        assert!(mlp_objective((2, 2, 2), vec![], TunedLayer::Hidden, 0).is_err());
        assert!(TunedLayer::from_index(2).is_err());
    }

    #[test]
    fn per_sample_gradient_has_rank_one() {
        for tuned in [TunedLayer::Hidden, TunedLayer::Output] {
            let f = toy(tuned);
            let x = MatrixTuple::single(DMatrix::from_fn(f.shapes()[0].0, f.shapes()[0].1, |i, j| {
                0.1 * (i as f64) - 0.05 * (j as f64)
            }))
            .unwrap();
            let g = f.batch_gradient(&x, &[2]).unwrap();
            assert_eq!(crate::matcore::truncated_rank(g.layer(0), 1e-10).unwrap(), 1);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "y_0,x_1,x_0\n1.5,2,3\n-1,0.5,0.25\n").unwrap();
        let data = load_dataset_csv(&path, 2, 1).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].input.as_slice(), &[3.0, 2.0]);
        assert_eq!(data[1].target.as_slice(), &[-1.0]);
        std::fs::write(&path, "x_0\n1\n").unwrap();
        assert!(load_dataset_csv(&path, 1, 1).is_err());
    }
}
