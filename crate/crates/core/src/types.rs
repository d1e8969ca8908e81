//! Matrix containers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// A dense real matrix. Entry points that accept one reject non-finite entries.
pub type MatrixVar = DMatrix<f64>;

pub(crate) fn ensure_finite(m: &MatrixVar, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} has non-finite entries"))
    }
}

/// `y += alpha * x` entrywise.
pub(crate) fn add_scaled(y: &mut MatrixVar, alpha: f64, x: &MatrixVar) {
    debug_assert_eq!(y.shape(), x.shape());
    y.zip_apply(x, |a, b| *a += alpha * b);
}

pub(crate) fn ensure_same_shape(a: &MatrixVar, b: &MatrixVar, what: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        invalid(format!(
            "{what}: shape {:?} does not match {:?}",
            a.shape(),
            b.shape()
        ))
    }
}

/// Ordered tuple of matrices, one per tuned layer.
///
/// The Frobenius norm of a tuple is the root-sum-of-squares of the layer
/// norms; the nuclear norm is the plain sum.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixTuple {
    layers: Vec<MatrixVar>,
}

impl MatrixTuple {
    pub fn new(layers: Vec<MatrixVar>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("a matrix tuple needs at least one layer");
        }
        for (l, m) in layers.iter().enumerate() {
            if m.nrows() == 0 || m.ncols() == 0 {
                return invalid(format!("layer {l} has an empty dimension"));
            }
            ensure_finite(m, &format!("layer {l}"))?;
        }
        Ok(Self { layers })
    }

    pub fn single(m: MatrixVar) -> Result<Self> {
        Self::new(vec![m])
    }

    /// Builds a tuple without validation; iterates of diverging solvers may
    /// legitimately hold non-finite entries.
    pub(crate) fn from_layers_unchecked(layers: Vec<MatrixVar>) -> Self {
        debug_assert!(!layers.is_empty());
        Self { layers }
    }

    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(m, n)| DMatrix::zeros(m, n)).collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|m| m.shape()).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[MatrixVar] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [MatrixVar] {
        &mut self.layers
    }

    pub fn layer(&self, l: usize) -> &MatrixVar {
        &self.layers[l]
    }

    pub fn into_layers(self) -> Vec<MatrixVar> {
        self.layers
    }

    pub fn num_entries(&self) -> usize {
        self.layers.iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub(crate) fn ensure_shapes(&self, shapes: &[(usize, usize)], what: &str) -> Result<()> {
        if self.shapes() == shapes {
            Ok(())
        } else {
            invalid(format!(
                "{what}: shapes {:?} do not match {:?}",
                self.shapes(),
                shapes
            ))
        }
    }

    /// Root-sum-of-squares Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|m| m.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Sum of per-layer nuclear norms.
    pub fn nuclear_norm(&self) -> f64 {
        self.layers.iter().map(crate::matcore::nuclear_norm).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        debug_assert!(self.same_shape(x));
        for (a, b) in self.layers.iter_mut().zip(&x.layers) {
            add_scaled(a, alpha, b);
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            layers: self.layers.iter().map(|m| m * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Column-major entries of every layer, concatenated.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.num_entries());
        for m in &self.layers {
            v.extend_from_slice(m.as_slice());
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`MatrixTuple::to_vector`].
    pub fn from_vector(shapes: &[(usize, usize)], v: &[f64]) -> Result<Self> {
        let total: usize = shapes.iter().map(|(m, n)| m * n).sum();
        if total != v.len() {
            return invalid(format!(
                "vector of length {} does not fill shapes {:?}",
                v.len(),
                shapes
            ));
        }
        let mut offset = 0;
        let layers = shapes
            .iter()
            .map(|&(m, n)| {
                let block = DMatrix::from_column_slice(m, n, &v[offset..offset + m * n]);
                offset += m * n;
                block
            })
            .collect();
        Self::new(layers)
    }
}

/// Compact SVD `L diag(s) R^T` keeping only strictly positive singular values.
#[derive(Clone, Debug)]
pub struct CompactSvd {
    pub left: MatrixVar,
    pub singulars: Vec<f64>,
    pub right: MatrixVar,
}

impl CompactSvd {
    pub fn rank(&self) -> usize {
        self.singulars.len()
    }

    pub fn reconstruct(&self) -> MatrixVar {
        let mut scaled = self.left.clone();
        for (j, s) in self.singulars.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    /// `L R^T`, the unit-singular-value part.
    pub fn polar(&self) -> MatrixVar {
        &self.left * self.right.transpose()
    }
}

/// LoRA factors of one layer: `X = A B^T` with `A: m x r`, `B: n x r`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair {
    pub a: MatrixVar,
    pub b: MatrixVar,
    pub rank_budget: usize,
}

impl FactorPair {
    pub fn new(a: MatrixVar, b: MatrixVar) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return invalid(format!(
                "factor widths differ: A has {} columns, B has {}",
                a.ncols(),
                b.ncols()
            ));
        }
        if a.ncols() == 0 || a.nrows() == 0 || b.nrows() == 0 {
            return invalid("factors need positive dimensions");
        }
        ensure_finite(&a, "factor A")?;
        ensure_finite(&b, "factor B")?;
        let rank_budget = a.ncols();
        Ok(Self { a, b, rank_budget })
    }

    pub fn zeros(m: usize, n: usize, r: usize) -> Self {
        Self {
            a: DMatrix::zeros(m, r),
            b: DMatrix::zeros(n, r),
            rank_budget: r,
        }
    }

    pub fn product(&self) -> MatrixVar {
        &self.a * self.b.transpose()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.nrows())
    }

    /// `‖A^T A − B^T B‖_F`.
    pub fn balance_residual(&self) -> f64 {
        (self.a.transpose() * &self.a - self.b.transpose() * &self.b).norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.a.norm_squared() + self.b.norm_squared()
    }
}

/// One [`FactorPair`] per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTuple {
    pairs: Vec<FactorPair>,
}

impl FactorTuple {
    pub fn new(pairs: Vec<FactorPair>) -> Result<Self> {
        if pairs.is_empty() {
            return invalid("a factor tuple needs at least one layer");
        }
        Ok(Self { pairs })
    }

    pub(crate) fn from_pairs_unchecked(pairs: Vec<FactorPair>) -> Self {
        Self { pairs }
    }

    pub fn zeros(shapes: &[(usize, usize)], r: usize) -> Self {
        Self {
            pairs: shapes
                .iter()
                .map(|&(m, n)| FactorPair::zeros(m, n, r))
                .collect(),
        }
    }

    pub fn pairs(&self) -> &[FactorPair] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [FactorPair] {
        &mut self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(FactorPair::shape).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.rank_budget).collect()
    }

    pub fn product(&self) -> MatrixTuple {
        MatrixTuple::from_layers_unchecked(self.pairs.iter().map(FactorPair::product).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.a.iter().chain(p.b.iter()).all(|v| v.is_finite()))
    }

    /// `Σ_l ‖A_l‖_F² + ‖B_l‖_F²`.
    pub fn norm_squared(&self) -> f64 {
        self.pairs.iter().map(FactorPair::norm_squared).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.pairs
            .iter()
            .zip(&other.pairs)
            .map(|(p, q)| p.a.dot(&q.a) + p.b.dot(&q.b))
            .sum()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        for (p, q) in self.pairs.iter_mut().zip(&x.pairs) {
            add_scaled(&mut p.a, alpha, &q.a);
            add_scaled(&mut p.b, alpha, &q.b);
        }
    }

    pub fn num_entries(&self) -> usize {
        self.pairs.iter().map(|p| p.a.len() + p.b.len()).sum()
    }

    /// Entries of `A_1, B_1, A_2, B_2, …` in column-major order.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.num_entries());
        for p in &self.pairs {
            v.extend_from_slice(p.a.as_slice());
            v.extend_from_slice(p.b.as_slice());
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`FactorTuple::to_vector`] using `self` as the layout template.
    pub fn like_from_slice(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.num_entries(), "vector does not fit the factor layout");
        let mut offset = 0;
        let mut take = |rows: usize, cols: usize| {
            let block = DMatrix::from_column_slice(rows, cols, &v[offset..offset + rows * cols]);
            offset += rows * cols;
            block
        };
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                let a = take(p.a.nrows(), p.rank_budget);
                let b = take(p.b.nrows(), p.rank_budget);
                FactorPair {
                    a,
                    b,
                    rank_budget: p.rank_budget,
                }
            })
            .collect();
        Self { pairs }
    }

    /// `Σ_l ‖A_l^T A_l − B_l^T B_l‖_F`.
    pub fn balance_residual(&self) -> f64 {
        self.pairs.iter().map(FactorPair::balance_residual).sum()
    }
}
