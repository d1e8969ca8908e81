//! SVD-based kernels: compact SVD, rank detection and projection, singular
//! value thresholding, nuclear-norm subgradient membership and balanced
//! factorizations.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::types::{ensure_finite, ensure_same_shape, CompactSvd, FactorPair, MatrixVar};

/// Absolute singular value floor used by exact-rank checks.
pub const EXACT_RANK_FLOOR: f64 = 1e-12;

/// Relative threshold used when reporting the rank of a trained matrix.
pub const REPORT_RANK_THRESHOLD: f64 = 1e-4;

/// Compact SVD keeping the triplets with `σ > sv_floor`, sorted nonincreasing.
///
/// Singular vectors come from faer: nalgebra's bidiagonal SVD returns wrong
/// vectors for tiny singular values next to exact zeros.
pub fn compact_svd(m: &MatrixVar, sv_floor: f64) -> Result<CompactSvd> {
    ensure_finite(m, "matrix")?;
    if !(sv_floor >= 0.0) {
        return invalid(format!("singular value floor must be >= 0, got {sv_floor}"));
    }
    let (rows, cols) = m.shape();
    if m.iter().all(|v| *v == 0.0) {
        return Ok(CompactSvd {
            left: DMatrix::zeros(rows, 0),
            singulars: Vec::new(),
            right: DMatrix::zeros(cols, 0),
        });
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|_| Error::Numerical {
        what: "svd",
        iterations: 0,
    })?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let s: Vec<f64> = (0..rows.min(cols)).map(|k| s[k]).collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| s[i] > sv_floor && s[i] > 0.0)
        .collect();
    let k = keep.len();
    let left = DMatrix::from_fn(rows, k, |i, j| u[(i, keep[j])]);
    let right = DMatrix::from_fn(cols, k, |i, j| v[(i, keep[j])]);
    Ok(CompactSvd {
        left,
        singulars: keep.iter().map(|&i| s[i]).collect(),
        right,
    })
}

/// All singular values, nonincreasing (length `min(rows, cols)`).
pub fn singular_values(m: &MatrixVar) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Sum of singular values.
pub fn nuclear_norm(m: &MatrixVar) -> f64 {
    m.singular_values().iter().sum()
}

/// Largest singular value (0 for the zero matrix).
pub fn spectral_norm(m: &MatrixVar) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Number of singular values of `m / σ₁(m)` strictly above `threshold`.
pub fn truncated_rank(m: &MatrixVar, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0) {
        return invalid(format!("rank threshold must be > 0, got {threshold}"));
    }
    ensure_finite(m, "matrix")?;
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v / top > threshold).count())
}

/// Number of singular values strictly above the absolute `floor`.
pub fn absolute_rank(m: &MatrixVar, floor: f64) -> usize {
    singular_values(m).iter().filter(|&&v| v > floor).count()
}

/// Best rank-`k` Frobenius approximation (truncated SVD).
pub fn project_rank(m: &MatrixVar, k: usize) -> Result<MatrixVar> {
    let mut svd = compact_svd(m, 0.0)?;
    if k >= svd.rank() {
        return Ok(m.clone());
    }
    svd.left = svd.left.columns(0, k).into_owned();
    svd.right = svd.right.columns(0, k).into_owned();
    svd.singulars.truncate(k);
    Ok(svd.reconstruct())
}

/// `argmin_Y ½‖Y − m‖_F² + tau‖Y‖_*`: soft-threshold the singular values.
pub fn svt_prox(m: &MatrixVar, tau: f64) -> Result<MatrixVar> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return invalid(format!("threshold must be finite and >= 0, got {tau}"));
    }
    if tau == 0.0 {
        ensure_finite(m, "matrix")?;
        return Ok(m.clone());
    }
    let mut svd = compact_svd(m, tau)?;
    for s in &mut svd.singulars {
        *s -= tau;
    }
    let (rows, cols) = m.shape();
    if svd.rank() == 0 {
        return Ok(DMatrix::zeros(rows, cols));
    }
    Ok(svd.reconstruct())
}

/// Distance from `g` to the subdifferential `∂(λ‖x‖_*)`.
///
/// Writes `g = λ L R^T + W + E` where `W = (I − L L^T) g (I − R R^T)` and
/// returns `‖E‖_F + max(0, ‖W‖₂ − λ)`. The support of `x` is taken at the
/// absolute floor [`EXACT_RANK_FLOOR`].
pub fn nuclear_subgradient_residual(x: &MatrixVar, g: &MatrixVar, lambda: f64) -> Result<f64> {
    ensure_same_shape(x, g, "subgradient")?;
    ensure_finite(g, "subgradient")?;
    check_lambda(lambda)?;
    let svd = compact_svd(x, EXACT_RANK_FLOOR)?;
    let w = complement_projection(&svd, g);
    let e = g - svd.polar() * lambda - &w;
    Ok(e.norm() + (spectral_norm(&w) - lambda).max(0.0))
}

/// `(I − L L^T) g (I − R R^T)`.
fn complement_projection(svd: &CompactSvd, g: &MatrixVar) -> MatrixVar {
    let l = &svd.left;
    let r = &svd.right;
    let g_r = g - (g * r) * r.transpose();
    &g_r - l * (l.transpose() * &g_r)
}

/// Balanced factors `A = L Σ^{1/2}`, `B = R Σ^{1/2}`, zero-padded to width `r`.
pub fn balanced_factors(x: &MatrixVar, r: usize) -> Result<FactorPair> {
    if r == 0 {
        return invalid("rank budget must be positive");
    }
    let svd = compact_svd(x, EXACT_RANK_FLOOR)?;
    if svd.rank() > r {
        return Err(Error::RankOverflow {
            rank: svd.rank(),
            budget: r,
        });
    }
    let (rows, cols) = x.shape();
    let mut a = DMatrix::zeros(rows, r);
    let mut b = DMatrix::zeros(cols, r);
    for (j, s) in svd.singulars.iter().enumerate() {
        let root = s.sqrt();
        a.set_column(j, &(svd.left.column(j) * root));
        b.set_column(j, &(svd.right.column(j) * root));
    }
    Ok(FactorPair {
        a,
        b,
        rank_budget: r,
    })
}

/// The gradient split `grad = −λ L_X R_X^T + S`.
///
/// Returns `S = grad + λ L_X R_X^T` and the alignment residual
/// `‖L_X^T S‖_F + ‖S R_X‖_F`, which vanishes at first-order stationary
/// points of the factored objective.
pub fn s_matrix(x: &MatrixVar, grad: &MatrixVar, lambda: f64) -> Result<(MatrixVar, f64)> {
    s_matrix_with_floor(x, grad, lambda, EXACT_RANK_FLOOR)
}

/// [`s_matrix`] with the support of `x` taken at singular values `> floor`.
pub fn s_matrix_with_floor(
    x: &MatrixVar,
    grad: &MatrixVar,
    lambda: f64,
    floor: f64,
) -> Result<(MatrixVar, f64)> {
    ensure_same_shape(x, grad, "s_matrix")?;
    ensure_finite(grad, "gradient")?;
    check_lambda(lambda)?;
    let svd = compact_svd(x, floor.max(EXACT_RANK_FLOOR))?;
    let s = grad + svd.polar() * lambda;
    let residual = (svd.left.transpose() * &s).norm() + (&s * &svd.right).norm();
    Ok((s, residual))
}

/// Split of a matrix `X` with `X V = U`, `X^T U = V` into `U V^T` plus a
/// remainder whose singular vectors are orthogonal to `U` and `V`.
#[derive(Clone, Debug)]
pub struct UnitBlockSplit {
    pub unit: MatrixVar,
    pub rest: CompactSvd,
    /// `‖U^T rest‖_F + ‖rest V‖_F`
    pub orthogonality_residual: f64,
}

impl UnitBlockSplit {
    pub fn reconstruct(&self) -> MatrixVar {
        if self.rest.rank() == 0 {
            self.unit.clone()
        } else {
            &self.unit + self.rest.reconstruct()
        }
    }
}

/// Decomposes `x = U V^T + Ũ Σ Ṽ^T` for orthonormal `u`, `v` satisfying
/// `x v = u` and `x^T u = v`.
pub fn split_unit_block(x: &MatrixVar, u: &MatrixVar, v: &MatrixVar) -> Result<UnitBlockSplit> {
    ensure_finite(x, "matrix")?;
    if u.nrows() != x.nrows() || v.nrows() != x.ncols() || u.ncols() != v.ncols() {
        return invalid("split_unit_block: U must be m x k and V n x k");
    }
    let k = u.ncols();
    let tol = 1e-8 * (1.0 + x.norm());
    let eye = DMatrix::<f64>::identity(k, k);
    if (u.transpose() * u - &eye).norm() > tol || (v.transpose() * v - &eye).norm() > tol {
        return invalid("split_unit_block: U and V must have orthonormal columns");
    }
    if (x * v - u).norm() > tol || (x.transpose() * u - v).norm() > tol {
        return invalid("split_unit_block: X V = U and X^T U = V must hold");
    }
    let unit = u * v.transpose();
    let rest_matrix = x - &unit;
    let rest = compact_svd(&rest_matrix, EXACT_RANK_FLOOR * (1.0 + x.norm()))?;
    let rest_low = if rest.rank() == 0 {
        DMatrix::zeros(x.nrows(), x.ncols())
    } else {
        rest.reconstruct()
    };
    let orthogonality_residual = (u.transpose() * &rest_low).norm() + (&rest_low * v).norm();
    Ok(UnitBlockSplit {
        unit,
        rest,
        orthogonality_residual,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        invalid(format!("lambda must be finite and >= 0, got {lambda}"))
    }
}
