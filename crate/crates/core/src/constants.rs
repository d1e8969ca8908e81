//! Monte-Carlo estimation of restricted strong convexity (`α`) and
//! restricted smoothness (`β`) constants around a reference point.
//!
//! For every sample `X_i` in a low-rank ball around `X⋆`:
//!
//! - `α` is the minimum over samples of
//!   `⟨∇f(X_i) − ∇f(X⋆), X_i − X⋆⟩ / ‖X_i − X⋆‖_F²`, an upper estimate of the
//!   true constant;
//! - `β` is the maximum over samples and rank-one unit `U`, `V` of
//!   `∇²f(X_i)[ξ, ξ] / ‖ξ‖_F²` with `ξ = U X_i + X_i V`, a lower estimate.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matcore::{absolute_rank, EXACT_RANK_FLOOR};
use crate::objectives::{Objective, QuadraticObjective};
use crate::rng;
use crate::types::MatrixTuple;

/// Where a pair of constants came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    /// Exact eigenvalue bounds of a quadratic's Hessian.
    Analytic,
    MonteCarlo,
}

/// Per-layer constants consumed by the landscape classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub source: ConstantsSource,
    /// Radius `D` of the ball the constants hold on, when known.
    pub radius: Option<f64>,
}

impl TheoryConstants {
    /// Smallest and largest Hessian eigenvalue of a quadratic, for every layer.
    pub fn analytic_quadratic(obj: &QuadraticObjective) -> Self {
        let (lo, hi) = obj.spectrum_bounds();
        let layers = obj.shapes().len();
        Self {
            alpha: vec![lo; layers],
            beta: vec![hi; layers],
            source: ConstantsSource::Analytic,
            radius: None,
        }
    }
}

/// How the rank of a perturbation is chosen in [`sample_lowrank_ball`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Perturbations of rank `r − rank(X⋆)` so every sample has rank `≤ r`.
    #[default]
    Restricted,
    /// Perturbations of rank `r`; samples may reach rank `rank(X⋆) + r`.
    Loose,
}

/// `n` samples `X⋆ + Δ` with `Δ^(l) = P_l Q_l^T` Gaussian and the whole
/// tuple rescaled so `‖Δ‖_F` is uniform on `(0, d]`.
pub fn sample_lowrank_ball(
    x_star: &MatrixTuple,
    r: usize,
    d: f64,
    n: usize,
    seed: u64,
    mode: RankMode,
) -> Result<Vec<MatrixTuple>> {
    if r == 0 {
        return invalid("rank bound must be positive");
    }
    if !(d > 0.0) || !d.is_finite() {
        return invalid(format!("radius must be finite and > 0, got {d}"));
    }
    let ranks = perturbation_ranks(x_star, r, mode)?;
    Ok((0..n)
        .map(|i| sample_one(x_star, &ranks, d, &mut rng::derive(seed, i as u64)))
        .collect())
}

fn perturbation_ranks(x_star: &MatrixTuple, r: usize, mode: RankMode) -> Result<Vec<usize>> {
    x_star
        .layers()
        .iter()
        .enumerate()
        .map(|(l, m)| {
            let k = match mode {
                RankMode::Loose => r,
                RankMode::Restricted => {
                    let base = absolute_rank(m, EXACT_RANK_FLOOR);
                    if base >= r {
                        return invalid(format!(
                            "layer {l}: reference rank {base} leaves no room below r = {r}"
                        ));
                    }
                    r - base
                }
            };
            Ok(k.min(m.nrows().min(m.ncols())))
        })
        .collect()
}

fn sample_one(x_star: &MatrixTuple, ranks: &[usize], d: f64, g: &mut rng::Rng) -> MatrixTuple {
    let layers: Vec<_> = x_star
        .layers()
        .iter()
        .zip(ranks)
        .map(|(m, &k)| {
            let p = rng::gaussian_matrix(g, m.nrows(), k);
            let q = rng::gaussian_matrix(g, m.ncols(), k);
            p * q.transpose()
        })
        .collect();
    let delta = MatrixTuple::from_layers_unchecked(layers);
    // 1 − U with U uniform on [0, 1) is uniform on (0, 1].
    let u: f64 = Uniform::new(0.0, 1.0).expect("unit interval").sample(g);
    let radius = d * (1.0 - u);
    let scale = radius / delta.frobenius_norm();
    let mut out = x_star.clone();
    out.axpy(scale, &delta);
    out
}

/// Per-layer minimum quotient plus the number of skipped (sample, layer) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaEstimate {
    pub alpha: Vec<f64>,
    pub skipped: usize,
}

/// `α^(l) = min_i ⟨∇_l f(X_i) − ∇_l f(X⋆), X_i^(l) − X⋆^(l)⟩ / ‖X_i^(l) − X⋆^(l)‖_F²`.
///
/// Layers where a sample coincides with `X⋆` are skipped for that sample.
pub fn estimate_alpha(
    obj: &dyn Objective,
    x_star: &MatrixTuple,
    samples: &[MatrixTuple],
) -> Result<AlphaEstimate> {
    x_star.ensure_shapes(obj.shapes(), "reference point")?;
    if samples.is_empty() {
        return Err(Error::Estimation("no samples".into()));
    }
    let layers = x_star.len();
    let g_star = obj.gradient(x_star);
    let per_sample: Vec<Vec<Option<f64>>> = samples
        .par_iter()
        .map(|s| {
            let g = obj.gradient(s);
            (0..layers)
                .map(|l| {
                    let diff = s.layer(l) - x_star.layer(l);
                    let denom = diff.norm_squared();
                    (denom > EXACT_RANK_FLOOR * EXACT_RANK_FLOOR)
                        .then(|| (g.layer(l) - g_star.layer(l)).dot(&diff) / denom)
                })
                .collect()
        })
        .collect();
    let mut alpha = vec![f64::INFINITY; layers];
    let mut skipped = 0;
    for row in &per_sample {
        for (l, q) in row.iter().enumerate() {
            match q {
                Some(q) => alpha[l] = alpha[l].min(*q),
                None => skipped += 1,
            }
        }
    }
    if alpha.iter().any(|a| a.is_infinite()) {
        return Err(Error::Estimation(
            "every sample coincides with the reference in some layer".into(),
        ));
    }
    Ok(AlphaEstimate { alpha, skipped })
}

/// Search budget of the inner maximization in [`estimate_beta`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetaSearch {
    pub inner_trials: usize,
    pub ascent_steps: usize,
    pub seed: u64,
}

impl Default for BetaSearch {
    fn default() -> Self {
        Self {
            inner_trials: 32,
            ascent_steps: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaEstimate {
    pub beta: Vec<f64>,
    /// Samples skipped because every direction was degenerate.
    pub skipped: usize,
}

const DEGENERATE_DIRECTION: f64 = 1e-10;

/// `β^(l) = max_i max_{U, V} ∇²f(X_i)[ξ, ξ] / ‖ξ‖_F²` with `ξ = U X_i + X_i V`,
/// `U = u₁u₂^T`, `V = v₁v₂^T` unit rank-one.
///
/// The inner maximum is searched with `inner_trials` random starts followed
/// by `ascent_steps` projected gradient-ascent steps from the best start.
pub fn estimate_beta(
    obj: &dyn Objective,
    x_star: &MatrixTuple,
    samples: &[MatrixTuple],
    search: BetaSearch,
) -> Result<BetaEstimate> {
    x_star.ensure_shapes(obj.shapes(), "reference point")?;
    if samples.is_empty() {
        return Err(Error::Estimation("no samples".into()));
    }
    if search.inner_trials == 0 {
        return invalid("inner_trials must be positive");
    }
    let layers = x_star.len();
    let per_sample: Vec<Vec<Option<f64>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            (0..layers)
                .map(|l| {
                    let mut g = rng::derive(rng::mix(search.seed, i as u64), l as u64);
                    best_quotient(obj, s, l, search, &mut g)
                })
                .collect()
        })
        .collect();
    let mut beta = vec![f64::NEG_INFINITY; layers];
    let mut skipped = 0;
    for row in &per_sample {
        if row.iter().all(Option::is_none) {
            skipped += 1;
        }
        for (l, q) in row.iter().enumerate() {
            if let Some(q) = q {
                beta[l] = beta[l].max(*q);
            }
        }
    }
    if beta.iter().any(|b| b.is_infinite()) {
        return Err(Error::Estimation(
            "every sampled direction was degenerate in some layer".into(),
        ));
    }
    Ok(BetaEstimate { beta, skipped })
}

struct Direction {
    u1: DVector<f64>,
    u2: DVector<f64>,
    v1: DVector<f64>,
    v2: DVector<f64>,
}

impl Direction {
    fn random(g: &mut rng::Rng, m: usize, n: usize) -> Self {
        let mut unit = |k: usize| {
            let v = DVector::from_column_slice(rng::gaussian_matrix(g, k, 1).as_slice());
            let norm = v.norm();
            v / norm
        };
        Self {
            u1: unit(m),
            u2: unit(m),
            v1: unit(n),
            v2: unit(n),
        }
    }

    /// `ξ = u₁ (X^T u₂)^T + (X v₁) v₂^T`
    fn xi(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.u1 * (x.transpose() * &self.u2).transpose() + (x * &self.v1) * self.v2.transpose()
    }

    fn normalize(&mut self) -> bool {
        for v in [&mut self.u1, &mut self.u2, &mut self.v1, &mut self.v2] {
            let n = v.norm();
            if !(n > 0.0) || !n.is_finite() {
                return false;
            }
            *v /= n;
        }
        true
    }
}

fn embed(x: &MatrixTuple, l: usize, m: DMatrix<f64>) -> MatrixTuple {
    let mut layers: Vec<_> = x
        .layers()
        .iter()
        .map(|a| DMatrix::zeros(a.nrows(), a.ncols()))
        .collect();
    layers[l] = m;
    MatrixTuple::from_layers_unchecked(layers)
}

fn quotient(obj: &dyn Objective, x: &MatrixTuple, l: usize, dir: &Direction) -> Option<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let xi = dir.xi(x.layer(l));
    let nsq = xi.norm_squared();
    if nsq.sqrt() < DEGENERATE_DIRECTION {
        return None;
    }
    let hv = obj.hessian_vector(x, &embed(x, l, xi.clone()));
    let hxi = hv.layer(l).clone();
    Some((hxi.dot(&xi) / nsq, xi, hxi))
}

fn best_quotient(
    obj: &dyn Objective,
    x: &MatrixTuple,
    l: usize,
    search: BetaSearch,
    g: &mut rng::Rng,
) -> Option<f64> {
    let (m, n) = x.layer(l).shape();
    let mut best: Option<(f64, Direction)> = None;
    for _ in 0..search.inner_trials {
        let dir = Direction::random(g, m, n);
        if let Some((q, _, _)) = quotient(obj, x, l, &dir) {
            if best.as_ref().is_none_or(|(b, _)| q > *b) {
                best = Some((q, dir));
            }
        }
    }
    let (mut value, mut dir) = best?;
    let xl = x.layer(l);
    let mut step = 0.5;
    for _ in 0..search.ascent_steps {
        let Some((q, xi, hxi)) = quotient(obj, x, l, &dir) else {
            break;
        };
        // Gradient of the quotient in ξ, pulled back to the four vectors.
        let grad = (hxi - &xi * q) * (2.0 / xi.norm_squared());
        let g_u1 = &grad * (xl.transpose() * &dir.u2);
        let g_u2 = xl * (grad.transpose() * &dir.u1);
        let g_v1 = xl.transpose() * (&grad * &dir.v2);
        let g_v2 = grad.transpose() * (xl * &dir.v1);
        let mut improved = false;
        while step > 1e-8 {
            let mut trial = Direction {
                u1: &dir.u1 + &g_u1 * step,
                u2: &dir.u2 + &g_u2 * step,
                v1: &dir.v1 + &g_v1 * step,
                v2: &dir.v2 + &g_v2 * step,
            };
            if trial.normalize() {
                if let Some((tq, _, _)) = quotient(obj, x, l, &trial) {
                    if tq > value {
                        value = tq;
                        dir = trial;
                        improved = true;
                        step *= 2.0;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some(value)
}

/// Result of a full estimation run, with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEstimate {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `β/α` per layer, `None` when `α ≤ 0`.
    pub ratio: Vec<Option<f64>>,
    pub samples: usize,
    pub skipped_alpha: usize,
    pub skipped_beta: usize,
    pub r: usize,
    pub d: f64,
    pub seed: u64,
    pub source: ConstantsSource,
    pub rank_mode: RankMode,
    pub search: BetaSearch,
    /// Sampled `α` upper-bounds the true constant, sampled `β` lower-bounds it.
    pub note: String,
}

impl ConstantsEstimate {
    pub fn theory(&self) -> TheoryConstants {
        TheoryConstants {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            source: self.source,
            radius: Some(self.d),
        }
    }

    /// One CSV row per layer: `layer, alpha, beta, ratio, r, D, samples, seed`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "alpha", "beta", "ratio", "r", "D", "samples", "seed"])?;
        for l in 0..self.alpha.len() {
            w.write_record([
                l.to_string(),
                format!("{:e}", self.alpha[l]),
                format!("{:e}", self.beta[l]),
                self.ratio[l].map_or("undefined".to_string(), |v| format!("{v:e}")),
                self.r.to_string(),
                format!("{:e}", self.d),
                self.samples.to_string(),
                self.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const MONTE_CARLO_NOTE: &str =
    "alpha is a minimum over samples (an upper estimate of the true constant); \
     beta is a maximum over sampled directions (a lower estimate)";

fn ratios(alpha: &[f64], beta: &[f64]) -> Vec<Option<f64>> {
    alpha
        .iter()
        .zip(beta)
        .map(|(a, b)| (*a > 0.0).then(|| b / a))
        .collect()
}

/// Samples the ball and estimates both constants.
#[allow(clippy::too_many_arguments)]
pub fn estimate_constants(
    obj: &dyn Objective,
    x_star: &MatrixTuple,
    r: usize,
    d: f64,
    n: usize,
    seed: u64,
    mode: RankMode,
    search: BetaSearch,
) -> Result<ConstantsEstimate> {
    let samples = sample_lowrank_ball(x_star, r, d, n, seed, mode)?;
    estimate_from_samples(obj, x_star, &samples, r, d, seed, mode, search)
}

#[allow(clippy::too_many_arguments)]
fn estimate_from_samples(
    obj: &dyn Objective,
    x_star: &MatrixTuple,
    samples: &[MatrixTuple],
    r: usize,
    d: f64,
    seed: u64,
    mode: RankMode,
    search: BetaSearch,
) -> Result<ConstantsEstimate> {
    let a = estimate_alpha(obj, x_star, samples)?;
    let b = estimate_beta(obj, x_star, samples, search)?;
    Ok(ConstantsEstimate {
        ratio: ratios(&a.alpha, &b.beta),
        alpha: a.alpha,
        beta: b.beta,
        samples: samples.len(),
        skipped_alpha: a.skipped,
        skipped_beta: b.skipped,
        r,
        d,
        seed,
        source: ConstantsSource::MonteCarlo,
        rank_mode: mode,
        search,
        note: MONTE_CARLO_NOTE.to_string(),
    })
}

/// Estimates over an increasing list of rank bounds.
///
/// The estimate at rank `r_k` uses the samples drawn for every rank
/// `r_j ≤ r_k` (`n` new samples per rank), since a rank-`r_j` sample is also
/// admissible at rank `r_k`. The estimates are therefore monotone in `r`.
#[allow(clippy::too_many_arguments)]
pub fn rank_sweep(
    obj: &dyn Objective,
    x_star: &MatrixTuple,
    ranks: &[usize],
    d: f64,
    n: usize,
    seed: u64,
    mode: RankMode,
    search: BetaSearch,
) -> Result<Vec<ConstantsEstimate>> {
    if ranks.is_empty() || ranks.windows(2).any(|w| w[0] > w[1]) {
        return invalid("ranks must be a nonempty nondecreasing list");
    }
    let mut pool = Vec::new();
    let mut out = Vec::with_capacity(ranks.len());
    for (k, &r) in ranks.iter().enumerate() {
        pool.extend(sample_lowrank_ball(x_star, r, d, n, rng::mix(seed, k as u64), mode)?);
        out.push(estimate_from_samples(obj, x_star, &pool, r, d, seed, mode, search)?);
    }
    Ok(out)
}
