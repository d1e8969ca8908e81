//! Approximate low-rank structure of weight-decayed gradient trajectories.
//!
//! With per-factor decay `ρ = 1 − 2μλ` and per-step gradients of rank at
//! most `b`, unrolling `n` steps writes `X_t = ρ^{2n} X_{t−n} + W` with
//! `rank(W) ≤ 2nb`. Hence the singular mass of `X_t/‖X_t‖_F` beyond rank
//! `2nb` is at most `ρ^{2n} ‖X_{t−n}‖_F / ‖X_t‖_F`.
//!
//! `λ` here is the decay constant in that recursion. For the optimizer in
//! [`crate::optim`], which uses the gradient of `(λ_wd/2)(‖A‖² + ‖B‖²)`, it
//! is `λ_wd / 2`; see [`lemma_decay_from_weight_decay`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matcore::{singular_values, truncated_rank};
use crate::optim::{StepEvent, Trajectory};

/// Slack added to the proof-convention residual bound.
pub const TAIL_SLACK: f64 = 1e-9;

/// Largest `‖X_{t−n}‖/‖X_t‖` at which a checkpoint counts as converged.
pub const MAX_NORM_RATIO: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `rank ≤ b·log(ε/4)/log(1−μλ)` with tail at most `ε`. Reported only.
    Statement,
    /// `rank ≤ 2nb` with residual `(1−2μλ)^{2n} ‖X_{t−n}‖/‖X_t‖`.
    Proof,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Convention::Statement => "statement",
            Convention::Proof => "proof",
        }
    }
}

/// Decay constant of the recursion for an optimizer weight decay `λ_wd`.
pub fn lemma_decay_from_weight_decay(weight_decay: f64) -> f64 {
    weight_decay / 2.0
}

fn check_params(mu: f64, lambda: f64, epsilon: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return invalid(format!("step size must be finite and > 0, got {mu}"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("decay must be finite and > 0, got {lambda}"));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid(format!("epsilon must be finite and > 0, got {epsilon}"));
    }
    if 2.0 * mu * lambda > 1.0 {
        return invalid(format!("need 2·mu·lambda <= 1, got {}", 2.0 * mu * lambda));
    }
    Ok(())
}

/// Minimal `n ≥ 1` with `(1 − 2μλ)^{2n} < ε/2`.
pub fn proof_horizon(mu: f64, lambda: f64, epsilon: f64) -> Result<usize> {
    check_params(mu, lambda, epsilon)?;
    let rho = 1.0 - 2.0 * mu * lambda;
    if rho == 0.0 || epsilon / 2.0 > 1.0 {
        return Ok(1);
    }
    // Start from the real-valued solution and fix rounding both ways.
    let guess = ((epsilon / 2.0).ln() / (2.0 * rho.ln())).floor().max(1.0) as usize;
    let mut n = guess.saturating_sub(1).max(1);
    while rho.powi(2 * n as i32) >= epsilon / 2.0 {
        n += 1;
    }
    Ok(n)
}

/// `ceil(b · log(ε/4) / log(1 − μλ))`, at least `b`.
pub fn statement_rank(b: usize, mu: f64, lambda: f64, epsilon: f64) -> Result<usize> {
    check_params(mu, lambda, epsilon)?;
    if epsilon >= 4.0 {
        return Ok(b);
    }
    let bound = b as f64 * (epsilon / 4.0).ln() / (1.0 - mu * lambda).ln();
    Ok((bound.ceil() as usize).max(b))
}

/// `‖x_{>k}‖` for the normalized singular values `s / ‖s‖₂`.
fn normalized_tail(singulars: &[f64], k: usize) -> f64 {
    let total: f64 = singulars.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    // An empty float sum is -0.0.
    let tail: f64 = singulars.iter().skip(k).map(|s| s * s).sum::<f64>() + 0.0;
    (tail / total).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointRecord {
    pub t: usize,
    pub layer: usize,
    pub n: usize,
    pub epsilon: f64,
    pub convention: Convention,
    pub bound_rank: usize,
    pub tail_mass: f64,
    pub residual_bound: f64,
    /// `‖X_{t−n}‖_F / ‖X_t‖_F`; infinite when `X_t = 0`.
    pub norm_ratio: f64,
    /// Convergence proxy `norm_ratio ≤ 2` holds and `X_t ≠ 0`.
    pub applicable: bool,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankDynamicsReport {
    pub convention: Convention,
    pub b: usize,
    pub mu: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub n: usize,
    pub bound_rank: usize,
    pub records: Vec<CheckpointRecord>,
    pub notes: Vec<String>,
}

impl RankDynamicsReport {
    /// Every applicable checkpoint passes and at least one is applicable.
    pub fn all_pass(&self) -> bool {
        let mut any = false;
        for r in self.records.iter().filter(|r| r.applicable) {
            any = true;
            if !r.passes {
                return false;
            }
        }
        any
    }

    pub fn applicable_count(&self) -> usize {
        self.records.iter().filter(|r| r.applicable).count()
    }

    /// CSV with columns `t, layer, n, epsilon, convention, bound_rank,
    /// tail_mass, residual_bound, norm_ratio, applicable, passes`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "layer",
            "n",
            "epsilon",
            "convention",
            "bound_rank",
            "tail_mass",
            "residual_bound",
            "norm_ratio",
            "applicable",
            "passes",
        ])?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.layer.to_string(),
                r.n.to_string(),
                r.epsilon.to_string(),
                r.convention.as_str().to_string(),
                r.bound_rank.to_string(),
                r.tail_mass.to_string(),
                r.residual_bound.to_string(),
                r.norm_ratio.to_string(),
                r.applicable.to_string(),
                r.passes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks the tail-mass bound at every snapshot `t` whose lookback snapshot
/// `t − n` is stored.
///
/// Under the proof convention a checkpoint passes when the normalized tail
/// beyond rank `2nb` is at most `(1−2μλ)^{2n} ‖X_{t−n}‖/‖X_t‖ + 1e-9`. The
/// statement convention reports rank `b·log(ε/4)/log(1−μλ)` against the
/// tail budget `ε`. Checkpoints with `‖X_{t−n}‖/‖X_t‖ > 2` or `X_t = 0` are
/// marked not applicable instead of failed.
pub fn rank_dynamics_check(
    traj: &Trajectory,
    b: usize,
    mu: f64,
    lambda: f64,
    epsilon: f64,
    convention: Convention,
) -> Result<RankDynamicsReport> {
    if b == 0 {
        return invalid("gradient rank b must be positive");
    }
    let n = proof_horizon(mu, lambda, epsilon)?;
    let rho_n = (1.0 - 2.0 * mu * lambda).powi(2 * n as i32);
    let bound_rank = match convention {
        Convention::Proof => 2 * n * b,
        Convention::Statement => statement_rank(b, mu, lambda, epsilon)?,
    };
    let span = match (traj.snapshots.first(), traj.snapshots.last()) {
        (Some(a), Some(z)) => z.step - a.step,
        _ => 0,
    };
    if span < n {
        return Err(Error::InsufficientHistory {
            needed: n,
            available: span,
        });
    }

    let mut records = Vec::new();
    for snap in &traj.snapshots {
        let Some(t_step) = snap.step.checked_sub(n) else {
            continue;
        };
        let Some(prev) = traj.at(t_step) else {
            continue;
        };
        let x_t = snap.point.product();
        let x_prev = prev.point.product();
        for l in 0..x_t.len() {
            let cur = x_t.layer(l);
            let norm_t = cur.norm();
            let norm_prev = x_prev.layer(l).norm();
            let norm_ratio = if norm_t > 0.0 { norm_prev / norm_t } else { f64::INFINITY };
            let tail_mass = normalized_tail(&singular_values(cur), bound_rank);
            let residual_bound = match convention {
                Convention::Proof => rho_n * norm_ratio,
                Convention::Statement => epsilon,
            };
            let passes = match convention {
                Convention::Proof => tail_mass <= residual_bound + TAIL_SLACK,
                Convention::Statement => tail_mass <= residual_bound,
            };
            records.push(CheckpointRecord {
                t: snap.step,
                layer: l,
                n,
                epsilon,
                convention,
                bound_rank,
                tail_mass,
                residual_bound,
                norm_ratio,
                applicable: norm_t > 0.0 && norm_ratio <= MAX_NORM_RATIO,
                passes,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::InsufficientHistory {
            needed: n,
            available: 0,
        });
    }
    let notes = vec![format!(
        "statement rank {} uses log(eps/4)/log(1-mu*lambda); proof rank {} uses (1-2*mu*lambda)^(2n) < eps/2; the two do not agree",
        statement_rank(b, mu, lambda, epsilon)?,
        2 * n * b
    )];
    Ok(RankDynamicsReport {
        convention,
        b,
        mu,
        lambda,
        epsilon,
        n,
        bound_rank,
        records,
        notes,
    })
}

/// Rank of the per-step loss gradient in each layer, relative to its top
/// singular value at `threshold`. Bounds the rank of both factor gradients.
pub fn step_gradient_ranks(event: &StepEvent, threshold: f64) -> Result<Vec<usize>> {
    event
        .loss_gradient
        .layers()
        .iter()
        .map(|g| {
            if g.norm() == 0.0 {
                Ok(0)
            } else {
                truncated_rank(g, threshold)
            }
        })
        .collect()
}
