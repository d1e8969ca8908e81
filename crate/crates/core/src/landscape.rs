//! Second-order stationarity certificates for the factored objective and
//! the global/spurious classification of certified points.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constants::{ConstantsSource, TheoryConstants};
use crate::error::{invalid, Error, Result};
use crate::matcore::{absolute_rank, s_matrix_with_floor, singular_values, spectral_norm, EXACT_RANK_FLOOR};
use crate::objectives::RegularizedObjective;
use crate::optim::factor_gradient_norm;
use crate::rng;
use crate::types::{FactorTuple, MatrixTuple};

/// Smallest eigenvalue estimate of a symmetric operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosResult {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Residual norm of the returned Ritz pair.
    pub residual: f64,
}

const LANCZOS_RTOL: f64 = 1e-8;

/// Lanczos with full reorthogonalization for the smallest eigenvalue of the
/// symmetric map `apply` on `R^dim`.
///
/// Converged when the Ritz residual drops below `1e-8 · max(1, |θ|_max)`,
/// when the Krylov space exhausts `R^dim`, or on breakdown (the start vector
/// then spans an invariant subspace containing every eigenvector it touches).
pub fn lanczos_min_eig(
    dim: usize,
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    max_iter: usize,
    seed: u64,
) -> LanczosResult {
    assert!(dim > 0, "operator dimension must be positive");
    let mut g = rng::seeded(seed);
    let start = rng::gaussian_matrix(&mut g, dim, 1);
    let mut q = DVector::from_column_slice(start.as_slice());
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let limit = max_iter.max(1).min(dim);
    let mut result = LanczosResult {
        value: f64::NAN,
        converged: false,
        iterations: 0,
        residual: f64::INFINITY,
    };

    for k in 0..limit {
        let mut w = apply(&q);
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        if let (Some(prev), Some(b)) = (basis.last(), betas.last()) {
            w.axpy(-b, prev, 1.0);
        }
        basis.push(q.clone());
        alphas.push(a);
        for _ in 0..2 {
            for v in &basis {
                let c = v.dot(&w);
                w.axpy(-c, v, 1.0);
            }
        }
        let b = w.norm();
        let exhausted = k + 1 == limit;
        let scale = alphas.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let breakdown = b <= 1e-12 * scale;
        if breakdown || exhausted || (k + 1) % 5 == 0 {
            let (theta, last) = smallest_ritz(&alphas, &betas);
            let residual = if breakdown { 0.0 } else { b * last.abs() };
            let tmax = alphas.iter().map(|v| v.abs()).fold(1.0, f64::max);
            result = LanczosResult {
                value: theta,
                converged: breakdown || k + 1 == dim || residual <= LANCZOS_RTOL * tmax,
                iterations: k + 1,
                residual,
            };
            if result.converged || exhausted {
                return result;
            }
        }
        betas.push(b);
        q = w / b;
    }
    result
}

/// Smallest eigenvalue of the tridiagonal matrix and the last component of
/// its eigenvector.
fn smallest_ritz(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let idx = eig.eigenvalues.imin();
    (eig.eigenvalues[idx], eig.eigenvectors[(k - 1, idx)])
}

/// Tolerances of [`check_sosp`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SospTolerances {
    /// Bound on `‖∇_A g‖_F + ‖∇_B g‖_F`.
    pub grad_tol: f64,
    /// Allowed negative curvature.
    pub hess_tol: f64,
    pub eig_iters: usize,
    pub seed: u64,
}

impl SospTolerances {
    /// `grad_tol = 1e-6 (1 + ‖∇f(0)‖_F)`, `hess_tol = 1e-5`, 200 Lanczos steps.
    pub fn default_for(obj: &RegularizedObjective) -> Self {
        Self {
            grad_tol: 1e-6 * (1.0 + obj.gradient_norm_at_zero()),
            hess_tol: 1e-5,
            eig_iters: 200,
            seed: 0,
        }
    }
}

/// Measured first- and second-order data at a factored point.
#[derive(Clone, Debug, Serialize)]
pub struct SospCertificate {
    pub grad_norm: f64,
    pub min_hess_eig: f64,
    pub hess_converged: bool,
    pub lanczos_iterations: usize,
    /// `‖S_l‖₂` per layer for `S = ∇f + λ L_X R_X^T`.
    pub s_spectral: Vec<f64>,
    /// `‖L_X^T S‖_F + ‖S R_X‖_F` per layer.
    pub s_alignment: Vec<f64>,
    /// `Σ_l ‖A_l^T A_l − B_l^T B_l‖_F`.
    pub balance_residual: f64,
    /// Singular values of every layer of `X = A B^T`.
    pub singulars: Vec<Vec<f64>>,
    /// `‖∇f(X)‖_F` per layer.
    pub loss_gradient_norm: Vec<f64>,
    pub rank_budget: Vec<usize>,
    /// Singular values at or below this count as outside the support of `X`
    /// when forming `S` (the gradient tolerance, floored at `1e-12`).
    pub support_floor: f64,
    pub lambda: f64,
    pub factored_value: f64,
    pub full_value: f64,
    pub tolerances: SospTolerances,
    pub is_sosp: bool,
    #[serde(skip)]
    pub product: MatrixTuple,
}

impl SospCertificate {
    /// `σ_k` of layer `l` (1-based `k`), zero past the rank.
    pub fn sigma(&self, l: usize, k: usize) -> f64 {
        if k == 0 {
            return f64::INFINITY;
        }
        self.singulars[l].get(k - 1).copied().unwrap_or(0.0)
    }
}

/// Measures stationarity of `g(A, B)` at `point`.
///
/// The smallest Hessian eigenvalue comes from Lanczos on the exact
/// Hessian-vector product of `g`; non-convergence is reported through
/// `hess_converged` rather than as an error.
pub fn check_sosp(
    obj: &RegularizedObjective,
    point: &FactorTuple,
    tol: &SospTolerances,
) -> Result<SospCertificate> {
    if point.shapes() != obj.shapes() {
        return invalid(format!(
            "point has shapes {:?}, objective expects {:?}",
            point.shapes(),
            obj.shapes()
        ));
    }
    if !point.is_finite() {
        return invalid("point has non-finite entries");
    }
    if !(tol.grad_tol > 0.0) || !(tol.hess_tol >= 0.0) || tol.eig_iters == 0 {
        return invalid("tolerances must be positive");
    }
    let x = point.product();
    let grad_x = obj.base.gradient(&x);
    let grad = obj.factored_gradient_from(point, &grad_x);
    let grad_norm = factor_gradient_norm(&grad);

    let dim = point.num_entries();
    let lanczos = lanczos_min_eig(
        dim,
        |v| {
            let dir = point.like_from_slice(v.as_slice());
            obj.factored_hvp_with(point, &x, &grad_x, &dir).to_vector()
        },
        tol.eig_iters,
        tol.seed,
    );

    let support_floor = tol.grad_tol.max(EXACT_RANK_FLOOR);
    let mut s_spectral = Vec::with_capacity(x.len());
    let mut s_alignment = Vec::with_capacity(x.len());
    for (xl, gl) in x.layers().iter().zip(grad_x.layers()) {
        let (s, align) = s_matrix_with_floor(xl, gl, obj.lambda, support_floor)?;
        s_spectral.push(spectral_norm(&s));
        s_alignment.push(align);
    }
    let is_sosp = grad_norm <= tol.grad_tol && lanczos.value >= -tol.hess_tol;
    Ok(SospCertificate {
        grad_norm,
        min_hess_eig: lanczos.value,
        hess_converged: lanczos.converged,
        lanczos_iterations: lanczos.iterations,
        s_spectral,
        s_alignment,
        balance_residual: point.balance_residual(),
        singulars: x.layers().iter().map(singular_values).collect(),
        loss_gradient_norm: grad_x.layers().iter().map(|g| g.norm()).collect(),
        rank_budget: point.ranks(),
        support_floor,
        lambda: obj.lambda,
        factored_value: obj.factored_value(point),
        full_value: obj.full_value(&x),
        tolerances: *tol,
        is_sosp,
        product: x,
    })
}

/// Outcome of the spectral bound `‖S‖₂ ≤ λ + β σ_r` per layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralBoundCheck {
    pub passes: bool,
    /// `λ + β σ_r − ‖S‖₂` per layer.
    pub margins: Vec<f64>,
}

pub const SPECTRAL_BOUND_SLACK: f64 = 1e-6;

pub fn spectral_bound_check(cert: &SospCertificate, beta: &[f64], lambda: f64) -> Result<SpectralBoundCheck> {
    if beta.len() != cert.s_spectral.len() {
        return invalid("one beta per layer is required");
    }
    let margins: Vec<f64> = (0..beta.len())
        .map(|l| lambda + beta[l] * cert.sigma(l, cert.rank_budget[l]) - cert.s_spectral[l])
        .collect();
    Ok(SpectralBoundCheck {
        passes: margins.iter().all(|m| *m >= -SPECTRAL_BOUND_SLACK),
        margins,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Special,
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Global,
    Spurious,
    Indeterminate,
}

/// Which alternative of the approximate-case dichotomy a flagged layer meets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disjunct {
    /// `σ_r ≤ (2α/β) σ_{r⋆}`: no distance bound is implied.
    RankCondition,
    DistanceBound,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerReport {
    pub sigma_r: f64,
    pub sigma_rstar: f64,
    pub threshold: f64,
    /// Lower bound on `‖X^(l) − X⋆^(l)‖_F` for flagged layers.
    pub distance_bound: Option<f64>,
    /// Lower bound on `‖X^(l)‖_F` (needs a reference minimizer).
    pub magnitude_bound: Option<f64>,
    /// Rank at the absolute floor `1e-12`.
    pub rank: usize,
    pub regime: Regime,
    /// `σ_r` exceeds the threshold in the generic regime.
    pub flagged: bool,
    /// `‖X^(l) − Π_{rank ≤ r⋆}(X^(l))‖_F`.
    pub tail: f64,
    pub disjunct: Option<Disjunct>,
    pub distance: Option<f64>,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsEcho {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub source: ConstantsSource,
    #[serde(rename = "D")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToleranceEcho {
    pub grad_tol: f64,
    pub hess_tol: f64,
    pub support_floor: f64,
    pub value_rtol: f64,
    pub delta_gate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputsEcho {
    pub r: usize,
    pub r_star: usize,
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateEcho {
    pub grad_norm: f64,
    pub min_hess_eig: f64,
    pub hess_converged: bool,
    pub is_sosp: bool,
    pub full_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceCheck {
    pub reference_value: f64,
    pub candidate_value: f64,
    pub values_match: bool,
    pub distance: f64,
    /// `‖X − X⋆‖_F ≤ D`, when `D` is known.
    pub within_radius: Option<bool>,
    /// Every flagged layer meets its distance and magnitude bounds.
    pub bounds_satisfied: bool,
}

/// Classification of one certified point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Vec<Regime>,
    pub verdict: Verdict,
    /// The verdict was decided by comparison with a reference minimizer.
    pub refined: bool,
    pub per_layer: Vec<LayerReport>,
    pub constants: ConstantsEcho,
    pub tolerances: ToleranceEcho,
    pub inputs: InputsEcho,
    pub certificate: CertificateEcho,
    pub reference: Option<ReferenceCheck>,
    /// False when a reference-confirmed verdict contradicts the bounds.
    pub theory_consistent: bool,
    pub warnings: Vec<String>,
}

/// A (near-)global minimizer of `f + λ‖·‖_*` used to refine verdicts.
#[derive(Clone, Debug)]
pub struct Reference {
    pub point: MatrixTuple,
    pub value: f64,
    /// Known distance from `point` to an exact minimizer.
    pub delta: f64,
}

impl Reference {
    pub fn exact(obj: &RegularizedObjective, point: MatrixTuple) -> Self {
        Self {
            value: obj.full_value(&point),
            point,
            delta: 0.0,
        }
    }

    pub fn approximate(obj: &RegularizedObjective, point: MatrixTuple, delta: f64) -> Self {
        Self {
            delta,
            ..Self::exact(obj, point)
        }
    }
}

/// Relative tolerance for declaring two regularized losses equal.
pub const VALUE_RTOL: f64 = 1e-6;

fn values_match(v: f64, v_star: f64) -> bool {
    (v - v_star).abs() <= VALUE_RTOL * v_star.abs().max(1.0)
}

fn validate_common(
    cert: &SospCertificate,
    constants: &TheoryConstants,
    r_star: usize,
) -> Result<usize> {
    if !cert.is_sosp {
        return invalid("point is not a second-order stationary point");
    }
    let layers = cert.singulars.len();
    if constants.alpha.len() != layers || constants.beta.len() != layers {
        return invalid("one alpha and one beta per layer are required");
    }
    for l in 0..layers {
        let (a, b) = (constants.alpha[l], constants.beta[l]);
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InapplicableTheory(format!(
                "layer {l}: alpha = {a} is not positive"
            )));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InapplicableTheory(format!(
                "layer {l}: beta = {b} is not finite and positive"
            )));
        }
    }
    let r = cert.rank_budget[0];
    if cert.rank_budget.iter().any(|&k| k != r) {
        return invalid("all layers must share the rank budget");
    }
    if r_star == 0 || r_star > r {
        return invalid(format!("need 1 <= r_star <= r, got r_star = {r_star}, r = {r}"));
    }
    Ok(r)
}

fn tail(cert: &SospCertificate, l: usize, r_star: usize) -> f64 {
    cert.singulars[l]
        .iter()
        .skip(r_star)
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}

struct Branching {
    special: bool,
    threshold: f64,
    distance_sq_numerator: f64,
    distance_offset: f64,
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    cert: &SospCertificate,
    constants: &TheoryConstants,
    r: usize,
    r_star: usize,
    reference: Option<&Reference>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    mut warnings: Vec<String>,
    branch: impl Fn(usize, f64, f64) -> Branching,
) -> RegimeReport {
    let layers = cert.singulars.len();
    let mut per_layer = Vec::with_capacity(layers);
    for l in 0..layers {
        let (alpha, beta) = (constants.alpha[l], constants.beta[l]);
        let sigma_r = cert.sigma(l, r);
        let sigma_rstar = cert.sigma(l, r_star);
        let br = branch(l, alpha, beta);
        let regime = if br.special { Regime::Special } else { Regime::Generic };
        let flagged = !br.special && sigma_r > br.threshold;
        let tail_l = tail(cert, l, r_star);
        let xl = cert.product.layer(l);
        let mut distance_bound = None;
        let mut disjunct = None;
        if flagged {
            let ratio = 2.0 * alpha * sigma_rstar / (beta * sigma_r);
            if ratio < 1.0 {
                let num = (tail_l * tail_l - br.distance_sq_numerator).max(0.0);
                distance_bound = Some((num / (1.0 - ratio)).sqrt() - br.distance_offset);
                disjunct = Some(Disjunct::DistanceBound);
            } else {
                disjunct = Some(Disjunct::RankCondition);
            }
        }
        let magnitude_bound = match (distance_bound, reference) {
            (Some(d), Some(rf)) => Some(d - rf.point.layer(l).norm()),
            _ => None,
        };
        per_layer.push(LayerReport {
            sigma_r,
            sigma_rstar,
            threshold: br.threshold,
            distance_bound,
            magnitude_bound,
            rank: absolute_rank(xl, EXACT_RANK_FLOOR),
            regime,
            flagged,
            tail: tail_l,
            disjunct,
            distance: reference.map(|rf| (xl - rf.point.layer(l)).norm()),
            magnitude: xl.norm(),
        });
    }

    let any_flagged = per_layer.iter().any(|p| p.flagged);
    let mut verdict = if !cert.hess_converged {
        warnings.push("Hessian eigenvalue iteration did not converge".into());
        Verdict::Indeterminate
    } else if any_flagged && r == r_star {
        warnings.push("r = r_star: the distance bound is vacuous".into());
        Verdict::Indeterminate
    } else if any_flagged {
        Verdict::Spurious
    } else {
        Verdict::Global
    };

    let mut refined = false;
    let mut theory_consistent = true;
    let reference_check = reference.map(|rf| {
        let distance = cert.product.sub(&rf.point).frobenius_norm();
        let matched = values_match(cert.full_value, rf.value);
        let bounds_satisfied = per_layer.iter().filter(|p| p.flagged).all(|p| {
            let slack = 1e-9 * (1.0 + p.magnitude);
            let dist_ok = match (p.distance_bound, p.distance) {
                (Some(b), Some(d)) => d + rf.delta >= b - slack,
                _ => true,
            };
            let mag_ok = p.magnitude_bound.is_none_or(|b| p.magnitude >= b - slack);
            dist_ok && mag_ok
        });
        ReferenceCheck {
            reference_value: rf.value,
            candidate_value: cert.full_value,
            values_match: matched,
            distance,
            within_radius: constants.radius.map(|d| distance <= d),
            bounds_satisfied,
        }
    });

    if let (Some(rf), Some(check)) = (reference, reference_check.as_ref()) {
        refined = true;
        let confirmed = match epsilon {
            None => {
                if check.values_match {
                    Verdict::Global
                } else if cert.full_value < rf.value {
                    warnings.push("candidate value lies below the reference value".into());
                    Verdict::Indeterminate
                } else {
                    Verdict::Spurious
                }
            }
            Some(eps) => {
                if check.distance + rf.delta <= eps {
                    Verdict::Global
                } else if check.distance - rf.delta > eps {
                    Verdict::Spurious
                } else {
                    Verdict::Indeterminate
                }
            }
        };
        if confirmed == Verdict::Spurious && !any_flagged {
            theory_consistent = false;
            warnings.push("confirmed spurious point with no flagged layer".into());
        }
        if confirmed == Verdict::Spurious && !check.bounds_satisfied {
            theory_consistent = false;
            warnings.push("distance or magnitude bound violated".into());
        }
        verdict = confirmed;
    }

    RegimeReport {
        regime: per_layer.iter().map(|p| p.regime).collect(),
        verdict,
        refined,
        per_layer,
        constants: ConstantsEcho {
            alpha: constants.alpha.clone(),
            beta: constants.beta.clone(),
            source: constants.source,
            radius: constants.radius,
        },
        tolerances: ToleranceEcho {
            grad_tol: cert.tolerances.grad_tol,
            hess_tol: cert.tolerances.hess_tol,
            support_floor: cert.support_floor,
            value_rtol: VALUE_RTOL,
            delta_gate: epsilon.map(|e| e.powi(3)),
        },
        inputs: InputsEcho {
            r,
            r_star,
            lambda: cert.lambda,
            epsilon,
            delta,
        },
        certificate: CertificateEcho {
            grad_norm: cert.grad_norm,
            min_hess_eig: cert.min_hess_eig,
            hess_converged: cert.hess_converged,
            is_sosp: cert.is_sosp,
            full_value: cert.full_value,
        },
        reference: reference_check,
        theory_consistent,
        warnings,
    }
}

/// Exact-minimizer classification of a certified point.
///
/// Per layer the regime is special when `2α > β` (equality counts as
/// generic). A generic layer is flagged when `σ_r > (2α/β) σ_{r⋆}`; flagged
/// layers carry the distance bound
/// `‖X − X⋆‖_F ≥ ‖X − Π_{r⋆}(X)‖_F / sqrt(1 − 2α σ_{r⋆}/(β σ_r))` and, with a
/// reference, the magnitude bound `‖X‖_F ≥ distance_bound − ‖X⋆‖_F`. Without
/// flags the point is global. A reference minimizer replaces the verdict by
/// a direct value comparison and cross-checks the bounds.
pub fn classify(
    cert: &SospCertificate,
    constants: &TheoryConstants,
    r_star: usize,
    reference: Option<&Reference>,
) -> Result<RegimeReport> {
    let r = validate_common(cert, constants, r_star)?;
    Ok(build_report(
        cert,
        constants,
        r,
        r_star,
        reference,
        None,
        None,
        Vec::new(),
        |l, alpha, beta| Branching {
            special: 2.0 * alpha > beta,
            threshold: 2.0 * alpha / beta * cert.sigma(l, r_star),
            distance_sq_numerator: 0.0,
            distance_offset: 0.0,
        },
    ))
}

/// Approximate-minimizer classification with accuracy `epsilon` when the
/// global minimizer is only `delta`-close to rank `r⋆`.
///
/// Special when `2α ≥ β(1 + ε)`; otherwise flagged when
/// `σ_r > max{2α/(β(1+ε)) σ_{r⋆}, αε/(2β√r)}`, with distance bound
/// `sqrt((tail² − ε³)/(1 − 2α σ_{r⋆}/(β σ_r))) − ε²` whenever the ratio is
/// below one. Requires `delta ≤ ε³` and warns when `delta > ε³/10`.
pub fn classify_approx(
    cert: &SospCertificate,
    constants: &TheoryConstants,
    r_star: usize,
    epsilon: f64,
    delta: f64,
    reference: Option<&Reference>,
) -> Result<RegimeReport> {
    let r = validate_common(cert, constants, r_star)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid(format!("epsilon must be finite and > 0, got {epsilon}"));
    }
    if !(delta >= 0.0) {
        return invalid(format!("delta must be >= 0, got {delta}"));
    }
    let gate = epsilon.powi(3);
    if delta > gate {
        return invalid(format!("delta = {delta} exceeds epsilon^3 = {gate}"));
    }
    let mut warnings = Vec::new();
    if delta > gate / 10.0 {
        warnings.push(format!("delta = {delta} is above epsilon^3/10 = {}", gate / 10.0));
    }
    let rf = r as f64;
    Ok(build_report(
        cert,
        constants,
        r,
        r_star,
        reference,
        Some(epsilon),
        Some(delta),
        warnings,
        |l, alpha, beta| {
            let rank_threshold = 2.0 * alpha / (beta * (1.0 + epsilon)) * cert.sigma(l, r_star);
            let floor = alpha * epsilon / (2.0 * beta * rf.sqrt());
            Branching {
                special: 2.0 * alpha >= beta * (1.0 + epsilon),
                threshold: rank_threshold.max(floor),
                distance_sq_numerator: gate,
                distance_offset: epsilon * epsilon,
            }
        },
    ))
}
