//! The seven experiment kinds.

use lorascape::constants::{estimate_constants, rank_sweep, BetaSearch, ConstantsEstimate, TheoryConstants};
use lorascape::dynamics::{lemma_decay_from_weight_decay, rank_dynamics_check, step_gradient_ranks, RankDynamicsReport};
use lorascape::landscape::{
    check_sosp, classify, classify_approx, spectral_bound_check, Reference, RegimeReport, SospCertificate,
    SospTolerances, SpectralBoundCheck, Verdict,
};
use lorascape::matcore::{absolute_rank, svt_prox, truncated_rank, EXACT_RANK_FLOOR, REPORT_RANK_THRESHOLD};
use lorascape::optim::{factored_gd_from, make_init, prox_gradient, RunConfig, StepEvent, Status, Trajectory};
use lorascape::{rng, MatrixTuple, RegularizedObjective};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BuiltObjective, ConstantsSourceSpec, ExperimentConfig, ExperimentKind, InitSpec};
use crate::output::{combined_trajectory_csv, rows_csv, Artifacts};
use crate::CliError;

/// Relative threshold for the per-step gradient rank in `rank_dynamics`.
pub const STEP_RANK_THRESHOLD: f64 = 1e-10;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub built: BuiltObjective,
    pool: rayon::ThreadPool,
}

/// A reference minimizer of `f + λ‖·‖_*`.
#[derive(Clone, Debug, Serialize)]
pub struct ReferenceSolve {
    #[serde(skip)]
    pub point: MatrixTuple,
    pub value: f64,
    /// `closed_form` for the planted instance, `prox_gradient` otherwise.
    pub method: &'static str,
    pub status: Option<Status>,
    pub steps: usize,
    pub rank: Vec<usize>,
    pub singulars: Vec<Vec<f64>>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn singulars(x: &MatrixTuple) -> Vec<Vec<f64>> {
    x.layers().iter().map(lorascape::matcore::singular_values).collect()
}

fn report_ranks(x: &MatrixTuple) -> Vec<usize> {
    x.layers()
        .iter()
        .map(|m| truncated_rank(m, REPORT_RANK_THRESHOLD).unwrap_or(usize::MAX))
        .collect()
}

fn exact_ranks(x: &MatrixTuple) -> Vec<usize> {
    x.layers().iter().map(|m| absolute_rank(m, EXACT_RANK_FLOOR)).collect()
}

fn norms(x: &MatrixTuple) -> Vec<f64> {
    x.layers().iter().map(|m| m.norm()).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports are serializable")
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ExperimentConfig, built: BuiltObjective, jobs: usize) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
        Ok(Self { cfg, built, pool })
    }

    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Vec<R> {
        self.pool
            .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }

    fn objective(&self, lambda: f64, factored: bool) -> Result<RegularizedObjective, CliError> {
        let base = self.built.base.clone();
        let r = if factored {
            RegularizedObjective::factored(base, lambda)
        } else {
            RegularizedObjective::nuclear(base, lambda)
        };
        r.map_err(|e| config_err(e.to_string()))
    }

    fn lambda(&self) -> f64 {
        self.cfg.effective_lambda(&self.built)
    }

    fn rank(&self) -> Result<usize, CliError> {
        self.cfg
            .rank(&self.built)
            .ok_or_else(|| config_err("this experiment needs the factor width r"))
    }

    /// Solver settings of run `run`: weight decay tied to `lambda` and a
    /// per-run minibatch stream.
    fn solver(&self, lambda: f64, run: usize) -> RunConfig {
        let mut c = self.cfg.solver.clone();
        c.weight_decay = lambda;
        c.seed = rng::mix(rng::mix(self.cfg.seed, self.cfg.solver.seed), run as u64);
        c
    }

    fn prox_config(&self, lambda: f64) -> RunConfig {
        let p = &self.cfg.prox;
        let lr = p.learning_rate.unwrap_or_else(|| match &self.built.quadratic {
            Some(q) => 1.0 / q.spectrum_bounds().1,
            None => self.cfg.solver.learning_rate,
        });
        RunConfig {
            learning_rate: lr,
            weight_decay: lambda,
            batch_size: None,
            max_steps: p.max_steps,
            grad_tol: p.grad_tol,
            seed: self.cfg.seed,
            snapshot_stride: self.cfg.solver.snapshot_stride,
            ..Default::default()
        }
    }

    fn prox_solve(&self, lambda: f64) -> Result<lorascape::optim::RunOutput<MatrixTuple>, CliError> {
        let obj = self.objective(lambda, false)?;
        let init = MatrixTuple::zeros(obj.shapes());
        Ok(prox_gradient(&obj, &init, &self.prox_config(lambda))?)
    }

    pub fn reference(&self, lambda: f64) -> Result<ReferenceSolve, CliError> {
        let obj = self.objective(lambda, false)?;
        if let Some(p) = self.built.planted.as_ref().filter(|p| p.lambda == lambda) {
            let point = p.global.clone();
            return Ok(ReferenceSolve {
                value: obj.full_value(&point),
                method: "closed_form",
                status: None,
                steps: 0,
                rank: report_ranks(&point),
                singulars: singulars(&point),
                point,
            });
        }
        let out = self.prox_solve(lambda)?;
        if out.status != Status::Converged {
            log::warn!("reference solve ended with {:?} after {} steps", out.status, out.steps);
        }
        let point = out.final_point;
        Ok(ReferenceSolve {
            value: obj.full_value(&point),
            method: "prox_gradient",
            status: Some(out.status),
            steps: out.steps,
            rank: report_ranks(&point),
            singulars: singulars(&point),
            point,
        })
    }

    fn search(&self) -> BetaSearch {
        BetaSearch {
            inner_trials: self.cfg.constants.inner_trials,
            ascent_steps: self.cfg.constants.ascent_steps,
            seed: rng::mix(self.cfg.seed, 7),
        }
    }

    fn radius(&self) -> Result<f64, CliError> {
        self.cfg
            .radius
            .ok_or_else(|| config_err("Monte Carlo constants need the radius D"))
    }

    fn monte_carlo(&self, x_star: &MatrixTuple, r: usize) -> Result<ConstantsEstimate, CliError> {
        let c = &self.cfg.constants;
        Ok(estimate_constants(
            self.built.base.as_ref(),
            x_star,
            r,
            self.radius()?,
            c.samples,
            rng::mix(self.cfg.seed, 3),
            c.rank_mode,
            self.search(),
        )?)
    }

    /// α, β per layer: analytic for quadratics unless Monte Carlo is requested.
    pub fn theory(&self, x_star: &MatrixTuple, r: usize) -> Result<TheoryConstants, CliError> {
        match (self.cfg.constants.source, &self.built.quadratic) {
            (ConstantsSourceSpec::Auto | ConstantsSourceSpec::Analytic, Some(q)) => {
                Ok(TheoryConstants::analytic_quadratic(q))
            }
            (ConstantsSourceSpec::Analytic, None) => {
                Err(config_err("analytic constants are only available for quadratic objectives"))
            }
            _ => Ok(self.monte_carlo(x_star, r)?.theory()),
        }
    }

    fn sosp_tolerances(&self, obj: &RegularizedObjective) -> SospTolerances {
        let mut t = SospTolerances::default_for(obj);
        let s = &self.cfg.sosp;
        t.grad_tol = s.grad_tol.unwrap_or(t.grad_tol);
        t.hess_tol = s.hess_tol.unwrap_or(t.hess_tol);
        t.eig_iters = s.eig_iters.unwrap_or(t.eig_iters);
        t.seed = rng::mix(self.cfg.seed, 5);
        t
    }
}

/// Outcome of one factored run, certified and classified when possible.
#[derive(Clone, Debug, Serialize)]
pub struct FactoredRun {
    pub run: usize,
    pub init: String,
    pub status: Status,
    pub steps: usize,
    pub factored_value: f64,
    pub full_value: f64,
    /// Truncated rank at the reporting threshold, per layer.
    pub rank: Vec<usize>,
    /// Rank at the absolute floor, per layer.
    pub exact_rank: Vec<usize>,
    pub frobenius_norm: Vec<f64>,
    pub certificate: Option<SospCertificate>,
    pub spectral_bound: Option<SpectralBoundCheck>,
    pub report: Option<RegimeReport>,
    pub verdict: Option<Verdict>,
    /// Why the run was not classified.
    pub note: Option<String>,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Serialize)]
struct RunRow {
    run: usize,
    init: String,
    status: Status,
    steps: usize,
    full_value: f64,
    rank: String,
    exact_rank: String,
    frobenius_norm: String,
    is_sosp: Option<bool>,
    verdict: Option<Verdict>,
    theory_consistent: Option<bool>,
}

impl FactoredRun {
    fn row(&self) -> RunRow {
        RunRow {
            run: self.run,
            init: self.init.clone(),
            status: self.status,
            steps: self.steps,
            full_value: self.full_value,
            rank: join(&self.rank),
            exact_rank: join(&self.exact_rank),
            frobenius_norm: join(&self.frobenius_norm.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>()),
            is_sosp: self.certificate.as_ref().map(|c| c.is_sosp),
            verdict: self.verdict,
            theory_consistent: self.report.as_ref().map(|r| r.theory_consistent),
        }
    }
}

/// Everything a factored run is judged against.
struct Judge<'a> {
    obj: &'a RegularizedObjective,
    theory: &'a TheoryConstants,
    reference: &'a Reference,
    r_star: usize,
    epsilon: Option<f64>,
    delta: f64,
}

impl Context<'_> {
    fn factored_run(&self, run: usize, init: &InitSpec, r: usize, judge: &Judge) -> Result<FactoredRun, CliError> {
        let obj = judge.obj;
        let start = make_init(&init.scheme(), obj.shapes(), r).map_err(|e| config_err(e.to_string()))?;
        let out = factored_gd_from(obj, start, &self.solver(obj.lambda, run), None)?;
        let x = out.final_point.product();
        let mut rec = FactoredRun {
            run,
            init: init.label(),
            status: out.status,
            steps: out.steps,
            factored_value: obj.factored_value(&out.final_point),
            full_value: obj.full_value(&x),
            rank: Vec::new(),
            exact_rank: Vec::new(),
            frobenius_norm: norms(&x),
            certificate: None,
            spectral_bound: None,
            report: None,
            verdict: None,
            note: None,
            trajectory: out.trajectory,
        };
        if out.status == Status::Diverged || !x.is_finite() {
            rec.note = Some("solver diverged".into());
            return Ok(rec);
        }
        rec.rank = report_ranks(&x);
        rec.exact_rank = exact_ranks(&x);
        let cert = check_sosp(obj, &out.final_point, &self.sosp_tolerances(obj))?;
        rec.spectral_bound = Some(spectral_bound_check(&cert, &judge.theory.beta, obj.lambda)?);
        if cert.is_sosp {
            let report = match judge.epsilon {
                Some(eps) => classify_approx(&cert, judge.theory, judge.r_star, eps, judge.delta, Some(judge.reference)),
                None => classify(&cert, judge.theory, judge.r_star, Some(judge.reference)),
            };
            match report {
                Ok(rep) => {
                    rec.verdict = Some(rep.verdict);
                    rec.report = Some(rep);
                }
                Err(e) => rec.note = Some(e.to_string()),
            }
        } else {
            rec.note = Some("endpoint is not a second-order stationary point".into());
        }
        rec.certificate = Some(cert);
        Ok(rec)
    }

    /// Runs factored descent from each init and classifies every endpoint.
    fn classified_runs(&self, inits: &[InitSpec]) -> Result<(Vec<FactoredRun>, Value), CliError> {
        let lambda = self.lambda();
        let r = self.rank()?;
        let obj = self.objective(lambda, true)?;
        let reference = self.reference(lambda)?;
        let r_star = self.cfg.rank_star(&self.built, &reference.point);
        if r_star > r {
            return Err(config_err(format!("r_star {r_star} exceeds r {r}")));
        }
        let theory = self.theory(&reference.point, r)?;
        let delta = self.cfg.delta.unwrap_or(0.0);
        let rf = match self.cfg.epsilon {
            Some(_) => Reference::approximate(&obj, reference.point.clone(), delta),
            None => Reference::exact(&obj, reference.point.clone()),
        };
        let judge = Judge {
            obj: &obj,
            theory: &theory,
            reference: &rf,
            r_star,
            epsilon: self.cfg.epsilon,
            delta,
        };
        let runs: Result<Vec<_>, _> = self
            .par_map(inits, |i, init| self.factored_run(i, init, r, &judge))
            .into_iter()
            .collect();
        let runs = runs?;
        let header = json!({
            "lambda": lambda,
            "r": r,
            "r_star": r_star,
            "epsilon": self.cfg.epsilon,
            "delta": self.cfg.delta,
            "theory": to_json(&theory),
            "reference": to_json(&reference),
        });
        Ok((runs, header))
    }
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut a, b) {
        a.extend(b);
    }
    a
}

pub fn run(kind: ExperimentKind, ctx: &Context) -> Result<Artifacts, CliError> {
    match kind {
        ExperimentKind::SolveFull => solve_full(ctx),
        ExperimentKind::SolveLora => solve_lora(ctx),
        ExperimentKind::EstimateConstants => estimate(ctx),
        ExperimentKind::Classify => classify_one(ctx),
        ExperimentKind::SweepLambda => sweep_lambda(ctx),
        ExperimentKind::SweepInit => sweep_init(ctx),
        ExperimentKind::RankDynamics => rank_dynamics(ctx),
    }
}

fn analytic_theory(ctx: &Context) -> Value {
    ctx.built
        .quadratic
        .as_ref()
        .map_or(Value::Null, |q| to_json(&TheoryConstants::analytic_quadratic(q)))
}

fn solve_full(ctx: &Context) -> Result<Artifacts, CliError> {
    let lambda = ctx.lambda();
    let obj = ctx.objective(lambda, false)?;
    let out = ctx.prox_solve(lambda)?;
    let x = &out.final_point;
    let report = json!({
        "lambda": lambda,
        "theory": analytic_theory(ctx),
        "status": out.status,
        "steps": out.steps,
        "value": obj.full_value(x),
        "rank": report_ranks(x),
        "exact_rank": exact_ranks(x),
        "frobenius_norm": norms(x),
        "singulars": singulars(x),
        "prox": to_json(&ctx.prox_config(lambda)),
    });
    Ok(Artifacts {
        report,
        trajectory: combined_trajectory_csv([(0, &out.trajectory)])?,
        extra: Vec::new(),
    })
}

fn solve_lora(ctx: &Context) -> Result<Artifacts, CliError> {
    let lambda = ctx.lambda();
    let r = ctx.rank()?;
    let obj = ctx.objective(lambda, true)?;
    let inits = ctx.cfg.inits_or_default();
    let tol = ctx.sosp_tolerances(&obj);
    let runs: Result<Vec<_>, CliError> = ctx
        .par_map(&inits, |i, init| {
            let start = make_init(&init.scheme(), obj.shapes(), r).map_err(|e| config_err(e.to_string()))?;
            let out = factored_gd_from(&obj, start, &ctx.solver(lambda, i), None)?;
            let x = out.final_point.product();
            let finite = out.status != Status::Diverged && x.is_finite();
            let cert = if finite { Some(check_sosp(&obj, &out.final_point, &tol)?) } else { None };
            Ok(FactoredRun {
                run: i,
                init: init.label(),
                status: out.status,
                steps: out.steps,
                factored_value: obj.factored_value(&out.final_point),
                full_value: obj.full_value(&x),
                rank: if finite { report_ranks(&x) } else { Vec::new() },
                exact_rank: if finite { exact_ranks(&x) } else { Vec::new() },
                frobenius_norm: norms(&x),
                certificate: cert,
                spectral_bound: None,
                report: None,
                verdict: None,
                note: (!finite).then(|| "solver diverged".to_string()),
                trajectory: out.trajectory,
            })
        })
        .into_iter()
        .collect();
    let runs = runs?;
    let rows: Vec<_> = runs.iter().map(FactoredRun::row).collect();
    Ok(Artifacts {
        report: json!({
            "lambda": lambda,
            "r": r,
            "theory": analytic_theory(ctx),
            "runs": to_json(&runs),
        }),
        trajectory: combined_trajectory_csv(runs.iter().map(|r| (r.run, &r.trajectory)))?,
        extra: vec![("runs.csv".into(), rows_csv(&rows)?)],
    })
}

fn estimate(ctx: &Context) -> Result<Artifacts, CliError> {
    let lambda = ctx.lambda();
    let reference = ctx.reference(lambda)?;
    let c = &ctx.cfg.constants;
    let d = ctx.radius()?;
    let ranks = if c.ranks.is_empty() { vec![ctx.rank()?] } else { c.ranks.clone() };
    let estimates = rank_sweep(
        ctx.built.base.as_ref(),
        &reference.point,
        &ranks,
        d,
        c.samples,
        rng::mix(ctx.cfg.seed, 3),
        c.rank_mode,
        ctx.search(),
    )?;
    let mut table = Vec::new();
    for (k, e) in estimates.iter().enumerate() {
        let mut buf = Vec::new();
        e.write_csv(&mut buf)?;
        // Keep a single header across ranks.
        let text = String::from_utf8(buf).expect("csv is utf-8");
        let skip = if k == 0 { 0 } else { 1 };
        for line in text.lines().skip(skip) {
            table.extend_from_slice(line.as_bytes());
            table.push(b'\n');
        }
    }
    let last = estimates.last().expect("rank_sweep returns one estimate per rank");
    Ok(Artifacts {
        report: json!({
            "lambda": lambda,
            "D": d,
            "reference": to_json(&reference),
            "theory": to_json(&last.theory()),
            "analytic": analytic_theory(ctx),
            "estimates": to_json(&estimates),
        }),
        trajectory: combined_trajectory_csv(std::iter::empty())?,
        extra: vec![("constants.csv".into(), table)],
    })
}

fn classify_one(ctx: &Context) -> Result<Artifacts, CliError> {
    let inits = ctx.cfg.inits_or_default();
    let (runs, header) = ctx.classified_runs(&inits[..1])?;
    let run = &runs[0];
    let body = json!({
        "theory_source": header["theory"]["source"].clone(),
        "run": to_json(run),
        "verdict": run.verdict,
    });
    Ok(Artifacts {
        report: merge(header, body),
        trajectory: combined_trajectory_csv([(0, &run.trajectory)])?,
        extra: Vec::new(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    /// Truncated rank of the prox-gradient minimizer.
    pub rank: usize,
    /// Rank at the absolute floor.
    pub exact_rank: usize,
    /// Truncated rank of `svt_prox(M, λ)` for identity-Hessian quadratics.
    pub svt_rank: Option<usize>,
    pub value: f64,
    pub status: Status,
    pub steps: usize,
}

fn sweep_lambda(ctx: &Context) -> Result<Artifacts, CliError> {
    let lambdas = &ctx.cfg.lambdas;
    let solved: Result<Vec<_>, CliError> = ctx
        .par_map(lambdas, |_, &lambda| {
            let obj = ctx.objective(lambda, false)?;
            let out = ctx.prox_solve(lambda)?;
            let x = &out.final_point;
            // Ranks are summed over layers.
            let rank = report_ranks(x).iter().sum();
            let exact_rank = exact_ranks(x).iter().sum();
            let svt_rank = match &ctx.built.isotropic_target {
                Some(m) => Some(truncated_rank(&svt_prox(m, lambda)?, REPORT_RANK_THRESHOLD)?),
                None => None,
            };
            let row = LambdaRow {
                lambda,
                rank,
                exact_rank,
                svt_rank,
                value: obj.full_value(x),
                status: out.status,
                steps: out.steps,
            };
            Ok((row, out.trajectory))
        })
        .into_iter()
        .collect();
    let solved = solved?;
    let rows: Vec<LambdaRow> = solved.iter().map(|(r, _)| r.clone()).collect();
    // Only meaningful when the grid is sorted.
    let sorted = lambdas.windows(2).all(|w| w[0] <= w[1]);
    let monotone = sorted.then(|| rows.windows(2).all(|w| w[1].rank <= w[0].rank));
    let matches_svt = rows
        .iter()
        .map(|r| r.svt_rank.map(|s| s == r.rank))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.iter().all(|b| *b));
    let target_singulars = ctx.built.isotropic_target.as_ref().map(lorascape::matcore::singular_values);
    Ok(Artifacts {
        report: json!({
            "theory": analytic_theory(ctx),
            "prox": to_json(&ctx.prox_config(0.0)),
            "rank_threshold": REPORT_RANK_THRESHOLD,
            "target_singulars": target_singulars,
            "rows": to_json(&rows),
            "rank_nonincreasing": monotone,
            "matches_svt": matches_svt,
        }),
        trajectory: combined_trajectory_csv(solved.iter().enumerate().map(|(i, (_, t))| (i, t)))?,
        extra: vec![("sweep.csv".into(), rows_csv(&rows)?)],
    })
}

fn sweep_init(ctx: &Context) -> Result<Artifacts, CliError> {
    let (runs, header) = ctx.classified_runs(&ctx.cfg.inits)?;
    let rows: Vec<_> = runs.iter().map(FactoredRun::row).collect();
    let count = |v: Verdict| runs.iter().filter(|r| r.verdict == Some(v)).count();
    let body = json!({
        "runs": to_json(&runs),
        "summary": {
            "runs": runs.len(),
            "global": count(Verdict::Global),
            "spurious": count(Verdict::Spurious),
            "indeterminate": count(Verdict::Indeterminate),
            "unclassified": runs.iter().filter(|r| r.verdict.is_none()).count(),
            "theory_consistent": runs.iter().filter_map(|r| r.report.as_ref()).all(|r| r.theory_consistent),
        },
    });
    Ok(Artifacts {
        report: merge(header, body),
        trajectory: combined_trajectory_csv(runs.iter().map(|r| (r.run, &r.trajectory)))?,
        extra: vec![("runs.csv".into(), rows_csv(&rows)?)],
    })
}

#[derive(Serialize)]
struct DynamicsCheck {
    #[serde(flatten)]
    summary: Value,
    all_pass: Option<bool>,
    applicable: Option<usize>,
    error: Option<String>,
}

fn rank_dynamics(ctx: &Context) -> Result<Artifacts, CliError> {
    let lambda = ctx.lambda();
    let r = ctx.rank()?;
    let spec = &ctx.cfg.dynamics;
    let obj = ctx.objective(lambda, true)?;
    if ctx.built.base.num_samples().is_none() {
        return Err(config_err("rank_dynamics needs an objective with per-sample losses"));
    }
    let init = &ctx.cfg.inits_or_default()[0];
    let mut cfg = ctx.solver(lambda, 0);
    cfg.batch_size = Some(spec.b);
    let start = make_init(&init.scheme(), obj.shapes(), r).map_err(|e| config_err(e.to_string()))?;

    let mut max_rank = 0usize;
    let mut violations = 0usize;
    let mut checked = 0usize;
    let mut rank_error = None;
    let mut observe = |e: &StepEvent| match step_gradient_ranks(e, STEP_RANK_THRESHOLD) {
        Ok(ranks) => {
            let worst = ranks.into_iter().max().unwrap_or(0);
            max_rank = max_rank.max(worst);
            violations += usize::from(worst > spec.b);
            checked += 1;
        }
        Err(err) => rank_error = Some(err.to_string()),
    };
    let out = factored_gd_from(&obj, start, &cfg, Some(&mut observe))?;
    let mu = cfg.learning_rate;
    let decay = lemma_decay_from_weight_decay(lambda);

    let mut reports: Vec<RankDynamicsReport> = Vec::new();
    let mut checks = Vec::new();
    for &eps in &spec.epsilons {
        for &conv in &spec.conventions {
            match rank_dynamics_check(&out.trajectory, spec.b, mu, decay, eps, conv) {
                Ok(rep) => {
                    checks.push(DynamicsCheck {
                        summary: json!({
                            "epsilon": eps, "convention": conv, "n": rep.n,
                            "bound_rank": rep.bound_rank, "notes": rep.notes,
                        }),
                        all_pass: Some(rep.all_pass()),
                        applicable: Some(rep.applicable_count()),
                        error: None,
                    });
                    reports.push(rep);
                }
                Err(e) => checks.push(DynamicsCheck {
                    summary: json!({ "epsilon": eps, "convention": conv }),
                    all_pass: None,
                    applicable: None,
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    let mut table = Vec::new();
    for (k, rep) in reports.iter().enumerate() {
        let mut buf = Vec::new();
        rep.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        for line in text.lines().skip(usize::from(k > 0)) {
            table.extend_from_slice(line.as_bytes());
            table.push(b'\n');
        }
    }
    Ok(Artifacts {
        report: json!({
            "lambda": lambda,
            "r": r,
            "b": spec.b,
            "mu": mu,
            "decay": decay,
            "theory": analytic_theory(ctx),
            "status": out.status,
            "steps": out.steps,
            "gradient_rank": {
                "threshold": STEP_RANK_THRESHOLD,
                "steps_checked": checked,
                "max": max_rank,
                "violations": violations,
                "error": rank_error,
            },
            "checks": to_json(&checks),
        }),
        trajectory: combined_trajectory_csv([(0, &out.trajectory)])?,
        extra: vec![("dynamics.csv".into(), table)],
    })
}
