//! Factored gradient descent with weight decay, the proximal gradient method
//! for nuclear-norm regularized problems, and factor initializations.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matcore::{svt_prox, truncated_rank, REPORT_RANK_THRESHOLD};
use crate::objectives::{RegularizedForm, RegularizedObjective};
use crate::rng;
use crate::types::{FactorPair, FactorTuple, MatrixTuple, MatrixVar};

/// How the factors `A`, `B` are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    /// `A` uniform on `[-c, c]` entrywise, `B = 0`.
    ZeroB { c: f64 },
    /// Entrywise normal factors with per-factor mean and standard deviation.
    Gaussian {
        mean_a: f64,
        std_a: f64,
        mean_b: f64,
        std_b: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    #[serde(flatten)]
    pub kind: InitKind,
    pub seed: u64,
}

/// Named initializations used by the experiment runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPreset {
    /// Uniform `A` with bound `sqrt(15/768)`, zero `B`.
    ZeroB,
    /// Centered Gaussian factors, std 1/30.
    GaussianSmall,
    /// Centered Gaussian factors, std 1/10.
    GaussianMedium,
    /// Means -1/10 and 1/10, std 1/20.
    GaussianShifted,
    /// Centered Gaussian factors, std 1/5.
    GaussianLarge,
}

impl InitScheme {
    pub fn zero_b(c: f64, seed: u64) -> Self {
        Self {
            kind: InitKind::ZeroB { c },
            seed,
        }
    }

    pub fn gaussian(mean_a: f64, std_a: f64, mean_b: f64, std_b: f64, seed: u64) -> Self {
        Self {
            kind: InitKind::Gaussian {
                mean_a,
                std_a,
                mean_b,
                std_b,
            },
            seed,
        }
    }

    /// Centered Gaussian factors with a common standard deviation.
    pub fn centered(std: f64, seed: u64) -> Self {
        Self::gaussian(0.0, std, 0.0, std, seed)
    }

    pub fn preset(preset: InitPreset, seed: u64) -> Self {
        match preset {
            InitPreset::ZeroB => Self::zero_b((15.0f64 / 768.0).sqrt(), seed),
            InitPreset::GaussianSmall => Self::centered(1.0 / 30.0, seed),
            InitPreset::GaussianMedium => Self::centered(0.1, seed),
            InitPreset::GaussianShifted => Self::gaussian(-0.1, 0.05, 0.1, 0.05, seed),
            InitPreset::GaussianLarge => Self::centered(0.2, seed),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            InitKind::ZeroB { c } => c >= 0.0 && c.is_finite(),
            InitKind::Gaussian {
                mean_a,
                std_a,
                mean_b,
                std_b,
            } => {
                [mean_a, mean_b].iter().all(|v| v.is_finite())
                    && [std_a, std_b].iter().all(|s| *s >= 0.0 && s.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid initialization parameters {:?}", self.kind))
        }
    }
}

/// Draws factors of width `r` for every layer shape. Deterministic in the seed.
pub fn make_init(scheme: &InitScheme, shapes: &[(usize, usize)], r: usize) -> Result<FactorTuple> {
    scheme.validate()?;
    if r == 0 || shapes.is_empty() {
        return invalid("initialization needs r > 0 and at least one layer");
    }
    let mut g = rng::seeded(scheme.seed);
    let pairs = shapes
        .iter()
        .map(|&(m, n)| match scheme.kind {
            InitKind::ZeroB { c } => {
                let a = if c == 0.0 {
                    MatrixVar::zeros(m, r)
                } else {
                    let u = Uniform::new_inclusive(-c, c).expect("validated bound");
                    MatrixVar::from_fn(m, r, |_, _| u.sample(&mut g))
                };
                FactorPair {
                    a,
                    b: MatrixVar::zeros(n, r),
                    rank_budget: r,
                }
            }
            InitKind::Gaussian {
                mean_a,
                std_a,
                mean_b,
                std_b,
            } => {
                let a = normal_matrix(&mut g, m, r, mean_a, std_a);
                let b = normal_matrix(&mut g, n, r, mean_b, std_b);
                FactorPair {
                    a,
                    b,
                    rank_budget: r,
                }
            }
        })
        .collect();
    FactorTuple::new(pairs)
}

fn normal_matrix(g: &mut rng::Rng, rows: usize, cols: usize, mean: f64, std: f64) -> MatrixVar {
    if std == 0.0 {
        return MatrixVar::from_element(rows, cols, mean);
    }
    let d = Normal::new(mean, std).expect("validated parameters");
    MatrixVar::from_fn(rows, cols, |_, _| d.sample(g))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `μ_t = μ (1 + cos(π t / max_steps)) / 2`
    Cosine,
}

/// Solver hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Keep every `snapshot_stride`-th iterate in the trajectory.
    pub snapshot_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 0.0,
            batch_size: None,
            max_steps: 1000,
            grad_tol: 1e-6,
            schedule: Schedule::Constant,
            seed: 0,
            snapshot_stride: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return invalid("learning_rate must be finite and >= 0");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return invalid("weight_decay must be finite and >= 0");
        }
        if self.batch_size == Some(0) {
            return invalid("batch_size must be positive");
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return invalid("grad_tol must be > 0");
        }
        if self.snapshot_stride == 0 {
            return invalid("snapshot_stride must be positive");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let frac = step as f64 / self.max_steps as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxSteps,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    Factors(FactorTuple),
    Full(MatrixTuple),
}

impl Point {
    pub fn product(&self) -> MatrixTuple {
        match self {
            Point::Factors(f) => f.product(),
            Point::Full(x) => x.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub point: Point,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Thinned record of a run; the final iterate is always kept.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub stride: usize,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    fn push(&mut self, snap: Snapshot) {
        if let Some(last) = self.snapshots.last() {
            if last.step >= snap.step {
                return;
            }
        }
        self.snapshots.push(snap);
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Snapshot recorded at exactly `step`, if kept.
    pub fn at(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&step, |s| s.step)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    /// CSV with columns `step, loss, grad_norm, rank_<l>..., frobenius_norm_<l>...`.
    /// Ranks use the relative threshold [`REPORT_RANK_THRESHOLD`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let layers = self
            .snapshots
            .first()
            .map(|s| s.point.product().len())
            .unwrap_or(0);
        let mut header = vec!["step".to_string(), "loss".into(), "grad_norm".into()];
        header.extend((0..layers).map(|l| format!("rank_{l}")));
        header.extend((0..layers).map(|l| format!("frobenius_norm_{l}")));
        w.write_record(&header)?;
        for s in &self.snapshots {
            let x = s.point.product();
            let mut row = vec![s.step.to_string(), fmt(s.loss), fmt(s.grad_norm)];
            for m in x.layers() {
                let rank = if m.iter().all(|v| v.is_finite()) {
                    truncated_rank(m, REPORT_RANK_THRESHOLD)?.to_string()
                } else {
                    "nan".to_string()
                };
                row.push(rank);
            }
            row.extend(x.layers().iter().map(|m| fmt(m.norm())));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Clone, Debug)]
pub struct RunOutput<P> {
    pub final_point: P,
    pub trajectory: Trajectory,
    pub status: Status,
    /// Number of parameter updates performed.
    pub steps: usize,
}

/// Information handed to an observer before each factored update.
pub struct StepEvent<'a> {
    pub step: usize,
    pub learning_rate: f64,
    pub factors: &'a FactorTuple,
    /// Stochastic (or full) gradient of the base loss at `A B^T`.
    pub loss_gradient: &'a MatrixTuple,
    pub batch: Option<&'a [usize]>,
}

/// `‖∇_A g‖_F + ‖∇_B g‖_F`, each norm taken over all layers.
pub fn factor_gradient_norm(grad: &FactorTuple) -> f64 {
    let (mut a, mut b) = (0.0, 0.0);
    for p in grad.pairs() {
        a += p.a.norm_squared();
        b += p.b.norm_squared();
    }
    a.sqrt() + b.sqrt()
}

struct BatchSampler {
    n: usize,
    size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            size,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: n,
        }
    }

    /// Next batch; every epoch is a fresh permutation drawn without replacement.
    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng::derive(self.seed, self.epoch));
            self.epoch += 1;
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

fn batching(obj: &RegularizedObjective, cfg: &RunConfig) -> Result<Option<BatchSampler>> {
    match (cfg.batch_size, obj.base.num_samples()) {
        (None, _) => Ok(None),
        (Some(b), Some(n)) if b < n => Ok(Some(BatchSampler::new(n, b, cfg.seed))),
        (Some(_), Some(_)) => Ok(None),
        (Some(_), None) => invalid("mini-batching needs an objective with per-sample losses"),
    }
}

fn check_decay(obj: &RegularizedObjective, cfg: &RunConfig) -> Result<()> {
    if (obj.lambda - cfg.weight_decay).abs() > 1e-15 * (1.0 + obj.lambda) {
        return invalid(format!(
            "weight_decay {} does not match the objective's lambda {}",
            cfg.weight_decay, obj.lambda
        ));
    }
    Ok(())
}

/// Gradient descent on `g(A, B)` from a scheme-drawn starting point.
pub fn factored_gd(
    obj: &RegularizedObjective,
    init: &InitScheme,
    rank: usize,
    cfg: &RunConfig,
) -> Result<RunOutput<FactorTuple>> {
    let start = make_init(init, obj.shapes(), rank)?;
    factored_gd_from(obj, start, cfg, None)
}

/// Gradient descent on `g(A, B)`:
/// `A ← A − μ(∇f(AB^T) B + λA)`, `B ← B − μ(∇f(AB^T)^T A + λB)`.
///
/// Full-batch runs stop once `‖∇_A g‖_F + ‖∇_B g‖_F ≤ grad_tol`; mini-batch
/// runs test the full gradient at snapshot steps only.
pub fn factored_gd_from(
    obj: &RegularizedObjective,
    start: FactorTuple,
    cfg: &RunConfig,
    mut observer: Option<&mut dyn FnMut(&StepEvent)>,
) -> Result<RunOutput<FactorTuple>> {
    cfg.validate()?;
    if obj.form != RegularizedForm::Factored {
        return invalid("factored_gd needs the factored form");
    }
    check_decay(obj, cfg)?;
    if start.shapes() != obj.shapes() {
        return invalid(format!(
            "initial factors have shapes {:?}, objective expects {:?}",
            start.shapes(),
            obj.shapes()
        ));
    }
    let mut sampler = batching(obj, cfg)?;
    let mut f = start;
    let mut traj = Trajectory {
        stride: cfg.snapshot_stride,
        snapshots: Vec::new(),
    };
    let mut status = Status::MaxSteps;
    let mut steps = 0;

    for t in 0..cfg.max_steps {
        let on_stride = t % cfg.snapshot_stride == 0;
        let lr = cfg.learning_rate_at(t);
        let (grad, grad_x, batch) = match sampler.as_mut() {
            None => {
                let (grad, grad_x) = obj.factored_gradient(&f);
                (grad, grad_x, None)
            }
            Some(s) => {
                let batch = s.next_batch();
                let grad_x = obj
                    .base
                    .batch_gradient(&f.product(), &batch)
                    .ok_or_else(|| crate::Error::InvalidInput("batch gradient unavailable".into()))?;
                (obj.factored_gradient_from(&f, &grad_x), grad_x, Some(batch))
            }
        };
        if batch.is_none() || on_stride {
            let full_grad_norm = if batch.is_none() {
                factor_gradient_norm(&grad)
            } else {
                factor_gradient_norm(&obj.factored_gradient(&f).0)
            };
            let loss = obj.factored_value(&f);
            let bad = !loss.is_finite() || !full_grad_norm.is_finite();
            let done = full_grad_norm <= cfg.grad_tol;
            if on_stride || bad || done {
                traj.push(Snapshot {
                    step: t,
                    point: Point::Factors(f.clone()),
                    loss,
                    grad_norm: full_grad_norm,
                });
            }
            if bad {
                status = Status::Diverged;
                break;
            }
            if done {
                status = Status::Converged;
                break;
            }
        }
        if let Some(obs) = observer.as_mut() {
            obs(&StepEvent {
                step: t,
                learning_rate: lr,
                factors: &f,
                loss_gradient: &grad_x,
                batch: batch.as_deref(),
            });
        }
        f.axpy(-lr, &grad);
        steps = t + 1;
        if !f.is_finite() {
            status = Status::Diverged;
            break;
        }
    }

    log::debug!("factored_gd stopped after {steps} steps: {status:?}");
    if status != Status::Converged {
        let (grad, _) = obj.factored_gradient(&f);
        traj.push(Snapshot {
            step: steps,
            point: Point::Factors(f.clone()),
            loss: obj.factored_value(&f),
            grad_norm: factor_gradient_norm(&grad),
        });
    }
    Ok(RunOutput {
        final_point: f,
        trajectory: traj,
        status,
        steps,
    })
}

/// Proximal gradient on `f(X) + λ‖X‖_*`:
/// `X ← prox_{μλ‖·‖_*}(X − μ ∇f(X))`, layer by layer.
///
/// Converges once `‖X_{t+1} − X_t‖_F ≤ grad_tol · μ_t`. The recorded gradient
/// norm is the gradient-mapping norm `‖X_{t+1} − X_t‖_F / μ_t`.
pub fn prox_gradient(
    obj: &RegularizedObjective,
    init: &MatrixTuple,
    cfg: &RunConfig,
) -> Result<RunOutput<MatrixTuple>> {
    cfg.validate()?;
    if obj.form != RegularizedForm::Nuclear {
        return invalid("prox_gradient needs the nuclear form");
    }
    if !(cfg.learning_rate > 0.0) {
        return invalid("prox_gradient needs a positive learning rate");
    }
    check_decay(obj, cfg)?;
    init.ensure_shapes(obj.shapes(), "prox_gradient init")?;
    let mut sampler = batching(obj, cfg)?;
    let mut x = init.clone();
    let mut traj = Trajectory {
        stride: cfg.snapshot_stride,
        snapshots: Vec::new(),
    };
    let mut status = Status::MaxSteps;
    let mut steps = 0;
    let mut last_mapping = f64::NAN;

    for t in 0..cfg.max_steps {
        let lr = cfg.learning_rate_at(t).max(f64::MIN_POSITIVE);
        let grad = match sampler.as_mut() {
            None => obj.base.gradient(&x),
            Some(s) => {
                let batch = s.next_batch();
                obj.base
                    .batch_gradient(&x, &batch)
                    .ok_or_else(|| crate::Error::InvalidInput("batch gradient unavailable".into()))?
            }
        };
        let mut next_layers = Vec::with_capacity(x.len());
        let mut failed = !grad.is_finite();
        if !failed {
            for (xl, gl) in x.layers().iter().zip(grad.layers()) {
                let y = xl - gl * lr;
                match svt_prox(&y, lr * obj.lambda) {
                    Ok(p) => next_layers.push(p),
                    Err(_) => {
                        failed = true;
                        break;
                    }
                }
            }
        }
        let loss = obj.full_value(&x);
        if failed || !loss.is_finite() {
            traj.push(Snapshot {
                step: t,
                point: Point::Full(x.clone()),
                loss,
                grad_norm: f64::NAN,
            });
            status = Status::Diverged;
            break;
        }
        let next = MatrixTuple::from_layers_unchecked(next_layers);
        let moved = next.sub(&x).frobenius_norm();
        last_mapping = moved / lr;
        if t % cfg.snapshot_stride == 0 {
            traj.push(Snapshot {
                step: t,
                point: Point::Full(x.clone()),
                loss,
                grad_norm: last_mapping,
            });
        }
        x = next;
        steps = t + 1;
        if moved <= cfg.grad_tol * lr {
            status = Status::Converged;
            break;
        }
    }

    log::debug!("prox_gradient stopped after {steps} steps: {status:?}");
    if status != Status::Diverged {
        traj.push(Snapshot {
            step: steps,
            point: Point::Full(x.clone()),
            loss: obj.full_value(&x),
            grad_norm: last_mapping,
        });
    }
    Ok(RunOutput {
        final_point: x,
        trajectory: traj,
        status,
        steps,
    })
}
