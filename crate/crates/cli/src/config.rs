//! TOML experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lorascape::constants::{BetaSearch, RankMode};
use lorascape::dynamics::Convention;
use lorascape::matcore::absolute_rank;
use lorascape::objectives::{
    load_dataset_csv, matrix_sensing_objective, mlp_objective, planted_spurious_quadratic, quadratic_objective,
    synthetic_dataset, Objective, PlantedInstance, QuadraticObjective, TunedLayer,
};
use lorascape::optim::{InitPreset, InitScheme, RunConfig};
use lorascape::{rng, MatrixTuple};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SolveFull,
    SolveLora,
    EstimateConstants,
    Classify,
    SweepLambda,
    SweepInit,
    RankDynamics,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SolveFull => "solve_full",
            Self::SolveLora => "solve_lora",
            Self::EstimateConstants => "estimate_constants",
            Self::Classify => "classify",
            Self::SweepLambda => "sweep_lambda",
            Self::SweepInit => "sweep_init",
            Self::RankDynamics => "rank_dynamics",
        }
    }
}

/// Single-layer objective generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½⟨X − M, H(X − M)⟩`. The Hessian spectrum is `spectrum`, or evenly
    /// spaced on `spectrum_range`, or all ones. The target `M` has the given
    /// singular values, or is a Gaussian product of rank `target_rank`.
    Quadratic {
        shape: [usize; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum_range: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_singulars: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_rank: Option<usize>,
        seed: u64,
    },
    /// The 3×3 instance with a certified spurious point at rank 2.
    Planted,
    Sensing {
        measurements: usize,
        shape: [usize; 2],
        planted_rank: usize,
        seed: u64,
    },
    /// Two-layer tanh network; `dataset` is a CSV with `x_i`, `y_i` columns,
    /// otherwise `samples` Gaussian examples are drawn.
    Mlp {
        widths: [usize; 3],
        tuned_layer: TunedLayerSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunedLayerSpec {
    Hidden,
    Output,
}

/// A built objective plus whatever closed-form knowledge it comes with.
pub struct BuiltObjective {
    pub base: Arc<dyn Objective>,
    pub quadratic: Option<QuadraticObjective>,
    pub planted: Option<PlantedInstance>,
    /// Target of an identity-Hessian quadratic, whose regularized minimizer
    /// is singular value thresholding of the target.
    pub isotropic_target: Option<DMatrix<f64>>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn lib_config(e: lorascape::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl ObjectiveSpec {
    pub fn build(&self, base_dir: &Path) -> Result<BuiltObjective, CliError> {
        match self {
            ObjectiveSpec::Quadratic {
                shape,
                spectrum,
                spectrum_range,
                target_singulars,
                target_rank,
                seed,
            } => {
                let [m, n] = *shape;
                if m == 0 || n == 0 {
                    return Err(config_err("quadratic shape must be positive"));
                }
                let p = m * n;
                let spec = match (spectrum, spectrum_range) {
                    (Some(_), Some(_)) => return Err(config_err("give spectrum or spectrum_range, not both")),
                    (Some(s), None) => s.clone(),
                    (None, Some([lo, hi])) => {
                        if p == 1 {
                            vec![*lo]
                        } else {
                            (0..p).map(|i| lo + (hi - lo) * i as f64 / (p - 1) as f64).collect()
                        }
                    }
                    (None, None) => vec![1.0; p],
                };
                let mut g = rng::seeded(rng::mix(*seed, 1));
                let target = match (target_singulars, target_rank) {
                    (Some(_), Some(_)) => {
                        return Err(config_err("give target_singulars or target_rank, not both"))
                    }
                    (Some(s), None) => {
                        if s.len() > m.min(n) {
                            return Err(config_err("more target singular values than min(shape)"));
                        }
                        let u = rng::orthonormal_columns(&mut g, m, m.min(n));
                        let v = rng::orthonormal_columns(&mut g, n, m.min(n));
                        let mut d = vec![0.0; m.min(n)];
                        d[..s.len()].copy_from_slice(s);
                        u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * v.transpose()
                    }
                    (None, Some(k)) => {
                        if *k > m.min(n) {
                            return Err(config_err("target_rank exceeds min(shape)"));
                        }
                        rng::gaussian_matrix(&mut g, m, *k) * rng::gaussian_matrix(&mut g, *k, n)
                            / (*k.max(&1) as f64).sqrt()
                    }
                    (None, None) => return Err(config_err("quadratic needs target_singulars or target_rank")),
                };
                let isotropic = spec.iter().all(|s| *s == 1.0);
                let q = quadratic_objective(&spec, MatrixTuple::single(target.clone()).map_err(lib_config)?, *seed)
                    .map_err(lib_config)?;
                Ok(BuiltObjective {
                    base: Arc::new(q.clone()),
                    quadratic: Some(q),
                    planted: None,
                    isotropic_target: isotropic.then_some(target),
                })
            }
            ObjectiveSpec::Planted => {
                let p = planted_spurious_quadratic().map_err(lib_config)?;
                Ok(BuiltObjective {
                    base: Arc::new(p.objective.clone()),
                    quadratic: Some(p.objective.clone()),
                    planted: Some(p),
                    isotropic_target: None,
                })
            }
            ObjectiveSpec::Sensing {
                measurements,
                shape,
                planted_rank,
                seed,
            } => {
                let f = matrix_sensing_objective(*measurements, (shape[0], shape[1]), *planted_rank, *seed)
                    .map_err(lib_config)?;
                Ok(BuiltObjective {
                    base: Arc::new(f),
                    quadratic: None,
                    planted: None,
                    isotropic_target: None,
                })
            }
            ObjectiveSpec::Mlp {
                widths,
                tuned_layer,
                samples,
                dataset,
                seed,
            } => {
                let [d_in, d_hidden, d_out] = *widths;
                let data = match (dataset, samples) {
                    (Some(path), None) => {
                        let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                        load_dataset_csv(&path, d_in, d_out).map_err(lib_config)?
                    }
                    (None, Some(n)) => synthetic_dataset(*n, d_in, d_out, rng::mix(*seed, 2)).map_err(lib_config)?,
                    _ => return Err(config_err("mlp needs exactly one of dataset or samples")),
                };
                let tuned = match tuned_layer {
                    TunedLayerSpec::Hidden => TunedLayer::Hidden,
                    TunedLayerSpec::Output => TunedLayer::Output,
                };
                let f = mlp_objective((d_in, d_hidden, d_out), data, tuned, *seed).map_err(lib_config)?;
                Ok(BuiltObjective {
                    base: Arc::new(f),
                    quadratic: None,
                    planted: None,
                    isotropic_target: None,
                })
            }
        }
    }
}

/// An initialization, either named or spelled out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Preset { preset: InitPreset, seed: u64 },
    Scheme(InitScheme),
}

impl InitSpec {
    pub fn scheme(&self) -> InitScheme {
        match self {
            InitSpec::Preset { preset, seed } => InitScheme::preset(*preset, *seed),
            InitSpec::Scheme(s) => s.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InitSpec::Preset { preset, seed } => {
                let name = serde_json::to_value(preset).ok().and_then(|v| v.as_str().map(String::from));
                format!("{}#{seed}", name.unwrap_or_default())
            }
            InitSpec::Scheme(s) => match s.kind {
                lorascape::optim::InitKind::ZeroB { c } => format!("zero_b(c={c})#{}", s.seed),
                lorascape::optim::InitKind::Gaussian {
                    mean_a,
                    std_a,
                    mean_b,
                    std_b,
                } => format!("gaussian({mean_a},{std_a},{mean_b},{std_b})#{}", s.seed),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSourceSpec {
    /// Analytic for quadratics, Monte Carlo otherwise.
    #[default]
    Auto,
    Analytic,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSpec {
    pub source: ConstantsSourceSpec,
    pub samples: usize,
    pub rank_mode: RankMode,
    pub inner_trials: usize,
    pub ascent_steps: usize,
    /// Rank bounds for a constants sweep; empty means just `r`.
    pub ranks: Vec<usize>,
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        let b = BetaSearch::default();
        Self {
            source: ConstantsSourceSpec::Auto,
            samples: 200,
            rank_mode: RankMode::Restricted,
            inner_trials: b.inner_trials,
            ascent_steps: b.ascent_steps,
            ranks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSpec {
    /// Per-step gradient rank bound; also the batch size of the run.
    pub b: usize,
    pub epsilons: Vec<f64>,
    pub conventions: Vec<Convention>,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            b: 1,
            epsilons: vec![0.5, 0.1],
            conventions: vec![Convention::Proof, Convention::Statement],
        }
    }
}

/// Tolerances of the stationarity certificate; unset fields use the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SospSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hess_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eig_iters: Option<usize>,
}

/// Settings of every proximal-gradient solve: `solve_full`, each
/// `sweep_lambda` point and the reference minimizers used for classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxSpec {
    /// Defaults to `1/β` for quadratics and to the solver rate otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl Default for ProxSpec {
    fn default() -> Self {
        Self {
            learning_rate: None,
            max_steps: 200_000,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub solver: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inits: Vec<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_star: Option<usize>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub constants: ConstantsSpec,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub sosp: SospSpec,
    #[serde(default)]
    pub prox: ProxSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outdir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML used for hashing and for the copy in the output directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Effective regularization strength: `lambda`, else the planted
    /// instance's own, else the solver's weight decay.
    pub fn effective_lambda(&self, built: &BuiltObjective) -> f64 {
        self.lambda
            .or(built.planted.as_ref().map(|p| p.lambda))
            .unwrap_or(self.solver.weight_decay)
    }

    pub fn rank(&self, built: &BuiltObjective) -> Option<usize> {
        self.r.or(built.planted.as_ref().map(|p| p.rank))
    }

    /// `r⋆` from the config, the planted instance, or the exact rank of the
    /// reference minimizer.
    pub fn rank_star(&self, built: &BuiltObjective, reference: &MatrixTuple) -> usize {
        self.r_star
            .or(built.planted.as_ref().map(|p| p.rank_star))
            .unwrap_or_else(|| {
                reference
                    .layers()
                    .iter()
                    .map(|l| absolute_rank(l, 1e-8 * (1.0 + l.norm())))
                    .max()
                    .unwrap_or(0)
                    .max(1)
            })
    }

    pub fn inits_or_default(&self) -> Vec<InitSpec> {
        if self.inits.is_empty() {
            vec![InitSpec::Preset {
                preset: InitPreset::ZeroB,
                seed: self.seed,
            }]
        } else {
            self.inits.clone()
        }
    }

    /// Checks that do not need the objective.
    pub fn validate(&self, kind: ExperimentKind) -> Result<(), CliError> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(config_err(format!(
                    "config is for {}, but {} was requested",
                    k.as_str(),
                    kind.as_str()
                )));
            }
        }
        self.solver.validate().map_err(lib_config)?;
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(config_err("lambda must be finite and >= 0"));
            }
            if self.solver.weight_decay != 0.0 && self.solver.weight_decay != l {
                return Err(config_err("solver.weight_decay disagrees with lambda"));
            }
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(config_err("lambdas must be finite and >= 0"));
        }
        match kind {
            ExperimentKind::SweepLambda if self.lambdas.is_empty() => {
                return Err(config_err("sweep_lambda needs a nonempty lambdas grid"))
            }
            ExperimentKind::SweepInit if self.inits.is_empty() => {
                return Err(config_err("sweep_init needs a nonempty inits list"))
            }
            ExperimentKind::RankDynamics
                if self.dynamics.b == 0 || self.dynamics.epsilons.is_empty() || self.dynamics.conventions.is_empty() =>
            {
                return Err(config_err("dynamics needs b > 0 and nonempty epsilons and conventions"))
            }
            _ => {}
        }
        if self.r == Some(0) || self.r_star == Some(0) {
            return Err(config_err("r and r_star must be positive"));
        }
        if let (Some(r), Some(rs)) = (self.r, self.r_star) {
            if rs > r {
                return Err(config_err("r_star must not exceed r"));
            }
        }
        if self.radius.is_some_and(|d| !(d > 0.0)) {
            return Err(config_err("D must be positive"));
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) || self.delta.is_some_and(|d| !(d >= 0.0)) {
            return Err(config_err("epsilon must be > 0 and delta >= 0"));
        }
        let p = &self.prox;
        if p.learning_rate.is_some_and(|lr| !(lr > 0.0) || !lr.is_finite()) || p.max_steps == 0 || !(p.grad_tol > 0.0) {
            return Err(config_err("prox needs learning_rate > 0, max_steps > 0 and grad_tol > 0"));
        }
        if self.constants.samples == 0 {
            return Err(config_err("constants.samples must be positive"));
        }
        Ok(())
    }
}
