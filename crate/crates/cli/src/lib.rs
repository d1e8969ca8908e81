//! Experiment runner: reads a TOML config, runs one experiment kind and
//! writes `config.toml`, `trajectory.csv` and `report.json` (plus extra
//! tables) under `<outdir>/<experiment>/<config-hash>/`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind};

/// Environment variable that forces single-threaded execution.
pub const DETERMINISTIC_ENV: &str = "LORASCAPE_DETERMINISTIC";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> String {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        };
        serde_json::json!({
            "error": kind,
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl From<lorascape::Error> for CliError {
    fn from(e: lorascape::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub outdir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub experiment: &'static str,
    pub config_hash: String,
    pub output_dir: PathBuf,
}

pub const DEFAULT_OUTDIR: &str = "runs";

/// Number of worker threads: 1 in deterministic mode, else `--jobs` or all cores.
pub fn effective_jobs(requested: Option<usize>) -> usize {
    let forced = std::env::var(DETERMINISTIC_ENV)
        .map(|v| !v.is_empty() && v != "0" && !v.eq_ignore_ascii_case("false"))
        .unwrap_or(false);
    if forced {
        1
    } else {
        requested
            .filter(|j| *j > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// Validates `cfg` for `kind`, runs it and writes the output directory.
pub fn run(kind: ExperimentKind, mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate(kind)?;
    cfg.experiment = Some(kind);
    let outdir = opts
        .outdir
        .clone()
        .or_else(|| cfg.outdir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTDIR));
    cfg.outdir = None;
    let base_dir = opts.base_dir.clone().unwrap_or_else(|| Path::new(".").to_path_buf());
    let built = cfg.objective.build(&base_dir)?;
    let jobs = effective_jobs(opts.jobs);
    let hash = output::config_hash(&cfg);
    log::info!("running {} (config {hash}) with {jobs} job(s)", kind.as_str());
    let ctx = experiments::Context::new(&cfg, built, jobs)?;
    let artifacts = experiments::run(kind, &ctx)?;
    let dir = outdir.join(kind.as_str()).join(&hash);
    output::write(&dir, &cfg, &hash, artifacts)?;
    Ok(RunSummary {
        experiment: kind.as_str(),
        config_hash: hash,
        output_dir: dir,
    })
}

/// Loads `path` and runs it; relative paths in the config resolve against
/// the config's directory.
pub fn run_file(kind: ExperimentKind, path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    let mut opts = opts.clone();
    if opts.base_dir.is_none() {
        opts.base_dir = path.parent().map(Path::to_path_buf);
    }
    run(kind, cfg, &opts)
}
