use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lorascape_cli::{run_file, ExperimentKind, RunOptions, DETERMINISTIC_ENV};

#[derive(Parser)]
#[command(name = "lorascape", version, about = "Low-rank factored training and landscape certification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root of the output tree; overrides the config's `outdir`.
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Proximal gradient on the nuclear-norm problem.
    SolveFull,
    /// Factored gradient descent from each init.
    SolveLora,
    /// Monte Carlo estimates of the restricted curvature constants.
    EstimateConstants,
    /// Certify and classify one factored endpoint.
    Classify,
    /// Minimizer rank over a grid of regularization strengths.
    SweepLambda,
    /// Factored runs from several inits, each certified and classified.
    SweepInit,
    /// Tail-mass checks along a minibatch weight-decayed run.
    RankDynamics,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::SolveFull => ExperimentKind::SolveFull,
            Command::SolveLora => ExperimentKind::SolveLora,
            Command::EstimateConstants => ExperimentKind::EstimateConstants,
            Command::Classify => ExperimentKind::Classify,
            Command::SweepLambda => ExperimentKind::SweepLambda,
            Command::SweepInit => ExperimentKind::SweepInit,
            Command::RankDynamics => ExperimentKind::RankDynamics,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let err = lorascape_cli::CliError::Config(e.to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let Some(config) = cli.config else {
        let err = lorascape_cli::CliError::Config("--config is required".into());
        eprintln!("{}", err.to_json());
        return ExitCode::from(2);
    };
    if std::env::var_os(DETERMINISTIC_ENV).is_some() {
        log::info!("{DETERMINISTIC_ENV} set");
    }
    let opts = RunOptions {
        outdir: cli.outdir,
        jobs: cli.jobs,
        seed: cli.seed,
        base_dir: None,
    };
    match run_file(cli.command.kind(), &config, &opts) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary is serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
