//! End-to-end runs of the experiment runner: output layout, determinism,
//! exit codes and the rank-versus-λ law.

use std::path::Path;
use std::process::Command;

use lorascape::matcore::{svt_prox, truncated_rank, REPORT_RANK_THRESHOLD};
use lorascape_cli::{run, CliError, ExperimentConfig, ExperimentKind, RunOptions};
use proptest::prelude::*;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_lorascape");

fn sweep_config(singulars: &[f64], lambdas: &[f64], seed: u64) -> String {
    format!(
        r#"
seed = {seed}
lambdas = {lambdas:?}

[objective]
generator = "quadratic"
shape = [5, 4]
target_singulars = {singulars:?}
seed = {seed}
"#
    )
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        outdir: Some(dir.to_path_buf()),
        jobs: Some(2),
        ..Default::default()
    }
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn ranks(rep: &Value) -> Vec<u64> {
    rep["rows"].as_array().unwrap().iter().map(|r| r["rank"].as_u64().unwrap()).collect()
}

#[test]
fn sweep_lambda_ranks_follow_svt_and_reach_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let sing = [3.0, 2.0, 1.0];
    let lambdas = [0.0, 0.5, 1.5, 2.5, 3.5];
    let cfg = ExperimentConfig::from_toml(&sweep_config(&sing, &lambdas, 4)).unwrap();
    let sum = run(ExperimentKind::SweepLambda, cfg, &opts(tmp.path())).unwrap();
    let rep = report(&sum.output_dir);
    assert_eq!(ranks(&rep), vec![3, 3, 2, 1, 0]);
    assert_eq!(rep["rank_nonincreasing"], Value::Bool(true));
    assert_eq!(rep["matches_svt"], Value::Bool(true));
    for name in ["config.toml", "trajectory.csv", "report.json", "sweep.csv"] {
        assert!(sum.output_dir.join(name).is_file(), "{name}");
    }
    assert_eq!(rep["config_hash"].as_str().unwrap(), sum.config_hash);
    assert_eq!(rep["seed"], 4);
    assert_eq!(rep["theory"]["source"], "analytic");
}

#[test]
fn zero_lambda_keeps_the_target_rank() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(&sweep_config(&[2.0, 1.0], &[0.0], 8)).unwrap();
    let sum = run(ExperimentKind::SweepLambda, cfg, &opts(tmp.path())).unwrap();
    assert_eq!(ranks(&report(&sum.output_dir)), vec![2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sweep_ranks_match_closed_form(seed in 0u64..1000, a in 0.5f64..4.0, b in 0.5f64..4.0, c in 0.5f64..4.0) {
        let mut sing = vec![a, b, c];
        sing.sort_by(|x, y| y.total_cmp(x));
        let lambdas = [0.0, 0.7, 1.9, 3.1, 4.5];
        let cfg = ExperimentConfig::from_toml(&sweep_config(&sing, &lambdas, seed)).unwrap();
        let built = cfg.objective.build(Path::new(".")).unwrap();
        let target = built.isotropic_target.unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let sum = run(ExperimentKind::SweepLambda, cfg, &opts(tmp.path())).unwrap();
        let got = ranks(&report(&sum.output_dir));
        let expect: Vec<u64> = lambdas
            .iter()
            .map(|&l| truncated_rank(&svt_prox(&target, l).unwrap(), REPORT_RANK_THRESHOLD).unwrap() as u64)
            .collect();
        prop_assert_eq!(&got, &expect);
        prop_assert!(got.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*got.last().unwrap(), 0);
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let text = r#"
seed = 3
r = 2

[objective]
generator = "sensing"
measurements = 30
shape = [4, 3]
planted_rank = 1
seed = 2

[solver]
learning_rate = 0.02
weight_decay = 0.05
max_steps = 3000
grad_tol = 1e-8
batch_size = 5
snapshot_stride = 50

[[inits]]
preset = "gaussian_medium"
seed = 1

[[inits]]
preset = "zero_b"
seed = 2

[[inits]]
preset = "gaussian_large"
seed = 3
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut one = opts(a.path());
    one.jobs = Some(1);
    let mut three = opts(b.path());
    three.jobs = Some(3);
    let sa = run(ExperimentKind::SolveLora, cfg.clone(), &one).unwrap();
    let sb = run(ExperimentKind::SolveLora, cfg, &three).unwrap();
    assert_eq!(sa.config_hash, sb.config_hash);
    assert_eq!(read_tree(&sa.output_dir), read_tree(&sb.output_dir));
    let traj = String::from_utf8(std::fs::read(sa.output_dir.join("trajectory.csv")).unwrap()).unwrap();
    assert!(traj.starts_with("run,step,loss,grad_norm,rank_0,frobenius_norm_0"));
    assert!(traj.lines().any(|l| l.starts_with("2,")));
}

#[test]
fn seed_override_changes_the_hash() {
    let text = sweep_config(&[1.0], &[0.0], 1);
    let tmp = tempfile::tempdir().unwrap();
    let a = run(ExperimentKind::SweepLambda, ExperimentConfig::from_toml(&text).unwrap(), &opts(tmp.path())).unwrap();
    let mut o = opts(tmp.path());
    o.seed = Some(99);
    let b = run(ExperimentKind::SweepLambda, ExperimentConfig::from_toml(&text).unwrap(), &o).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    assert_eq!(report(&b.output_dir)["seed"], 99);
}

#[test]
fn library_errors_are_classified() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = sweep_config(&[1.0], &[], 1);
    let cfg = ExperimentConfig::from_toml(&empty).unwrap();
    assert!(matches!(run(ExperimentKind::SweepLambda, cfg, &opts(tmp.path())), Err(CliError::Config(_))));
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn exec(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).env_remove("RUST_LOG").output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn binary_success_prints_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &sweep_config(&[2.0, 1.0], &[0.0, 1.5, 3.0], 2));
    let out = tmp.path().join("out");
    let (code, stdout, _) = exec(&["sweep-lambda", "--config", cfg.to_str().unwrap(), "--outdir", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let summary: Value = serde_json::from_str(stdout.trim()).unwrap();
    let dir = Path::new(summary["output_dir"].as_str().unwrap());
    assert!(dir.starts_with(out.join("sweep_lambda")));
    assert_eq!(ranks(&report(dir)), vec![2, 1, 0]);
}

#[test]
fn binary_config_errors_exit_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "seed = 1\n[objective]\ngenerator = \"nope\"\n".to_string(),
        "lambdas = [1.0]\n[objective]\ngenerator = \"planted\"\n".to_string(),
        format!("unknown_key = 1\n{}", sweep_config(&[1.0], &[0.0], 1)),
        sweep_config(&[1.0], &[-1.0], 1),
    ];
    for text in cases {
        let cfg = write_config(tmp.path(), &text);
        let (code, _, stderr) = exec(&["sweep-lambda", "--config", cfg.to_str().unwrap(), "--outdir", tmp.path().to_str().unwrap()]);
        assert_eq!(code, 2, "{text}: {stderr}");
        let err: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
        assert_eq!(err["error"], "config");
        assert_eq!(err["exit_code"], 2);
    }
    let (code, _, _) = exec(&["sweep-lambda"]);
    assert_eq!(code, 2);
}

#[test]
fn binary_runtime_errors_exit_3() {
    // The reference minimizer already has rank 2, so a rank-2 ball leaves
    // no room for restricted perturbations.
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
seed = 1
r = 2
D = 1.0

[objective]
generator = "quadratic"
shape = [2, 2]
spectrum = [1.0, 2.0, 3.0, 4.0]
target_singulars = [2.0, 1.0]
seed = 5
"#;
    let cfg = write_config(tmp.path(), text);
    let (code, _, stderr) = exec(&["estimate-constants", "--config", cfg.to_str().unwrap(), "--outdir", tmp.path().to_str().unwrap()]);
    assert_eq!(code, 3, "{stderr}");
    let err: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "runtime");
}

#[test]
fn diverged_runs_are_recorded_and_the_sweep_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
seed = 1

[objective]
generator = "planted"

[solver]
learning_rate = 0.5
weight_decay = 0.05
max_steps = 2000
grad_tol = 1e-9

[[inits]]
preset = "gaussian_small"
seed = 1

[[inits]]
kind = "gaussian"
mean_a = 0.0
std_a = 5.0
mean_b = 0.0
std_b = 5.0
seed = 2
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let sum = run(ExperimentKind::SweepInit, cfg, &opts(tmp.path())).unwrap();
    let rep = report(&sum.output_dir);
    let runs = rep["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().any(|r| r["status"] == "diverged"));
    assert_eq!(rep["summary"]["runs"], 2);
}
