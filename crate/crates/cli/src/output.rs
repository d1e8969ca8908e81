//! Hashed output directories and CSV helpers.

use std::path::Path;

use lorascape::optim::Trajectory;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Everything an experiment produces besides the config copy.
pub struct Artifacts {
    pub report: Value,
    pub trajectory: Vec<u8>,
    /// Extra files `(name, bytes)` in the run directory.
    pub extra: Vec<(String, Vec<u8>)>,
}

/// First 16 hex digits of the SHA-256 of the canonical TOML.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    hex::encode(digest)[..16].to_string()
}

pub fn write(dir: &Path, cfg: &ExperimentConfig, hash: &str, art: Artifacts) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut report = Map::new();
    report.insert("experiment".into(), Value::from(cfg.experiment.map(|k| k.as_str())));
    report.insert("config_hash".into(), Value::from(hash));
    report.insert("seed".into(), Value::from(cfg.seed));
    match art.report {
        Value::Object(body) => report.extend(body),
        other => {
            report.insert("result".into(), other);
        }
    }
    let json = serde_json::to_string_pretty(&Value::Object(report))
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    std::fs::write(dir.join("trajectory.csv"), art.trajectory)?;
    for (name, bytes) in art.extra {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Concatenates trajectories into one CSV with a leading `run` column.
/// Runs without snapshots contribute no rows.
pub fn combined_trajectory_csv<'a>(runs: impl IntoIterator<Item = (usize, &'a Trajectory)>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header_written = false;
    for (run, traj) in runs {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(buf.as_slice());
        if !header_written {
            let h = r.headers().map_err(csv_err)?.clone();
            if !h.is_empty() && !traj.snapshots.is_empty() {
                let mut row = vec!["run".to_string()];
                row.extend(h.iter().map(String::from));
                w.write_record(&row).map_err(csv_err)?;
                header_written = true;
            }
        }
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let mut row = vec![run.to_string()];
            row.extend(rec.iter().map(String::from));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    if !header_written {
        w.write_record(["run", "step", "loss", "grad_norm"]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(format!("csv: {e}"))
}

/// Writes serializable rows as CSV with a header.
pub fn rows_csv<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}
