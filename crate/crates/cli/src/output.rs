//! CSV and JSON writers.

use std::fs::File;
use std::path::{Path, PathBuf};

use sensmpc::mpc::ClosedLoopRun;
use serde::Serialize;

use crate::scenario::Scenario;
use crate::{CliError, Result};

/// Full double precision (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One row per sampling instant: time, plant state, applied physical input.
pub fn write_trajectory(path: &Path, scenario: &Scenario, run: &ClosedLoopRun) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(scenario.state_names.iter().cloned());
    header.extend(scenario.input_names.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (k, (x, u)) in run.states.iter().zip(&run.inputs).enumerate() {
        let u = scenario.physical_input(u);
        let mut row = vec![fmt_f64(k as f64 * scenario.ts)];
        row.extend(x.iter().chain(u.iter()).map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const STEP_COLUMNS: [&str; 10] = [
    "k",
    "time",
    "corrector_iterations",
    "warm_residual",
    "residual",
    "constraint_violation",
    "predictor_fallback",
    "cold_restart",
    "predictor_time",
    "corrector_time",
];

/// One row per MPC step.
pub fn write_steps(path: &Path, scenario: &Scenario, run: &ClosedLoopRun) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(STEP_COLUMNS).map_err(csv_err(path))?;
    for log in &run.logs {
        w.write_record([
            log.k.to_string(),
            fmt_f64(log.k as f64 * scenario.ts),
            log.corrector_iterations.to_string(),
            fmt_f64(log.warm_residual),
            fmt_f64(log.residual),
            fmt_f64(log.constraint_violation),
            log.predictor_fallback.to_string(),
            log.cold_restart.to_string(),
            fmt_f64(log.predictor_time),
            fmt_f64(log.corrector_time),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Long-format `(time, series, value)` table with states, physical inputs,
/// per-step corrector iterations and per-step runtime.
pub fn emit_plot_data(path: &Path, scenario: &Scenario, run: &ClosedLoopRun) -> Result<()> {
    if run.logs.is_empty() {
        return Err(CliError::EmptyLog(run.warmstart.name().to_string()));
    }
    let mut w = writer(path)?;
    w.write_record(["time", "series", "value"])
        .map_err(csv_err(path))?;
    for (k, (x, u)) in run.states.iter().zip(&run.inputs).enumerate() {
        let t = fmt_f64(k as f64 * scenario.ts);
        let u = scenario.physical_input(u);
        let names = scenario.state_names.iter().chain(&scenario.input_names);
        for (name, v) in names.zip(x.iter().chain(u.iter())) {
            w.write_record([t.as_str(), name, &fmt_f64(*v)])
                .map_err(csv_err(path))?;
        }
    }
    for log in &run.logs {
        let t = fmt_f64(log.k as f64 * scenario.ts);
        w.write_record([
            t.as_str(),
            "iterations",
            &log.corrector_iterations.to_string(),
        ])
        .map_err(csv_err(path))?;
        w.write_record([
            t.as_str(),
            "runtime",
            &fmt_f64(log.predictor_time + log.corrector_time),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-mode summary. `total_corrector_iterations` is the column sum of the
/// steps file; the initial cold solve is reported on its own.
#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub steps: usize,
    pub total_corrector_iterations: usize,
    pub initial_iterations: usize,
    pub max_residual: f64,
    pub max_constraint_violation: f64,
    pub cold_restarts: usize,
    pub predictor_fallbacks: usize,
    pub aborted: Option<String>,
    pub runtime_seconds: f64,
    pub trajectory_file: PathBuf,
    pub steps_file: PathBuf,
    pub plot_file: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub sim_steps: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub modes: Vec<ModeSummary>,
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary is plain data");
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
