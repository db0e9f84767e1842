//! Run orchestration: configuration, file formats and the operations behind
//! each CLI subcommand. Every operation computes its results in memory and
//! only writes files once the whole run has succeeded.

pub mod config;
pub mod io;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{ChannelConfig, RunConfig, SimulatorConfig, SysidConfig};
pub use report::{
    run_compare, run_estimate, Comparison, ReferenceKind, RunReport, StoredReport, Summary,
};

use crate::batch::{self, Execution};
use crate::error::{Error, Result};
use crate::sim::{degrade, simulate, SimRun};
use crate::sysid::{fit_step_response_with, FitResult};

pub const SENSOR_FILE: &str = "sensor.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const GAPS_FILE: &str = "gaps.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const FIT_FILE: &str = "fit.toml";
pub const COMPARISON_FILE: &str = "comparison.toml";
pub const DELTAS_FILE: &str = "deltas.csv";

// Keeps the dropout draws independent of the sensor-noise draws.
const DROPOUT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml(&io::read_text(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in files {
        io::write_text(&dir.join(name), text)?;
    }
    Ok(())
}

/// Simulates the configured scenario with `seed` (applying GPS dropout if
/// configured).
pub fn simulate_run(config: &RunConfig, seed: u64) -> Result<SimRun> {
    config.validate()?;
    let run = simulate(&config.scenario(), seed)?;
    if config.simulator.dropout_prob > 0.0 {
        degrade(&run, config.simulator.dropout_prob, seed ^ DROPOUT_SEED_SALT)
    } else {
        Ok(run)
    }
}

/// Writes `sensor.csv`, `truth.csv` and, after dropout, `gaps.csv`.
pub fn simulate_to_dir(config: &RunConfig, seed: u64, dir: &Path) -> Result<SimRun> {
    let run = simulate_run(config, seed)?;
    let mut files = vec![
        (SENSOR_FILE, io::format_sensor_log(&run.records)),
        (TRUTH_FILE, io::format_truth(&io::truth_rows(&run))),
    ];
    if config.simulator.dropout_prob > 0.0 {
        files.push((GAPS_FILE, io::format_gaps(&run.gaps)));
    }
    write_outputs(dir, &files)?;
    Ok(run)
}

/// Writes `report.csv`, `trajectory.csv` and `summary.toml`.
pub fn estimate_to_dir(
    config: &RunConfig,
    input: &Path,
    truth: Option<&Path>,
    dir: &Path,
) -> Result<RunReport> {
    let log = io::read_sensor_log(input)?;
    let truth = truth.map(io::read_truth).transpose()?;
    let report = run_estimate(config, &log, truth.as_deref())?;
    write_outputs(
        dir,
        &[
            (REPORT_FILE, report.report_csv()),
            (TRAJECTORY_FILE, report.trajectory_csv()),
            (SUMMARY_FILE, report.summary.to_toml()),
        ],
    )?;
    Ok(report)
}

/// Writes the dead-reckoned path of a sensor log to `trajectory.csv`.
pub fn reconstruct_to_dir(config: &RunConfig, input: &Path, dir: &Path) -> Result<()> {
    config.validate()?;
    let log = io::read_sensor_log(input)?;
    let points = report::reconstruct_log(&log, config.reconstruction)?;
    write_outputs(dir, &[(TRAJECTORY_FILE, report::format_reconstruction(&points))])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FitEntry {
    source: String,
    inertia: f64,
    drag: f64,
    input_scale: f64,
    residual_rms: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct FitFile {
    fit: Vec<FitEntry>,
}

/// Fits every step-response file (in parallel) and writes `fit.toml`.
pub fn sysid_to_dir(
    config: &RunConfig,
    inputs: &[PathBuf],
    dir: &Path,
    exec: Execution,
) -> Result<Vec<FitResult>> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no step-response files given".into()));
    }
    let opts = config.sysid.options();
    let fits = batch::try_map(inputs, exec, |p| {
        fit_step_response_with(&io::read_step_series(p)?, &opts)
    })?;
    let entries = inputs
        .iter()
        .zip(&fits)
        .map(|(p, f)| FitEntry {
            source: p
                .file_name()
                .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
            inertia: f.params.inertia,
            drag: f.params.drag,
            input_scale: f.params.input_scale,
            residual_rms: f.residual_rms,
            iterations: f.iterations,
            converged: f.converged,
        })
        .collect();
    let text = toml::to_string(&FitFile { fit: entries }).expect("fits are serializable");
    write_outputs(dir, &[(FIT_FILE, text)])?;
    Ok(fits)
}

/// Reads `report.csv` and `summary.toml` from an estimate output directory.
pub fn load_report(dir: &Path) -> Result<StoredReport> {
    let rpath = dir.join(REPORT_FILE);
    let spath = dir.join(SUMMARY_FILE);
    let rows = report::parse_report_rows(&io::read_text(&rpath)?, &rpath)?;
    let summary = Summary::from_toml(&io::read_text(&spath)?, &spath)?;
    Ok(StoredReport { rows, summary })
}

/// Compares two estimate output directories; writes `comparison.toml` and
/// `deltas.csv`.
pub fn compare_to_dir(a: &Path, b: &Path, dir: &Path) -> Result<Comparison> {
    let cmp = run_compare(&load_report(a)?, &load_report(b)?)?;
    write_outputs(
        dir,
        &[
            (COMPARISON_FILE, cmp.to_toml()),
            (DELTAS_FILE, cmp.deltas_csv()),
        ],
    )?;
    Ok(cmp)
}
