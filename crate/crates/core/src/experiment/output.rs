//! On-disk layout: `<out>/<config_id>/<repeat>/{metrics.csv, trace.csv,
//! reliability.csv, report.json}` plus `summary.json` and `best_worst.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use super::tables::{best_worst_csv, best_worst_table};
use super::GridOutcome;
use crate::error::{Error, Result};
use crate::metrics::{metrics_csv, reliability_csv, trace_csv};
use crate::training::RunReport;

pub const SUMMARY_FILE: &str = "summary.json";
pub const BEST_WORST_FILE: &str = "best_worst.csv";

/// Writes the four per-run files into `dir`, creating it.
pub fn write_run(dir: impl AsRef<Path>, report: &RunReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&report.epochs))?;
    fs::write(dir.join("trace.csv"), trace_csv(&report.final_test_trace))?;
    let bins = report.calibration.as_ref().map_or(&[][..], |c| &c.bins[..]);
    fs::write(dir.join("reliability.csv"), reliability_csv(bins))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

fn grid_entries(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if !out.exists() {
        return Ok(found);
    }
    for entry in fs::read_dir(out)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let is_cell = path.is_dir() && name.parse::<u8>().is_ok();
        if is_cell || name == SUMMARY_FILE || name == BEST_WORST_FILE {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

/// Refuses to reuse a directory holding grid output unless `force`, in
/// which case only the grid's own files are removed.
pub fn prepare_output_dir(out: impl AsRef<Path>, force: bool) -> Result<()> {
    let out = out.as_ref();
    let existing = grid_entries(out)?;
    if !existing.is_empty() {
        if !force {
            return Err(Error::Config(format!(
                "{} already holds grid output; pass --force to overwrite",
                out.display()
            )));
        }
        for path in existing {
            if path.is_dir() {
                fs::remove_dir_all(path)?;
            } else {
                fs::remove_file(path)?;
            }
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

/// Writes every run, `summary.json` and `best_worst.csv`. Failed runs leave
/// an `error.txt` in their cell directory.
pub fn write_grid(out: impl AsRef<Path>, outcome: &GridOutcome) -> Result<()> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    for run in &outcome.runs {
        let dir = out.join(run.config_id.to_string()).join(run.repeat.to_string());
        match &run.result {
            Ok(report) => write_run(&dir, report)?,
            Err(e) => {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("error.txt"), format!("{e}\n"))?;
            }
        }
    }
    fs::write(
        out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&outcome.summary)? + "\n",
    )?;
    let rows = best_worst_table(&outcome.summary, outcome.summary.k);
    fs::write(out.join(BEST_WORST_FILE), best_worst_csv(&rows))?;
    Ok(())
}

/// A run loaded back from a grid directory.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub config_id: u8,
    pub repeat: usize,
    pub report: RunReport,
}

/// Reads every `<config_id>/<repeat>/report.json` under `dir`, ordered by
/// config then repeat.
pub fn load_runs(dir: impl AsRef<Path>) -> Result<Vec<StoredRun>> {
    let mut runs = Vec::new();
    for cell in grid_entries(dir.as_ref())? {
        let Some(config_id) = cell.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<u8>().ok()) else {
            continue;
        };
        if !cell.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&cell)? {
            let path = entry?.path();
            let Some(repeat) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<usize>().ok())
            else {
                continue;
            };
            let file = path.join("report.json");
            if !file.is_file() {
                continue;
            }
            let report: RunReport = serde_json::from_str(&fs::read_to_string(&file)?)
                .map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
            runs.push(StoredRun {
                config_id,
                repeat,
                report,
            });
        }
    }
    runs.sort_by_key(|r| (r.config_id, r.repeat));
    Ok(runs)
}
