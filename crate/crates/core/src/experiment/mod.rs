//! The ablation grid: seeded jobs on a worker pool, aggregation over
//! repeats, and the comparison tables.

pub mod output;
pub mod tables;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Flags, Hyper, TrainConfig};
use crate::data::{load_splits, synthetic_splits, SkewProtocol, Splits};
use crate::error::{Error, Result};
use crate::training::{train_run, RunReport};

pub use output::{load_runs, prepare_output_dir, write_grid, write_run, StoredRun};
pub use tables::{
    averaged_comparison, best_worst_csv, best_worst_table, confident_wrongs, confident_wrongs_csv, BestWorstRow,
    Comparison, ComparisonRow, ConfidentWrongRow,
};

/// A grid experiment as read from a JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridManifest {
    #[serde(default)]
    pub protocol: SkewProtocol,
    pub repeats: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub hyper: Hyper,
    pub configs: Vec<u8>,
    /// Directory with `train.fnd`/`val.fnd`/`test.fnd`; synthetic data from
    /// `protocol` and `base_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl GridManifest {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.configs.is_empty() {
            return Err(Error::Config("manifest lists no configs".into()));
        }
        for &id in &self.configs {
            Flags::from_config_id(id)?;
        }
        let mut sorted = self.configs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.configs.len() {
            return Err(Error::Config("manifest lists a config twice".into()));
        }
        self.hyper.validate()
    }

    pub fn prepare_splits(&self) -> Result<Splits> {
        match &self.data_dir {
            Some(dir) => load_splits(dir),
            None => synthetic_splits(&self.protocol, self.base_seed),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one grid cell: `base_seed ⊕ splitmix64(config_id·2³² + repeat)`.
pub fn run_seed(base_seed: u64, config_id: u8, repeat: usize) -> u64 {
    base_seed ^ splitmix64((u64::from(config_id) << 32) | repeat as u64)
}

/// One grid cell's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub config_id: u8,
    pub repeat: usize,
    pub seed: u64,
    pub result: std::result::Result<RunReport, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub repeat: usize,
    pub seed: u64,
    pub error: String,
}

/// Aggregates of one config over its successful repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config_id: u8,
    pub flags: Flags,
    pub runs: usize,
    pub failed: Vec<FailedRun>,
    /// Per-run minority-class test F1 at each run's best epoch.
    pub minority_f1: Vec<f64>,
    pub majority_f1: Vec<f64>,
    pub minority_f1_mean: Option<f64>,
    pub minority_f1_std: Option<f64>,
    pub majority_f1_mean: Option<f64>,
    pub majority_f1_std: Option<f64>,
    /// Minority-class test F1 after the last epoch, averaged.
    pub final_minority_f1_mean: Option<f64>,
    pub best_epochs: Vec<usize>,
    /// Most frequent best epoch (smallest on ties).
    pub best_epoch_mode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub base_seed: u64,
    pub repeats: usize,
    pub k: usize,
    pub configs: Vec<ConfigSummary>,
    /// Config ids of the top-k and bottom-k rows by mean minority F1.
    pub top: Vec<u8>,
    pub bottom: Vec<u8>,
    /// True when every top-k row has the final BN and no bottom-k row does.
    pub bn_pattern: bool,
    pub annotation: String,
    pub failed_runs: usize,
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample standard deviation; 0 for a single value.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

fn mode(values: &[usize]) -> Option<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, usize)> = None;
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, n)| chunk.len() > n) {
            best = Some((chunk[0], chunk.len()));
        }
    }
    best.map(|(v, _)| v)
}

/// Runs every `(config, repeat)` cell on `workers` threads. The result is
/// ordered by config (as listed) then repeat, independent of `workers`.
pub fn run_cells(
    configs: &[u8],
    repeats: usize,
    base_seed: u64,
    hyper: &Hyper,
    splits: &Splits,
    workers: usize,
) -> Result<Vec<GridRun>> {
    let jobs: Vec<(u8, usize)> = configs
        .iter()
        .flat_map(|&id| (0..repeats).map(move |r| (id, r)))
        .collect();
    let configs: Vec<TrainConfig> = jobs
        .iter()
        .map(|&(id, _)| Ok(TrainConfig::new(Flags::from_config_id(id)?, hyper.clone())))
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .zip(&configs)
            .map(|(&(config_id, repeat), cfg)| {
                let seed = run_seed(base_seed, config_id, repeat);
                GridRun {
                    config_id,
                    repeat,
                    seed,
                    result: train_run(cfg, splits, seed).map_err(|e| e.to_string()),
                }
            })
            .collect()
    }))
}

/// Aggregates runs into per-config rows and rankings.
pub fn summarize(runs: &[GridRun], base_seed: u64, repeats: usize, k: usize) -> Result<GridSummary> {
    let mut ids: Vec<u8> = runs.iter().map(|r| r.config_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut configs = Vec::with_capacity(ids.len());
    for id in ids {
        let mut row = ConfigSummary {
            config_id: id,
            flags: Flags::from_config_id(id)?,
            runs: 0,
            failed: Vec::new(),
            minority_f1: Vec::new(),
            majority_f1: Vec::new(),
            minority_f1_mean: None,
            minority_f1_std: None,
            majority_f1_mean: None,
            majority_f1_std: None,
            final_minority_f1_mean: None,
            best_epochs: Vec::new(),
            best_epoch_mode: None,
        };
        let mut final_f1 = Vec::new();
        let mut cell: Vec<&GridRun> = runs.iter().filter(|r| r.config_id == id).collect();
        cell.sort_by_key(|r| r.repeat);
        for run in cell {
            row.runs += 1;
            match &run.result {
                Err(error) => row.failed.push(FailedRun {
                    repeat: run.repeat,
                    seed: run.seed,
                    error: error.clone(),
                }),
                Ok(report) => {
                    if let (Some(best), Some(epoch)) = (report.best_test(), report.best_epoch) {
                        row.minority_f1.push(best.class1.f1);
                        row.majority_f1.push(best.class0.f1);
                        row.best_epochs.push(epoch);
                    }
                    if let Some(last) = report.final_test() {
                        final_f1.push(last.class1.f1);
                    }
                }
            }
        }
        row.minority_f1_mean = mean(&row.minority_f1);
        row.minority_f1_std = std_dev(&row.minority_f1);
        row.majority_f1_mean = mean(&row.majority_f1);
        row.majority_f1_std = std_dev(&row.majority_f1);
        row.final_minority_f1_mean = mean(&final_f1);
        row.best_epoch_mode = mode(&row.best_epochs);
        configs.push(row);
    }

    let (top, bottom) = top_bottom(&configs, k);
    let k_eff = top.len();
    let has_bn = |id: &u8| id & 32 != 0;
    let bn_pattern = !top.is_empty() && top.iter().all(has_bn) && !bottom.iter().any(has_bn);
    let annotation = if bn_pattern {
        format!("all top-{k_eff} configs use the final BN and none of the bottom-{k_eff} do")
    } else {
        format!("top-{k_eff}/bottom-{k_eff} split does not follow the final BN flag")
    };
    let failed_runs = configs.iter().map(|c| c.failed.len()).sum();
    Ok(GridSummary {
        base_seed,
        repeats,
        k,
        configs,
        top,
        bottom,
        bn_pattern,
        annotation,
        failed_runs,
    })
}

/// Top-k ids (best first) and bottom-k ids (worst first) among configs with
/// at least one successful run. Equal means rank the lower id first.
pub fn top_bottom(configs: &[ConfigSummary], k: usize) -> (Vec<u8>, Vec<u8>) {
    let mut scored: Vec<(u8, f64)> = configs
        .iter()
        .filter_map(|c| c.minority_f1_mean.map(|m| (c.config_id, m)))
        .collect();
    let k = k.min(scored.len());
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let top = scored[..k].iter().map(|s| s.0).collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let bottom = scored[..k].iter().map(|s| s.0).collect();
    (top, bottom)
}

/// Every run plus its summary.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub runs: Vec<GridRun>,
    pub summary: GridSummary,
}

impl GridOutcome {
    pub fn all_failed(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_err())
    }
}

pub fn run_grid(manifest: &GridManifest, splits: &Splits, workers: usize, k: usize) -> Result<GridOutcome> {
    manifest.validate()?;
    let runs = run_cells(
        &manifest.configs,
        manifest.repeats,
        manifest.base_seed,
        &manifest.hyper,
        splits,
        workers,
    )?;
    let summary = summarize(&runs, manifest.base_seed, manifest.repeats, k)?;
    Ok(GridOutcome { runs, summary })
}
