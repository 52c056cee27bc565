//! Report tables: best/worst configs, the three-way averaged comparison
//! and the confident-wrongs listing.

use serde::{Deserialize, Serialize};

use super::{mean, run_cells, top_bottom, GridSummary};
use crate::config::{Flags, Hyper};
use crate::data::{Splits, MINORITY};
use crate::error::{Error, Result};
use crate::training::RunReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestWorstRow {
    /// `best` or `worst`.
    pub group: String,
    pub rank: usize,
    pub config_id: u8,
    pub flags: Flags,
    pub minority_f1: f64,
    /// Mean over datasets; a grid runs on one dataset, so this equals
    /// `minority_f1`.
    pub average: f64,
}

pub const BEST_WORST_HEADER: &str = "group,rank,config_id,BN,WL,DA,MX,UF,WD,minority_f1,average";

impl BestWorstRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.group,
            self.rank,
            self.config_id,
            self.flags.checkmarks().join(","),
            self.minority_f1,
            self.average
        )
    }
}

/// Top-k then bottom-k configs by mean minority F1 (2k rows; a config may
/// appear in both groups when fewer than 2k configs ran).
pub fn best_worst_table(summary: &GridSummary, k: usize) -> Vec<BestWorstRow> {
    let (top, bottom) = top_bottom(&summary.configs, k);
    let row = |group: &str, rank: usize, id: u8| {
        let c = summary
            .configs
            .iter()
            .find(|c| c.config_id == id)
            .expect("ranked ids come from the summary");
        let f1 = c.minority_f1_mean.unwrap_or(f64::NAN);
        BestWorstRow {
            group: group.into(),
            rank,
            config_id: id,
            flags: c.flags,
            minority_f1: f1,
            average: f1,
        }
    };
    top.iter()
        .enumerate()
        .map(|(i, &id)| row("best", i + 1, id))
        .chain(bottom.iter().enumerate().map(|(i, &id)| row("worst", i + 1, id)))
        .collect()
}

pub fn best_worst_csv(rows: &[BestWorstRow]) -> String {
    let mut out = String::from(BEST_WORST_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// One class row of the no-BN / WL-only / BN-only comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub class: usize,
    pub without_bn: f64,
    pub wl_only: f64,
    pub bn_only: f64,
    /// `bn_only − wl_only`.
    pub bn_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs_per_config: [usize; 3],
    /// Minority class first.
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_CONFIGS: [u8; 3] = [0, 16, 32];
pub const COMPARISON_HEADER: &str = "class,without_bn,wl_only,bn_only,bn_improvement";

impl Comparison {
    /// Averages final-epoch test F1 of configs 0, 16 and 32 over their runs.
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a RunReport>) -> Result<Self> {
        let mut f1: [[Vec<f64>; 2]; 3] = Default::default();
        for report in reports {
            let Some(slot) = COMPARISON_CONFIGS.iter().position(|&c| c == report.config_id) else {
                continue;
            };
            if let Some(last) = report.final_test() {
                f1[slot][0].push(last.class0.f1);
                f1[slot][1].push(last.class1.f1);
            }
        }
        for (slot, id) in COMPARISON_CONFIGS.iter().enumerate() {
            if f1[slot][0].is_empty() {
                return Err(Error::Config(format!("no completed runs of config {id}")));
            }
        }
        let rows = [MINORITY, 1 - MINORITY]
            .into_iter()
            .map(|class| {
                let m = |slot: usize| mean(&f1[slot][class]).expect("checked non-empty");
                let (without_bn, wl_only, bn_only) = (m(0), m(1), m(2));
                ComparisonRow {
                    class,
                    without_bn,
                    wl_only,
                    bn_only,
                    bn_improvement: bn_only - wl_only,
                }
            })
            .collect();
        Ok(Self {
            runs_per_config: [0, 1, 2].map(|s| f1[s][0].len()),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISON_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.class, r.without_bn, r.wl_only, r.bn_only, r.bn_improvement
            ));
        }
        out
    }
}

/// Trains configs 0, 16 and 32 for `repeats` seeds and compares them.
pub fn averaged_comparison(
    splits: &Splits,
    hyper: &Hyper,
    repeats: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Comparison> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let runs = run_cells(&COMPARISON_CONFIGS, repeats, base_seed, hyper, splits, workers)?;
    let reports = runs
        .into_iter()
        .map(|r| {
            r.result
                .map_err(|e| Error::Config(format!("config {} repeat {}: {e}", r.config_id, r.repeat)))
        })
        .collect::<Result<Vec<_>>>()?;
    Comparison::from_reports(&reports)
}

/// Minority test samples of two runs, each sorted by `p_class1` ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentWrongRow {
    pub rank: usize,
    pub left_sample: Option<usize>,
    pub left_p_class1: Option<f64>,
    pub right_sample: Option<usize>,
    pub right_p_class1: Option<f64>,
}

pub const CONFIDENT_WRONGS_HEADER: &str = "rank,left_sample,left_p_class1,right_sample,right_p_class1";

fn minority_sorted(report: &RunReport) -> Vec<(usize, f64)> {
    let mut rows: Vec<(usize, f64)> = report
        .final_test_trace
        .iter()
        .filter(|r| r.ground_truth == MINORITY)
        .map(|r| (r.sample_index, r.p_class1))
        .collect();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    rows
}

pub fn confident_wrongs(left: &RunReport, right: &RunReport, limit: Option<usize>) -> Vec<ConfidentWrongRow> {
    let (l, r) = (minority_sorted(left), minority_sorted(right));
    let n = l.len().max(r.len()).min(limit.unwrap_or(usize::MAX));
    (0..n)
        .map(|i| ConfidentWrongRow {
            rank: i + 1,
            left_sample: l.get(i).map(|x| x.0),
            left_p_class1: l.get(i).map(|x| x.1),
            right_sample: r.get(i).map(|x| x.0),
            right_p_class1: r.get(i).map(|x| x.1),
        })
        .collect()
}

pub fn confident_wrongs_csv(rows: &[ConfidentWrongRow]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut out = String::from(CONFIDENT_WRONGS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rank,
            opt(r.left_sample.map(|v| v.to_string())),
            opt(r.left_p_class1.map(|v| v.to_string())),
            opt(r.right_sample.map(|v| v.to_string())),
            opt(r.right_p_class1.map(|v| v.to_string())),
        ));
    }
    out
}
