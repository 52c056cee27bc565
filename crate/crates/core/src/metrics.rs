//! Per-class classification metrics, softmax traces and calibration
//! (Brier score, expected calibration error, reliability bins).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 10;

/// Argmax over a probability or logit row; ties go to the lower class.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predictions<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let cols = probs.shape().get(1).copied().unwrap_or(0);
    if cols == 0 {
        return Vec::new();
    }
    probs.data().chunks_exact(cols).map(argmax).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    /// One-vs-rest counts treating `class` as positive.
    pub fn for_class(predicted: &[usize], labels: &[usize], class: usize) -> Self {
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p == class, y == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// F1 from precision and recall; `0` when both are `0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// `(precision, recall, f1)`, with every `0/0` taken as `0`.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let r = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    (p, r, f1_score(p, r))
}

fn check_probability_rows<T: Scalar>(probs: &Tensor<T>, labels: &[usize], op: &'static str) -> Result<usize> {
    probs.expect_rank(op, 2)?;
    let (m, c) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != m {
        return Err(Error::shape(op, &[labels.len()], probs.shape()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Config(format!("{op}: label {y} out of range")));
    }
    for i in 0..m {
        let s: f64 = probs.row(i).iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("{op}: row {i} sums to {s}, not 1")));
        }
    }
    Ok(c)
}

/// `(1/m)·Σ_i Σ_c (p_ic − onehot(y_i)_c)²`; ranges over `[0, 2]`.
pub fn brier_score<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let c = check_probability_rows(probs, labels, "brier_score")?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..c {
            let target = if j == y { 1.0 } else { 0.0 };
            total += (probs.at2(i, j).as_f64() - target).powi(2);
        }
    }
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub avg_confidence: f64,
    pub avg_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub brier: f64,
    pub ece: f64,
    pub mean_confidence: f64,
    pub bins: Vec<ReliabilityBin>,
}

/// Equal-width confidence binning over `[0, 1]` with max-probability
/// confidence; bin `b` holds `(b/n, (b+1)/n]` and the first bin also holds 0.
pub fn ece<T: Scalar>(probs: &Tensor<T>, labels: &[usize], n_bins: usize) -> Result<CalibrationReport> {
    check_probability_rows(probs, labels, "ece")?;
    if n_bins == 0 {
        return Err(Error::Config("ece needs at least one bin".into()));
    }
    let m = labels.len();
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let pred = argmax(row);
        let conf = row[pred].as_f64();
        let b = ((conf * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        conf_sum[b] += conf;
        correct[b] += usize::from(pred == y);
    }
    let mut ece = 0.0;
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let (avg_confidence, avg_accuracy) = if count[b] == 0 {
            (0.0, 0.0)
        } else {
            (conf_sum[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
        };
        if count[b] > 0 {
            ece += count[b] as f64 / m as f64 * (avg_accuracy - avg_confidence).abs();
        }
        bins.push(ReliabilityBin {
            lo: b as f64 / n_bins as f64,
            hi: (b + 1) as f64 / n_bins as f64,
            count: count[b],
            avg_confidence,
            avg_accuracy,
        });
    }
    let mean_confidence = if m == 0 {
        0.0
    } else {
        conf_sum.iter().sum::<f64>() / m as f64
    };
    Ok(CalibrationReport {
        brier: brier_score(probs, labels)?,
        ece,
        mean_confidence,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sample_index: usize,
    pub ground_truth: usize,
    pub p_class1: f64,
}

/// One row per sample, in evaluation order.
pub fn softmax_trace<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Vec<TraceRow> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| TraceRow {
            sample_index: i,
            ground_truth: y,
            p_class1: probs.at2(i, 1).as_f64(),
        })
        .collect()
}

/// Per-class metric triple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
    pub brier: f64,
    pub ece: f64,
    pub mean_confidence: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,split,loss,accuracy,precision0,recall0,f10,precision1,recall1,f11,brier,ece,mean_confidence";
pub const RELIABILITY_HEADER: &str = "bin_lo,bin_hi,count,avg_confidence,avg_accuracy";
pub const TRACE_HEADER: &str = "sample_index,ground_truth,p_class1";

impl EpochMetrics {
    /// Computes every column from probabilities, labels and a loss value.
    pub fn evaluate<T: Scalar>(
        epoch: usize,
        split: &str,
        loss: f64,
        probs: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(Self, CalibrationReport)> {
        let preds = predictions(probs);
        let per_class = |class| {
            let (precision, recall, f1) =
                precision_recall_f1(&ConfusionCounts::for_class(&preds, labels, class));
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        };
        let accuracy = ratio(
            preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64,
            labels.len() as f64,
        );
        let calibration = ece(probs, labels, DEFAULT_BINS)?;
        Ok((
            Self {
                epoch,
                split: split.to_string(),
                loss,
                accuracy,
                class0: per_class(0),
                class1: per_class(1),
                brier: calibration.brier,
                ece: calibration.ece,
                mean_confidence: calibration.mean_confidence,
            },
            calibration,
        ))
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.loss,
            self.accuracy,
            self.class0.precision,
            self.class0.recall,
            self.class0.f1,
            self.class1.precision,
            self.class1.recall,
            self.class1.f1,
            self.brier,
            self.ece,
            self.mean_confidence
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut out = String::from(RELIABILITY_HEADER);
    out.push('\n');
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.lo, b.hi, b.count, b.avg_confidence, b.avg_accuracy
        ));
    }
    out
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.sample_index, r.ground_truth, r.p_class1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn f1_from_reported_precision_recall() {
        assert!((f1_score(0.9856, 0.9133) - 0.9481).abs() < 5e-5);
    }

    #[test]
    fn perfect_classifier() {
        let c = ConfusionCounts {
            tp: 150,
            fp: 0,
            tn: 150,
            fn_: 0,
        };
        assert_eq!(precision_recall_f1(&c), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counts() {
        let c = ConfusionCounts {
            tp: 10,
            fp: 5,
            tn: 0,
            fn_: 10,
        };
        let (p, r, f) = precision_recall_f1(&c);
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert!((r - 0.5).abs() < 1e-12);
        assert!((f - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_counts_are_zero() {
        assert_eq!(precision_recall_f1(&ConfusionCounts::default()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn confusion_counts_partition_samples() {
        let c = ConfusionCounts::for_class(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1], 1);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
        assert_eq!(c.total(), 5);
    }

    #[test]
    fn brier_hand_values() {
        assert_eq!(brier_score(&probs(&[[1.0, 0.0], [0.0, 1.0]]), &[0, 1]).unwrap(), 0.0);
        assert_eq!(brier_score(&probs(&[[0.5, 0.5]]), &[0]).unwrap(), 0.5);
        assert_eq!(brier_score(&probs(&[[0.5, 0.5]]), &[1]).unwrap(), 0.5);
        assert!((brier_score(&probs(&[[0.2, 0.8]]), &[1]).unwrap() - 0.08).abs() < 1e-15);
    }

    #[test]
    fn brier_rejects_unnormalized_rows() {
        assert!(brier_score(&probs(&[[0.6, 0.6]]), &[0]).is_err());
    }

    #[test]
    fn ece_perfect_confident() {
        let r = ece(&probs(&[[1.0, 0.0], [0.0, 1.0]]), &[0, 1], 10).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins[9].count, 2);
    }

    #[test]
    fn ece_single_bin_hand_value() {
        let r = ece(&probs(&[[0.25, 0.75], [0.25, 0.75]]), &[1, 0], 10).unwrap();
        assert!((r.ece - 0.25).abs() < 1e-12);
        assert_eq!(r.bins[7].count, 2);
        assert!((r.bins[7].avg_accuracy - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ece_coin_flip_is_calibrated() {
        let r = ece(&probs(&[[0.5, 0.5], [0.5, 0.5]]), &[0, 1], 10).unwrap();
        assert!(r.ece.abs() < 1e-12);
        assert_eq!(r.bins[4].count, 2);
        assert!((r.mean_confidence - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bins_partition_unit_interval() {
        let r = ece(&probs(&[[0.3, 0.7]]), &[1], 10).unwrap();
        assert_eq!(r.bins.first().unwrap().lo, 0.0);
        assert_eq!(r.bins.last().unwrap().hi, 1.0);
        for w in r.bins.windows(2) {
            assert_eq!(w[0].hi, w[1].lo);
        }
    }

    #[test]
    fn ties_break_to_class_zero() {
        assert_eq!(predictions(&probs(&[[0.5, 0.5], [0.4, 0.6]])), vec![0, 1]);
    }

    #[test]
    fn trace_rows_follow_order() {
        let t = softmax_trace(&probs(&[[0.8918, 0.1082], [0.4892, 0.5108]]), &[1, 1]);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].sample_index, 0);
        assert!(t[0].p_class1 < 0.5 && t[0].ground_truth == 1);
        assert!(t[1].p_class1 > 0.5);
        assert!(softmax_trace(&Tensor::<f64>::zeros(&[0, 2]), &[]).is_empty());
    }

    #[test]
    fn epoch_metrics_columns() {
        let p = probs(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]);
        let (m, _) = EpochMetrics::evaluate(2, "test", 0.4, &p, &[0, 1, 1, 0]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.class1.precision, 0.5);
        assert_eq!(m.class1.recall, 0.5);
        assert_eq!(m.csv_row().split(',').count(), METRICS_HEADER.split(',').count());
    }

    proptest! {
        #[test]
        fn f1_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let (p, r, f) = precision_recall_f1(&ConfusionCounts { tp, fp, tn: 0, fn_ });
            prop_assert!(f <= 1.0);
            prop_assert!(f <= 2.0 * p.min(r) + 1e-12);
            prop_assert!(f <= (p + r) / 2.0 + 1e-12);
        }

        #[test]
        fn calibration_bounds(
            rows in proptest::collection::vec(0.0f64..=1.0, 1..40),
            seed in any::<u64>(),
        ) {
            let p = Tensor::from_rows(&rows.iter().map(|&q| vec![1.0 - q, q]).collect::<Vec<_>>()).unwrap();
            let labels: Vec<usize> = (0..rows.len()).map(|i| ((seed >> (i % 64)) & 1) as usize).collect();
            let r = ece(&p, &labels, 10).unwrap();
            prop_assert!((0.0..=2.0).contains(&r.brier));
            prop_assert!((0.0..=1.0).contains(&r.ece));
            prop_assert!((0.5..=1.0).contains(&r.mean_confidence));
            prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), rows.len());
            prop_assert_eq!(ece(&p, &labels, 10).unwrap(), r);
        }

        #[test]
        fn argmax_invariant_under_rescale_and_shift(
            a in -10.0f64..10.0, b in -10.0f64..10.0, scale in 0.01f64..100.0, shift in -50.0f64..50.0,
        ) {
            let base = crate::training::softmax(&probs(&[[a, b]])).unwrap();
            let moved = crate::training::softmax(&probs(&[[a * scale + shift, b * scale + shift]])).unwrap();
            prop_assert_eq!(predictions(&base), predictions(&moved));
        }
    }
}
