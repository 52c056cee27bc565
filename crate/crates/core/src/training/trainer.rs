//! The epoch loop: shuffle, augment, optionally mix, step, then evaluate
//! every split in eval mode.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{one_hot, soft_weighted_cross_entropy, softmax, weighted_cross_entropy};
use super::mixup::{mixed_sample_weights, mixup_batch};
use super::optim::{lr_at, Sgd};
use crate::config::{Flags, Hyper, TrainConfig};
use crate::data::{augment, ClassCounts, DatasetSplit, LabeledImage, Splits};
use crate::error::{Error, Result};
use crate::layers::{Mode, Model};
use crate::metrics::{softmax_trace, CalibrationReport, EpochMetrics, TraceRow};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 256;

/// Everything one training run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_id: u8,
    pub flags: Flags,
    pub hyper: Hyper,
    pub seed: u64,
    pub class_weights: [f64; 2],
    /// Three rows per epoch (train, val, test) when the split is non-empty.
    pub epochs: Vec<EpochMetrics>,
    /// Epoch with the highest minority-class test F1 (earliest on ties).
    pub best_epoch: Option<usize>,
    pub final_test_trace: Vec<TraceRow>,
    /// Test-set calibration at `best_epoch`.
    pub calibration: Option<CalibrationReport>,
}

impl RunReport {
    pub fn split_rows<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a EpochMetrics> + 'a {
        self.epochs.iter().filter(move |m| m.split == split)
    }

    /// Test metrics at the best epoch.
    pub fn best_test(&self) -> Option<&EpochMetrics> {
        let best = self.best_epoch?;
        self.split_rows("test").find(|m| m.epoch == best)
    }

    /// Test metrics of the last epoch.
    pub fn final_test(&self) -> Option<&EpochMetrics> {
        self.split_rows("test").last()
    }
}

/// `w_c = N/(2·N_c)`; a class absent from training gets weight 1.
pub fn inverse_frequency_weights(counts: ClassCounts) -> [f64; 2] {
    let total = counts.total() as f64;
    let w = |n: usize| if n == 0 { 1.0 } else { total / (2.0 * n as f64) };
    [w(counts.majority), w(counts.minority)]
}

/// Batch boundaries for `n` samples; a trailing single-sample batch is
/// dropped because train-mode BN needs two rows.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        if end - start >= 2 {
            out.push(start..end);
        }
        start = end;
    }
    out
}

fn to_scalar<T: Scalar>(x: &Tensor<f64>) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| T::lit(v)).collect())
        .expect("same shape")
}

/// A trained model and its report.
pub struct TrainedRun<T> {
    pub model: Model<T>,
    pub report: RunReport,
}

pub fn train_run(config: &TrainConfig, splits: &Splits, seed: u64) -> Result<RunReport> {
    Ok(train_model::<f64>(config, splits, seed)?.report)
}

/// Trains one configuration from scratch. `(config, splits, seed)` fully
/// determine the result.
pub fn train_model<T: Scalar>(config: &TrainConfig, splits: &Splits, seed: u64) -> Result<TrainedRun<T>> {
    config.hyper.validate()?;
    let flags = config.flags;
    let optim = &config.hyper.optim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<T>::new(&config.model_spec(), rng.next_u64())?;
    model.set_bn_frozen(!flags.unfreeze_bn);

    let class_weights = if flags.weighted_loss {
        inverse_frequency_weights(splits.train.counts())
    } else {
        [1.0, 1.0]
    };
    let weights_t = [T::lit(class_weights[0]), T::lit(class_weights[1])];
    let decay = if flags.weight_decay { optim.weight_decay } else { 0.0 };

    let train = &splits.train;
    let batches = batch_ranges(train.len(), optim.batch_size);
    let total_steps = optim.epochs * batches.len();
    let mut sgd = Sgd::<T>::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    let mut report = RunReport {
        config_id: flags.config_id(),
        flags,
        hyper: config.hyper.clone(),
        seed,
        class_weights,
        epochs: Vec::new(),
        best_epoch: None,
        final_test_trace: Vec::new(),
        calibration: None,
    };
    let mut best_f1 = f64::NEG_INFINITY;

    for epoch in 0..optim.epochs {
        order.shuffle(&mut rng);
        for (b, range) in batches.iter().enumerate() {
            let wrap = |e: Error| Error::Run {
                epoch,
                batch: b,
                source: Box::new(e),
            };
            let idx = &order[range.clone()];
            let images: Vec<LabeledImage> = idx
                .iter()
                .map(|&i| {
                    let img = &train.images[i];
                    if flags.data_augment {
                        augment(img, &mut rng)
                    } else {
                        img.clone()
                    }
                })
                .collect();
            let labels: Vec<usize> = images.iter().map(|i| i.label).collect();
            let x = DatasetSplit::new("batch", images)
                .batch(&(0..labels.len()).collect::<Vec<_>>())
                .map_err(wrap)?;
            let x = to_scalar::<T>(&x);
            let targets = one_hot::<T>(&labels, 2).map_err(wrap)?;

            let (x, targets, sample_weights) = if flags.mixup {
                let mixed = mixup_batch(&x, &targets, config.hyper.mixup_alpha, &mut rng).map_err(wrap)?;
                let w = mixed_sample_weights(&labels, &weights_t, mixed.lambda, &mixed.permutation);
                (mixed.inputs, mixed.targets, w)
            } else {
                let w = labels.iter().map(|&y| weights_t[y]).collect();
                (x, targets, w)
            };

            model.set_mode(Mode::Train);
            let logits = model.forward(&x).map_err(wrap)?;
            let (_, grad) = soft_weighted_cross_entropy(&logits, &targets, &sample_weights).map_err(wrap)?;
            model.backward(&grad).map_err(wrap)?;
            let lr = lr_at(optim.schedule, optim.base_lr, epoch, step, total_steps);
            sgd.step(&mut model.params(), optim.momentum, decay, lr).map_err(wrap)?;
            step += 1;
        }

        let eval_err = |e: Error| Error::Run {
            epoch,
            batch: batches.len(),
            source: Box::new(e),
        };
        for split in [&splits.train, &splits.val, &splits.test] {
            if split.is_empty() {
                continue;
            }
            let probs = predict_proba(&mut model, split).map_err(eval_err)?;
            let labels = split.labels();
            let logits_loss = eval_loss(&probs, &labels, &class_weights);
            let (metrics, calibration) =
                EpochMetrics::evaluate(epoch, &split.name, logits_loss, &probs, &labels).map_err(eval_err)?;
            if split.name == splits.test.name {
                if metrics.class1.f1 > best_f1 {
                    best_f1 = metrics.class1.f1;
                    report.best_epoch = Some(epoch);
                    report.calibration = Some(calibration);
                }
                if epoch + 1 == optim.epochs {
                    report.final_test_trace = softmax_trace(&probs, &labels);
                }
            }
            report.epochs.push(metrics);
        }
    }
    model.set_mode(Mode::Eval);
    Ok(TrainedRun { model, report })
}

/// Class-weighted cross-entropy of probabilities (`Σ w·(−log p) / Σ w`).
fn eval_loss(probs: &Tensor<f64>, labels: &[usize], weights: &[f64; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let w = weights[y];
        num -= w * probs.at2(i, y).max(f64::MIN_POSITIVE).ln();
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Softmax outputs for a whole split in eval mode.
pub fn predict_proba<T: Scalar>(model: &mut Model<T>, split: &DatasetSplit) -> Result<Tensor<f64>> {
    model.set_mode(Mode::Eval);
    let mut data = Vec::with_capacity(split.len() * 2);
    let all: Vec<usize> = (0..split.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = to_scalar::<T>(&split.batch(chunk)?);
        let probs = softmax(&model.forward(&x)?)?;
        data.extend(probs.data().iter().map(|v| v.as_f64()));
    }
    Tensor::new(vec![split.len(), 2], data)
}

/// Weighted cross-entropy of the model on a split, evaluated in eval mode.
pub fn split_loss<T: Scalar>(model: &mut Model<T>, split: &DatasetSplit, weights: [T; 2]) -> Result<T> {
    model.set_mode(Mode::Eval);
    let x = to_scalar::<T>(&split.batch(&(0..split.len()).collect::<Vec<_>>())?);
    let logits = model.forward(&x)?;
    Ok(weighted_cross_entropy(&logits, &split.labels(), &weights)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_splits, splits::partition_by_class, SkewProtocol};

    fn small_splits() -> Splits {
        let protocol = SkewProtocol {
            train: ClassCounts::new(40, 8),
            val: ClassCounts::new(10, 4),
            test: ClassCounts::new(10, 10),
        };
        let need = protocol.required();
        let (maj, min) = partition_by_class(&generate_synthetic(need.majority, need.minority, 3));
        make_splits(&maj, &min, &protocol, 4).unwrap()
    }

    fn config(id: u8, epochs: usize) -> TrainConfig {
        let mut hyper = Hyper::default();
        hyper.optim.epochs = epochs;
        hyper.optim.batch_size = 16;
        TrainConfig::new(Flags::from_config_id(id).unwrap(), hyper)
    }

    #[test]
    fn inverse_frequency_for_default_protocol() {
        let w = inverse_frequency_weights(ClassCounts::new(1000, 10));
        assert!((w[0] - 0.505).abs() < 1e-12);
        assert!((w[1] - 50.5).abs() < 1e-12);
    }

    #[test]
    fn batch_ranges_drop_single_tail() {
        assert_eq!(batch_ranges(5, 2), vec![0..2, 2..4]);
        assert_eq!(batch_ranges(1010, 32).len(), 32);
        assert_eq!(batch_ranges(1010, 32).last().unwrap().len(), 18);
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let splits = small_splits();
        let cfg = config(32, 0);
        let run = train_model::<f64>(&cfg, &splits, 9).unwrap();
        assert!(run.report.epochs.is_empty());
        assert_eq!(run.report.best_epoch, None);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fresh = Model::<f64>::new(&cfg.model_spec(), rng.next_u64()).unwrap();
        let a: Vec<_> = run.model.state_tensors().into_iter().cloned().collect();
        let b: Vec<_> = fresh.state_tensors().into_iter().cloned().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_seed_identical_report() {
        let splits = small_splits();
        for id in [0, 63] {
            let a = train_run(&config(id, 2), &splits, 5).unwrap();
            let b = train_run(&config(id, 2), &splits, 5).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.epochs.len(), 6);
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let splits = small_splits();
        let mut cfg = config(63, 2);
        cfg.hyper.optim.base_lr = 0.0;
        let mut run = train_model::<f64>(&cfg, &splits, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut fresh = Model::<f64>::new(&cfg.model_spec(), rng.next_u64()).unwrap();
        let trained: Vec<Tensor<f64>> = run.model.params().iter().map(|p| p.value.clone()).collect();
        let initial: Vec<Tensor<f64>> = fresh.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(trained, initial);
    }

    #[test]
    fn frozen_trunk_bn_stays_bit_identical() {
        let splits = small_splits();
        let cfg = config(32, 1);
        let run = train_model::<f64>(&cfg, &splits, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fresh = Model::<f64>::new(&cfg.model_spec(), rng.next_u64()).unwrap();
        let trained: Vec<_> = run.model.batch_norms().map(|b| b.state.clone()).collect();
        let initial: Vec<_> = fresh.batch_norms().map(|b| b.state.clone()).collect();
        for (t, i) in trained[..2].iter().zip(&initial[..2]) {
            assert_eq!(t.gamma, i.gamma);
            assert_eq!(t.beta, i.beta);
            assert_eq!(t.running_mean, i.running_mean);
            assert_eq!(t.running_var, i.running_var);
        }
        for (t, i) in trained[2..].iter().zip(&initial[2..]) {
            assert_ne!(t.running_mean, i.running_mean);
        }
    }

    #[test]
    fn best_epoch_indexes_test_rows() {
        let report = train_run(&config(48, 3), &small_splits(), 3).unwrap();
        let best = report.best_epoch.unwrap();
        let best_f1 = report.best_test().unwrap().class1.f1;
        assert!(best < 3);
        assert!(report.split_rows("test").all(|m| m.class1.f1 <= best_f1));
        assert_eq!(report.final_test_trace.len(), 20);
        assert!(report.calibration.is_some());
    }

    #[test]
    fn single_precision_training_runs() {
        let run = train_model::<f32>(&config(32, 1), &small_splits(), 1).unwrap();
        assert_eq!(run.report.epochs.len(), 3);
    }
}
