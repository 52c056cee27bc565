//! Softmax and class-weighted cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank("softmax", 2)?;
    logits.ensure_finite("softmax logits")?;
    let cols = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(cols.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &z in row {
            let e = (z - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// `log p` for every entry via `z − max − ln Σ exp(z − max)`.
fn log_softmax<T: Scalar>(logits: &Tensor<T>) -> Vec<T> {
    let cols = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
        out.extend(row.iter().map(|&z| z - lse));
    }
    out
}

/// Cross-entropy against soft targets with one weight per sample:
/// `Σ_i s_i·(−Σ_c t_ic·log p_ic) / Σ_i s_i`.
///
/// Returns the loss and its gradient with respect to the logits. Targets
/// must be probability rows.
pub fn soft_weighted_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    sample_weights: &[T],
) -> Result<(T, Tensor<T>)> {
    logits.expect_rank("cross_entropy", 2)?;
    logits.expect_same_shape("cross_entropy targets", targets)?;
    let (m, c) = (logits.shape()[0], logits.shape()[1]);
    if sample_weights.len() != m {
        return Err(Error::shape("cross_entropy weights", &[sample_weights.len()], &[m]));
    }
    if m == 0 {
        return Err(Error::EmptyBatch("cross_entropy"));
    }
    logits.ensure_finite("cross_entropy logits")?;
    let total_weight: T = sample_weights.iter().copied().sum();
    if !(total_weight > T::zero()) {
        return Err(Error::Config("sample weights must sum to a positive value".into()));
    }

    let log_p = log_softmax(logits);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); m * c];
    for i in 0..m {
        let s = sample_weights[i] / total_weight;
        for j in 0..c {
            let k = i * c + j;
            let t = targets.data()[k];
            loss -= s * t * log_p[k];
            grad[k] = s * (log_p[k].exp() - t);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross_entropy loss".into()));
    }
    Ok((loss, Tensor::new(vec![m, c], grad)?))
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Config(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Class-weighted cross-entropy normalized by the total weight of the batch:
/// `Σ_i w_{y_i}·(−log p_{i,y_i}) / Σ_i w_{y_i}`.
pub fn weighted_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    class_weights: &[T],
) -> Result<(T, Tensor<T>)> {
    logits.expect_rank("cross_entropy", 2)?;
    let classes = logits.shape()[1];
    if class_weights.len() != classes {
        return Err(Error::shape("cross_entropy class weights", &[class_weights.len()], &[classes]));
    }
    if labels.len() != logits.shape()[0] {
        return Err(Error::shape("cross_entropy labels", &[labels.len()], logits.shape()));
    }
    let targets = one_hot(labels, classes)?;
    let weights: Vec<T> = labels.iter().map(|&y| class_weights[y]).collect();
    soft_weighted_cross_entropy(logits, &targets, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::max_relative_error;
    use proptest::prelude::*;

    fn logits(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_hand_values() {
        let p = softmax(&logits(&[[0.0, 0.0], [1.0, 3.0]])).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        let e1 = 1f64.exp();
        let e3 = 3f64.exp();
        assert!((p.at2(1, 0) - e1 / (e1 + e3)).abs() < 1e-15);
        assert!((p.at2(1, 0) - 0.1192).abs() < 5e-5);
        assert!((p.at2(1, 1) - 0.8808).abs() < 5e-5);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&logits(&[[1000.0, 999.0]])).unwrap();
        assert!(p.all_finite());
        assert!((p.at2(0, 0) + p.at2(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax(&logits(&[[f64::NAN, 0.0]])).is_err());
    }

    #[test]
    fn unit_weights_give_mean_cross_entropy() {
        let z = logits(&[[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1]]);
        let labels = [0, 1, 1];
        let (loss, _) = weighted_cross_entropy(&z, &labels, &[1.0, 1.0]).unwrap();
        let p = softmax(&z).unwrap();
        let mean = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -p.at2(i, y).ln())
            .sum::<f64>()
            / 3.0;
        assert!((loss - mean).abs() < 1e-12);
    }

    #[test]
    fn single_sample_weight_cancels() {
        let (loss, _) = weighted_cross_entropy(&logits(&[[0.0, 0.0]]), &[1], &[1.0, 99.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_loss_vanishes() {
        let (loss, _) = weighted_cross_entropy(&logits(&[[0.0, 800.0]]), &[1], &[1.0, 1.0]).unwrap();
        assert!(loss.abs() < 1e-300);
        let (loss, _) = weighted_cross_entropy(&logits(&[[0.0, 40.0]]), &[1], &[1.0, 1.0]).unwrap();
        assert!(loss < 1e-16);
    }

    #[test]
    fn non_finite_logits_error() {
        let r = weighted_cross_entropy(&logits(&[[f64::INFINITY, 0.0]]), &[0], &[1.0, 1.0]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn label_out_of_range_errors() {
        assert!(weighted_cross_entropy(&logits(&[[0.0, 0.0]]), &[2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn weighting_shifts_emphasis() {
        let z = logits(&[[1.0, 0.0], [1.0, 0.0]]);
        let (plain, _) = weighted_cross_entropy(&z, &[0, 1], &[1.0, 1.0]).unwrap();
        let (heavy, _) = weighted_cross_entropy(&z, &[0, 1], &[1.0, 50.0]).unwrap();
        assert!(heavy > plain);
    }

    /// Fourth-order stencil, accurate enough for a 1e-6 relative check.
    fn five_point_difference(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
        let mut out = Tensor::zeros(x.shape());
        let mut probe = x.clone();
        for i in 0..x.len() {
            let x0 = x.data()[i];
            let mut at = |d: f64| {
                probe.data_mut()[i] = x0 + d;
                f(&probe)
            };
            let g = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            probe.data_mut()[i] = x0;
            out.data_mut()[i] = g;
        }
        out
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            data in proptest::collection::vec(-3.0f64..3.0, 10),
            labels in proptest::collection::vec(0usize..2, 5),
            w1 in 0.5f64..60.0,
        ) {
            let z = Tensor::new(vec![5, 2], data).unwrap();
            let weights = [0.5, w1];
            let (_, grad) = weighted_cross_entropy(&z, &labels, &weights).unwrap();
            let numeric = five_point_difference(&z, 1e-3, |zp| {
                weighted_cross_entropy(zp, &labels, &weights).unwrap().0
            });
            prop_assert!(max_relative_error(&grad, &numeric) < 1e-6);
        }

        #[test]
        fn softmax_is_shift_invariant(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -50.0f64..50.0) {
            let p = softmax(&logits(&[[a, b]])).unwrap();
            let q = softmax(&logits(&[[a + c, b + c]])).unwrap();
            prop_assert!(p.max_abs_diff(&q).unwrap() < 1e-12);
            prop_assert!((p.at2(0, 0) + p.at2(0, 1) - 1.0).abs() < 1e-12);
            prop_assert!(p.data().iter().all(|&v| v > 0.0));
        }
    }
}
