//! Mixup: convex combinations of a batch with a permutation of itself.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MixedBatch<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
    pub lambda: f64,
    /// `permutation[i]` is the partner of row `i`.
    pub permutation: Vec<usize>,
}

/// `x̃ = λ·x_i + (1−λ)·x_π(i)`, `ỹ = λ·y_i + (1−λ)·y_π(i)` with `λ ~ Beta(α, α)`.
pub fn mixup_batch<T: Scalar, R: Rng + ?Sized>(
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch<T>> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("mixup alpha must be positive, got {alpha}")));
    }
    let m = inputs.shape().first().copied().unwrap_or(0);
    if m < 2 {
        return Err(Error::BatchTooSmall {
            op: "mixup_batch",
            needed: 2,
            got: m,
        });
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(e.to_string()))?;
    let lambda = beta.sample(rng);
    let mut permutation: Vec<usize> = (0..m).collect();
    permutation.shuffle(rng);
    mix_with(inputs, targets, lambda, permutation)
}

/// Mixes with a given `lambda` and partner permutation.
pub fn mix_with<T: Scalar>(
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    lambda: f64,
    permutation: Vec<usize>,
) -> Result<MixedBatch<T>> {
    let m = inputs.shape().first().copied().unwrap_or(0);
    if targets.rank() != 2 || targets.shape()[0] != m {
        return Err(Error::shape("mixup targets", targets.shape(), inputs.shape()));
    }
    if permutation.len() != m || permutation.iter().any(|&p| p >= m) {
        return Err(Error::Config("mixup permutation does not match batch".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    Ok(MixedBatch {
        inputs: mix_rows(inputs, lambda, &permutation),
        targets: mix_rows(targets, lambda, &permutation),
        lambda,
        permutation,
    })
}

fn mix_rows<T: Scalar>(x: &Tensor<T>, lambda: f64, permutation: &[usize]) -> Tensor<T> {
    let m = permutation.len();
    let width = x.len().checked_div(m).unwrap_or(0);
    let (l, r) = (T::lit(lambda), T::lit(1.0 - lambda));
    let mut out = Vec::with_capacity(x.len());
    for (i, &j) in permutation.iter().enumerate() {
        let a = &x.data()[i * width..(i + 1) * width];
        let b = &x.data()[j * width..(j + 1) * width];
        // Exact endpoints so λ ∈ {0, 1} reproduce a source row bit for bit.
        if lambda == 1.0 {
            out.extend_from_slice(a);
        } else if lambda == 0.0 {
            out.extend_from_slice(b);
        } else {
            out.extend(a.iter().zip(b).map(|(&u, &v)| l * u + r * v));
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("mixing preserves shape")
}

/// Per-sample loss weight of a mixed row: `λ·w_{y_i} + (1−λ)·w_{y_π(i)}`.
pub fn mixed_sample_weights<T: Scalar>(
    labels: &[usize],
    class_weights: &[T],
    lambda: f64,
    permutation: &[usize],
) -> Vec<T> {
    let (l, r) = (T::lit(lambda), T::lit(1.0 - lambda));
    permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| l * class_weights[labels[i]] + r * class_weights[labels[j]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::loss::one_hot;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(values: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn lambda_one_returns_original() {
        let x = inputs(&[0.1, 0.7, 0.3]);
        let y = one_hot::<f64>(&[0, 1, 0], 2).unwrap();
        let mixed = mix_with(&x, &y, 1.0, vec![2, 0, 1]).unwrap();
        assert_eq!(mixed.inputs, x);
        assert_eq!(mixed.targets, y);
    }

    #[test]
    fn lambda_zero_returns_permuted() {
        let x = inputs(&[0.1, 0.7, 0.3]);
        let y = one_hot::<f64>(&[0, 1, 0], 2).unwrap();
        let mixed = mix_with(&x, &y, 0.0, vec![2, 0, 1]).unwrap();
        assert_eq!(mixed.inputs.data(), &[0.3, 0.1, 0.7]);
        assert_eq!(mixed.targets.row(1), &[1.0, 0.0]);
        assert_eq!(mixed.targets.row(2), &[0.0, 1.0]);
    }

    #[test]
    fn scalar_convex_combination() {
        let x = inputs(&[1.0, 0.0]);
        let y = one_hot::<f64>(&[1, 0], 2).unwrap();
        let mixed = mix_with(&x, &y, 0.3, vec![1, 0]).unwrap();
        assert!((mixed.inputs.data()[0] - 0.3).abs() < 1e-15);
        assert!((mixed.targets.at2(0, 1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_row_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = one_hot::<f64>(&[0], 2).unwrap();
        assert!(matches!(
            mixup_batch(&inputs(&[0.5]), &y, 0.4, &mut rng),
            Err(Error::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn mixed_weights_interpolate() {
        let w = mixed_sample_weights::<f64>(&[0, 1], &[0.5, 50.0], 0.25, &[1, 0]);
        assert!((w[0] - (0.25 * 0.5 + 0.75 * 50.0)).abs() < 1e-12);
        assert!((w[1] - (0.25 * 50.0 + 0.75 * 0.5)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn labels_sum_to_one_and_inputs_stay_in_envelope(
            values in proptest::collection::vec(0.0f64..1.0, 8 * 3),
            labels in proptest::collection::vec(0usize..2, 8),
            seed in any::<u64>(),
        ) {
            let x = Tensor::new(vec![8, 3], values).unwrap();
            let y = one_hot::<f64>(&labels, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mixed = mixup_batch(&x, &y, 0.4, &mut rng).unwrap();
            for i in 0..8 {
                let row = mixed.targets.row(i);
                prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
                let j = mixed.permutation[i];
                for f in 0..3 {
                    let (a, b) = (x.at2(i, f), x.at2(j, f));
                    let v = mixed.inputs.at2(i, f);
                    prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
                }
            }
        }
    }
}
