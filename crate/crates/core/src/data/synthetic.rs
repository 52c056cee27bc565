//! Synthetic "leaf" images: a smooth background of two random-phase
//! sinusoids plus Gaussian noise; minority images additionally carry one
//! faint circular lesion.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledImage, MAJORITY, MINORITY};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub size: usize,
    pub noise_sigma: f64,
    /// Peak amplitude of each background sinusoid.
    pub background_amplitude: f64,
    /// Spatial frequency range of the background, in cycles per image.
    pub frequency_range: (f64, f64),
    pub lesion_amplitude: f64,
    pub lesion_radius: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 16,
            noise_sigma: 0.05,
            background_amplitude: 0.03,
            frequency_range: (0.3, 1.2),
            lesion_amplitude: 0.15,
            lesion_radius: (2.0, 3.0),
        }
    }
}

/// `n_majority` healthy images followed by `n_minority` lesioned ones, with
/// ids `0..n_majority+n_minority`.
pub fn generate_synthetic(n_majority: usize, n_minority: usize, seed: u64) -> Vec<LabeledImage> {
    generate_with(&SyntheticConfig::default(), n_majority, n_minority, seed)
}

pub fn generate_with(
    config: &SyntheticConfig,
    n_majority: usize,
    n_minority: usize,
    seed: u64,
) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_majority + n_minority)
        .map(|id| {
            let label = if id < n_majority { MAJORITY } else { MINORITY };
            let pixels = render(config, label == MINORITY, &mut rng);
            LabeledImage { id, label, pixels }
        })
        .collect()
}

fn render<R: Rng>(config: &SyntheticConfig, lesion: bool, rng: &mut R) -> Tensor<f64> {
    let n = config.size;
    let size = n as f64;
    let (f_lo, f_hi) = config.frequency_range;
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            let freq = rng.random_range(f_lo..=f_hi);
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI * freq / size;
            (k * angle.cos(), k * angle.sin(), phase)
        })
        .collect();
    let lesion = lesion.then(|| {
        let (r_lo, r_hi) = config.lesion_radius;
        let radius = rng.random_range(r_lo..=r_hi);
        let cx = rng.random_range(radius..size - 1.0 - radius);
        let cy = rng.random_range(radius..size - 1.0 - radius);
        (cx, cy, radius)
    });
    let noise = Normal::new(0.0, config.noise_sigma).expect("noise sigma is finite");

    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = 0.5;
            for &(kx, ky, phase) in &waves {
                v += config.background_amplitude * (kx * xf + ky * yf + phase).sin();
            }
            if let Some((cx, cy, r)) = lesion {
                if (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r {
                    v += config.lesion_amplitude;
                }
            }
            v += noise.sample(rng);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![1, n, n], data).expect("square image")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_counts_give_empty_list() {
        assert!(generate_synthetic(0, 0, 1).is_empty());
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(5, 3, 99);
        let b = generate_synthetic(5, 3, 99);
        assert_eq!(a, b);
        let c = generate_synthetic(5, 3, 100);
        assert_ne!(a[0].pixels, c[0].pixels);
    }

    #[test]
    fn labels_ids_and_range() {
        let imgs = generate_synthetic(4, 2, 7);
        let labels: Vec<_> = imgs.iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1]);
        assert!(imgs.iter().enumerate().all(|(k, i)| i.id == k));
        for img in &imgs {
            assert_eq!(img.pixels.shape(), &[1, 16, 16]);
            assert!(img.pixels.data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    /// Logistic regression on raw pixels, trained by full-batch gradient
    /// descent. Used only to check the task difficulty band.
    fn linear_probe_balanced_accuracy(train: &[LabeledImage], test: &[LabeledImage]) -> f64 {
        let dim = train[0].pixels.len();
        let standardize = |img: &LabeledImage, mean: &[f64], sd: &[f64]| -> Vec<f64> {
            img.pixels
                .data()
                .iter()
                .zip(mean.iter().zip(sd))
                .map(|(p, (m, s))| (p - m) / s)
                .collect()
        };
        let n = train.len() as f64;
        let mut mean = vec![0.0; dim];
        for img in train {
            for (m, p) in mean.iter_mut().zip(img.pixels.data()) {
                *m += p / n;
            }
        }
        let mut sd = vec![0.0; dim];
        for img in train {
            for ((s, p), m) in sd.iter_mut().zip(img.pixels.data()).zip(&mean) {
                *s += (p - m).powi(2) / n;
            }
        }
        sd.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
        let xs: Vec<Vec<f64>> = train.iter().map(|i| standardize(i, &mean, &sd)).collect();
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        for _ in 0..500 {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (x, img) in xs.iter().zip(train) {
                let z: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let err = 1.0 / (1.0 + (-z).exp()) - img.label as f64;
                for (g, xv) in gw.iter_mut().zip(x) {
                    *g += err * xv / n;
                }
                gb += err / n;
            }
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= 0.5 * (g + 1e-3 * *wv);
            }
            b -= 0.5 * gb;
        }
        let mut correct = [0usize; 2];
        let mut total = [0usize; 2];
        for img in test {
            let x = standardize(img, &mean, &sd);
            let z: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let pred = usize::from(z > 0.0);
            total[img.label] += 1;
            correct[img.label] += usize::from(pred == img.label);
        }
        0.5 * (correct[0] as f64 / total[0] as f64 + correct[1] as f64 / total[1] as f64)
    }

    #[test]
    fn linear_probe_lands_in_difficulty_band() {
        let train = generate_synthetic(500, 500, 2024);
        let test = generate_synthetic(500, 500, 2025);
        let acc = linear_probe_balanced_accuracy(&train, &test);
        assert!((0.60..=0.95).contains(&acc), "balanced accuracy {acc}");
    }
}
