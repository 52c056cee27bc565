//! Train-time augmentation: flips, small shifts with edge replication and a
//! brightness scale.

use rand::Rng;

use super::LabeledImage;
use crate::tensor::Tensor;

pub const MAX_SHIFT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub shift_x: i32,
    pub shift_y: i32,
    pub brightness: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        flip_horizontal: false,
        flip_vertical: false,
        shift_x: 0,
        shift_y: 0,
        brightness: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
            shift_x: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            shift_y: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            brightness: rng.random_range(0.9..=1.1),
        }
    }

    /// Applies the transform; the label is carried over unchanged.
    pub fn apply(&self, img: &LabeledImage) -> LabeledImage {
        let (h, w) = (img.height(), img.width());
        let src = img.pixels.data();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                // Output (x, y) reads the shifted source, clamped to the edge.
                let sx = (x as i64 - self.shift_x as i64).clamp(0, w as i64 - 1) as usize;
                let sy = (y as i64 - self.shift_y as i64).clamp(0, h as i64 - 1) as usize;
                let sx = if self.flip_horizontal { w - 1 - sx } else { sx };
                let sy = if self.flip_vertical { h - 1 - sy } else { sy };
                let v = src[sy * w + sx];
                out.push(if self.brightness == 1.0 {
                    v
                } else {
                    (v * self.brightness).clamp(0.0, 1.0)
                });
            }
        }
        LabeledImage {
            id: img.id,
            label: img.label,
            pixels: Tensor::new(vec![1, h, w], out).expect("same shape as input"),
        }
    }
}

pub fn augment<R: Rng + ?Sized>(img: &LabeledImage, rng: &mut R) -> LabeledImage {
    AugmentParams::sample(rng).apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_leaves_pixels() {
        let img = &generate_synthetic(1, 0, 3)[0];
        assert_eq!(&AugmentParams::IDENTITY.apply(img), img);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = &generate_synthetic(0, 1, 4)[0];
        let flip = AugmentParams {
            flip_horizontal: true,
            ..AugmentParams::IDENTITY
        };
        let once = flip.apply(img);
        assert_ne!(&once, img);
        assert_eq!(&flip.apply(&once), img);
    }

    #[test]
    fn brightness_clips_to_one() {
        let img = LabeledImage::new(0, 0, Tensor::full(&[1, 2, 2], 0.95)).unwrap();
        let bright = AugmentParams {
            brightness: 1.1,
            ..AugmentParams::IDENTITY
        };
        assert!(bright.apply(&img).pixels.data().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn shift_replicates_edges() {
        let img = LabeledImage::new(
            0,
            1,
            Tensor::new(vec![1, 1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        )
        .unwrap();
        let shift = AugmentParams {
            shift_x: 2,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(shift.apply(&img).pixels.data(), &[0.1, 0.1, 0.1, 0.2]);
    }

    #[test]
    fn random_augmentation_keeps_label_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for img in generate_synthetic(20, 20, 8) {
            let out = augment(&img, &mut rng);
            assert_eq!(out.label, img.label);
            assert_eq!(out.pixels.shape(), img.pixels.shape());
            assert!(out.pixels.data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
