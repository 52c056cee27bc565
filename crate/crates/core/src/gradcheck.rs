//! Central finite differences for checking hand-written backward passes.
//!
//! Kept free of any layer code so it stays an independent oracle.

use crate::tensor::Tensor;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(
    x: &Tensor<f64>,
    h: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Outcome of comparing analytic and numeric gradients coordinate by coordinate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }

    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_relative_error = self.max_relative_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differentiates_a_cubic() {
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let g = central_difference(&x, 1e-6, |t| t.data().iter().map(|v| v * v * v).sum());
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!(relative_error(*gi, 3.0 * xi * xi) < 1e-8);
        }
    }

    #[test]
    fn floor_turns_tiny_gradients_absolute() {
        assert!(relative_error(0.0, 1e-10) < 1e-5);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-12);
    }
}
