//! Dense, convolution, ReLU, dropout and adaptive average pooling layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv2d_backward, conv2d_forward, matmul, Tensor};

/// Glorot-uniform sample bound `√(6/(fan_in+fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = glorot_bound(fan_in, fan_out);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated data")
}

/// Fully connected layer `y = x·W + b` with `W: [in×out]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
            grad_weight: Tensor::zeros(&[inputs, outputs]),
            grad_bias: Tensor::zeros(&[outputs]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = matmul(x, &self.weight)?;
        let n = self.bias.len();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or(Error::MissingCache("dense_backward"))?;
        if grad_out.rank() != 2 || grad_out.shape() != [x.shape()[0], self.bias.len()] {
            return Err(Error::shape(
                "dense_backward",
                grad_out.shape(),
                &[x.shape()[0], self.bias.len()],
            ));
        }
        self.grad_weight = matmul(&x.transpose()?, grad_out)?;
        let mut gb = vec![T::zero(); self.bias.len()];
        for row in grad_out.data().chunks_exact(gb.len()) {
            for (acc, &g) in gb.iter_mut().zip(row) {
                *acc += g;
            }
        }
        self.grad_bias = Tensor::vector(gb);
        matmul(grad_out, &self.weight.transpose()?)
    }
}

/// Valid stride-1 convolution.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_kernel: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        let area = kernel_size * kernel_size;
        let shape = [out_channels, in_channels, kernel_size, kernel_size];
        Self {
            kernel: glorot_uniform(&shape, in_channels * area, out_channels * area, rng),
            bias: Tensor::zeros(&[out_channels]),
            grad_kernel: Tensor::zeros(&shape),
            grad_bias: Tensor::zeros(&[out_channels]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = conv2d_forward(x, &self.kernel, &self.bias)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or(Error::MissingCache("conv2d_backward"))?;
        let (gi, gk, gb) = conv2d_backward(x, &self.kernel, grad_out)?;
        self.grad_kernel = gk;
        self.grad_bias = gb;
        Ok(gi)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.mask = x.data().iter().map(|&v| v > T::zero()).collect();
        self.shape = x.shape().to_vec();
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.shape.as_slice() {
            return Err(Error::shape("relu_backward", grad_out.shape(), &self.shape));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &keep)| if keep { g } else { T::zero() })
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    /// Active-unit pattern from the last forward pass.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Inverted dropout with its own seeded random stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    pub mode: Mode,
    rng: ChaCha8Rng,
    mask: Option<Vec<bool>>,
    shape: Vec<usize>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self {
            rate,
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            shape: Vec::new(),
        })
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.shape = x.shape().to_vec();
        if self.mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<bool> = (0..x.len()).map(|_| self.rng.random_bool(keep)).collect();
        let out = apply_mask(x, &mask, T::lit(1.0 / keep));
        self.mask = Some(mask);
        Ok(out)
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.shape.as_slice() {
            return Err(Error::shape("dropout_backward", grad_out.shape(), &self.shape));
        }
        Ok(match &self.mask {
            Some(mask) => apply_mask(grad_out, mask, T::lit(1.0 / (1.0 - self.rate))),
            None => grad_out.clone(),
        })
    }
}

fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &[bool], scale: T) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &k)| if k { v * scale } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("mask matches input")
}

/// Global spatial mean: `[b×c×h×w]` → `[b×c]`.
#[derive(Debug, Clone, Default)]
pub struct AdaptiveAvgPool {
    input_shape: Vec<usize>,
}

impl AdaptiveAvgPool {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank("adaptive_avg_pool_forward", 4)?;
        let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let area = h * w;
        let inv = T::one() / T::from_count(area);
        let data = x
            .data()
            .chunks_exact(area)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        self.input_shape = x.shape().to_vec();
        Tensor::new(vec![b, c], data)
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let s = &self.input_shape;
        if s.len() != 4 || grad_out.shape() != [s[0], s[1]] {
            return Err(Error::shape("adaptive_avg_pool_backward", grad_out.shape(), s));
        }
        let area = s[2] * s[3];
        let inv = T::one() / T::from_count(area);
        let mut data = Vec::with_capacity(grad_out.len() * area);
        for &g in grad_out.data() {
            data.extend(std::iter::repeat_n(g * inv, area));
        }
        Tensor::new(s.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn relu_splits_on_sign() {
        let mut relu = Relu::default();
        let y = relu.forward(&Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu.backward(&Tensor::vector(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let x = Tensor::vector(vec![0.5, -2.0, 3.0]);
        for mode in [Mode::Train, Mode::Eval] {
            let mut d = Dropout::new(0.0, 1).unwrap();
            d.mode = mode;
            assert_eq!(d.forward(&x).unwrap(), x);
            assert_eq!(d.backward(&x).unwrap(), x);
        }
    }

    #[test]
    fn eval_dropout_is_identity() {
        let x = Tensor::vector(vec![0.5, -2.0, 3.0, 4.0]);
        let mut d = Dropout::new(0.5, 9).unwrap();
        d.mode = Mode::Eval;
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn train_dropout_scales_survivors() {
        let x = Tensor::<f64>::full(&[1000], 1.0);
        let mut d = Dropout::new(0.25, 4).unwrap();
        let y = d.forward(&x).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        assert!((650..850).contains(&kept), "kept {kept}");
        // Linear given the mask, so the backward equals the forward map.
        assert_eq!(d.backward(&x).unwrap(), y);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        assert!(Dropout::new(1.0, 0).is_err());
    }

    #[test]
    fn pool_takes_spatial_mean() {
        let mut pool = AdaptiveAvgPool::default();
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[2.5]);
        let g = pool.backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.25; 4]);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Dense::<f64>::new(5, 3, &mut rng);
        layer.bias = random(&mut rng, &[3]);
        let x = random(&mut rng, &[4, 5]);
        let w = random(&mut rng, &[4, 3]);
        let template = layer.clone();
        layer.forward(&x).unwrap();
        let gx = layer.backward(&w).unwrap();

        let num_x = central_difference(&x, 1e-6, |xp| dot(&template.clone().forward(xp).unwrap(), &w));
        assert!(max_relative_error(&gx, &num_x) < 1e-5);
        let num_w = central_difference(&template.weight, 1e-6, |wp| {
            let mut l = template.clone();
            l.weight = wp.clone();
            dot(&l.forward(&x).unwrap(), &w)
        });
        assert!(max_relative_error(&layer.grad_weight, &num_w) < 1e-5);
        let num_b = central_difference(&template.bias, 1e-6, |bp| {
            let mut l = template.clone();
            l.bias = bp.clone();
            dot(&l.forward(&x).unwrap(), &w)
        });
        assert!(max_relative_error(&layer.grad_bias, &num_b) < 1e-5);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = Conv2d::<f64>::new(2, 3, 3, &mut rng);
        layer.bias = random(&mut rng, &[3]);
        let x = random(&mut rng, &[2, 2, 5, 6]);
        let w = random(&mut rng, &[2, 3, 3, 4]);
        let template = layer.clone();
        layer.forward(&x).unwrap();
        let gx = layer.backward(&w).unwrap();

        let num_x = central_difference(&x, 1e-6, |xp| dot(&template.clone().forward(xp).unwrap(), &w));
        assert!(max_relative_error(&gx, &num_x) < 1e-5);
        let num_k = central_difference(&template.kernel, 1e-6, |kp| {
            let mut l = template.clone();
            l.kernel = kp.clone();
            dot(&l.forward(&x).unwrap(), &w)
        });
        assert!(max_relative_error(&layer.grad_kernel, &num_k) < 1e-5);
        let num_b = central_difference(&template.bias, 1e-6, |bp| {
            let mut l = template.clone();
            l.bias = bp.clone();
            dot(&l.forward(&x).unwrap(), &w)
        });
        assert!(max_relative_error(&layer.grad_bias, &num_b) < 1e-5);
    }

    #[test]
    fn relu_pool_dropout_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[2, 3, 2, 2]);
        let w = random(&mut rng, &[2, 3]);
        let mut relu = Relu::default();
        let mut pool = AdaptiveAvgPool::default();
        let y = pool.forward(&relu.forward(&x).unwrap()).unwrap();
        let gx = relu.backward(&pool.backward(&w).unwrap()).unwrap();
        let num = central_difference(&x, 1e-6, |xp| {
            dot(&AdaptiveAvgPool::default().forward(&Relu::default().forward(xp).unwrap()).unwrap(), &w)
        });
        for ((a, n), xv) in gx.data().iter().zip(num.data()).zip(x.data()) {
            if xv.abs() > 1e-4 {
                assert!(crate::gradcheck::relative_error(*a, *n) < 1e-5);
            }
        }
        assert_eq!(y.shape(), &[2, 3]);

        let mut drop = Dropout::new(0.5, 17).unwrap();
        let dy = drop.forward(&x).unwrap();
        let gd = drop.backward(&x.map(|_| 1.0)).unwrap();
        for ((g, yv), xv) in gd.data().iter().zip(dy.data()).zip(x.data()) {
            assert!((g * xv - yv).abs() < 1e-15);
        }
    }

    #[test]
    fn glorot_bounds_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::<f64>::new(16, 32, &mut rng);
        let bound = glorot_bound(16, 32);
        assert!(layer.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(layer.bias.data().iter().all(|&b| b == 0.0));
    }
}
