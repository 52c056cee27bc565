//! Batch normalization over the rows of an `[m×d]` activation matrix.
//!
//! Train mode normalizes each feature with the mini-batch mean and biased
//! variance, then applies the learnable scale `gamma` and shift `beta`:
//!
//! ```text
//! x̂ = (x − μ_B) / √(σ²_B + ε)
//! y = γ·x̂ + β
//! ```
//!
//! Running statistics follow `running ← (1 − momentum)·running + momentum·batch`
//! and replace the batch statistics in eval mode. A frozen layer normalizes
//! with its running statistics even in train mode and never updates them.
//!
//! [`SpatialBatchNorm`] applies the same transform per channel of an NCHW
//! tensor by treating every pixel of every image as one row.

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{nchw_to_rows, reduce_stats, rows_to_nchw, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    pub momentum: T,
    pub frozen: bool,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    /// `γ = 1`, `β = 0`, running mean 0 and running variance 1.
    pub fn new(features: usize, config: BatchNormConfig) -> Result<Self> {
        if !(config.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "batch norm epsilon must be positive, got {}",
                config.epsilon
            )));
        }
        if !(config.momentum > 0.0 && config.momentum < 1.0) {
            return Err(Error::Config(format!(
                "batch norm momentum must lie in (0, 1), got {}",
                config.momentum
            )));
        }
        Ok(Self {
            gamma: Tensor::full(&[features], T::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            epsilon: T::lit(config.epsilon),
            momentum: T::lit(config.momentum),
            frozen: false,
            mode: Mode::Train,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Whether the next forward pass normalizes with batch statistics.
    pub fn uses_batch_stats(&self) -> bool {
        self.mode == Mode::Train && !self.frozen
    }
}

/// Values saved by [`batchnorm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    /// `true` when batch statistics were used, so gradients flow through
    /// the batch mean and variance.
    pub batch_coupled: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub grad_in: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
}

pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    x.expect_rank("batchnorm_forward", 2)?;
    let (m, d) = (x.shape()[0], x.shape()[1]);
    if d != state.features() {
        return Err(Error::shape("batchnorm_forward", x.shape(), &[m, state.features()]));
    }
    x.ensure_finite("batchnorm_forward input")?;

    let batch_coupled = state.uses_batch_stats();
    let (mean, var) = if batch_coupled {
        if m < 2 {
            return Err(Error::BatchTooSmall {
                op: "batchnorm_forward (train mode)",
                needed: 2,
                got: m,
            });
        }
        let (mean, var) = reduce_stats(x)?;
        let keep = T::one() - state.momentum;
        for (r, &b) in state.running_mean.data_mut().iter_mut().zip(mean.data()) {
            *r = keep * *r + state.momentum * b;
        }
        for (r, &b) in state.running_var.data_mut().iter_mut().zip(var.data()) {
            *r = keep * *r + state.momentum * b;
        }
        (mean, var)
    } else {
        if m == 0 {
            return Err(Error::EmptyBatch("batchnorm_forward"));
        }
        (state.running_mean.clone(), state.running_var.clone())
    };

    let inv_std: Vec<T> = var
        .data()
        .iter()
        .map(|&v| T::one() / (v + state.epsilon).sqrt())
        .collect();
    let mut normalized = vec![T::zero(); m * d];
    let mut out = vec![T::zero(); m * d];
    let (gamma, beta) = (state.gamma.data(), state.beta.data());
    for i in 0..m {
        for j in 0..d {
            let k = i * d + j;
            let xh = (x.data()[k] - mean.data()[j]) * inv_std[j];
            normalized[k] = xh;
            out[k] = gamma[j] * xh + beta[j];
        }
    }
    let out = Tensor::new(vec![m, d], out)?;
    out.ensure_finite("batchnorm_forward output")?;
    Ok((
        out,
        BatchNormCache {
            normalized: Tensor::new(vec![m, d], normalized)?,
            inv_std,
            batch_coupled,
        },
    ))
}

/// Analytic gradients of [`batchnorm_forward`].
///
/// With batch statistics the input gradient includes the mean and variance
/// pathways:
/// `dx = inv_std/m · (m·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))` where `dx̂ = γ·dy`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.normalized.shape() || cache.inv_std.len() != state.features() {
        return Err(Error::shape(
            "batchnorm_backward",
            grad_out.shape(),
            cache.normalized.shape(),
        ));
    }
    let (m, d) = (grad_out.shape()[0], grad_out.shape()[1]);
    let g = grad_out.data();
    let xh = cache.normalized.data();
    let gamma = state.gamma.data();

    let mut grad_beta = vec![T::zero(); d];
    let mut grad_gamma = vec![T::zero(); d];
    for i in 0..m {
        for j in 0..d {
            let k = i * d + j;
            grad_beta[j] += g[k];
            grad_gamma[j] += g[k] * xh[k];
        }
    }

    let mut grad_in = vec![T::zero(); m * d];
    if cache.batch_coupled {
        let mf = T::from_count(m);
        for j in 0..d {
            // Σdx̂ = γ·Σdy and Σ(dx̂·x̂) = γ·Σ(dy·x̂).
            let sum_dxh = gamma[j] * grad_beta[j];
            let sum_dxh_xh = gamma[j] * grad_gamma[j];
            let scale = cache.inv_std[j] / mf;
            for i in 0..m {
                let k = i * d + j;
                let dxh = gamma[j] * g[k];
                grad_in[k] = scale * (mf * dxh - sum_dxh - xh[k] * sum_dxh_xh);
            }
        }
    } else {
        for i in 0..m {
            for j in 0..d {
                let k = i * d + j;
                grad_in[k] = g[k] * gamma[j] * cache.inv_std[j];
            }
        }
    }

    let grads = BatchNormGrads {
        grad_in: Tensor::new(vec![m, d], grad_in)?,
        grad_gamma: Tensor::vector(grad_gamma),
        grad_beta: Tensor::vector(grad_beta),
    };
    grads.grad_in.ensure_finite("batchnorm_backward")?;
    Ok(grads)
}

/// Batch normalization layer over `[m×d]` inputs with gradient buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub state: BatchNormState<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
    /// When false, `gamma`/`beta` stay fixed even though the layer trains
    /// its running statistics.
    pub affine_trainable: bool,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize, config: BatchNormConfig) -> Result<Self> {
        Ok(Self {
            state: BatchNormState::new(features, config)?,
            grad_gamma: Tensor::zeros(&[features]),
            grad_beta: Tensor::zeros(&[features]),
            affine_trainable: true,
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, cache) = batchnorm_forward(x, &mut self.state)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::MissingCache("batchnorm_backward"))?;
        let grads = batchnorm_backward(grad_out, cache, &self.state)?;
        self.grad_gamma = grads.grad_gamma;
        self.grad_beta = grads.grad_beta;
        Ok(grads.grad_in)
    }

    /// Whether an optimizer may update `gamma` and `beta`.
    pub fn trainable(&self) -> bool {
        self.affine_trainable && !self.state.frozen
    }
}

/// Per-channel batch normalization of `[b×c×h×w]` activations.
#[derive(Debug, Clone)]
pub struct SpatialBatchNorm<T> {
    pub inner: BatchNorm<T>,
    input_shape: Vec<usize>,
}

impl<T: Scalar> SpatialBatchNorm<T> {
    pub fn new(channels: usize, config: BatchNormConfig) -> Result<Self> {
        Ok(Self {
            inner: BatchNorm::new(channels, config)?,
            input_shape: Vec::new(),
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = nchw_to_rows(x)?;
        let out = self.inner.forward(&rows)?;
        self.input_shape = x.shape().to_vec();
        rows_to_nchw(&out, x.shape())
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(
                "spatial_batchnorm_backward",
                grad_out.shape(),
                &self.input_shape,
            ));
        }
        let rows = nchw_to_rows(grad_out)?;
        let grad = self.inner.backward(&rows)?;
        rows_to_nchw(&grad, &self.input_shape)
    }
}
