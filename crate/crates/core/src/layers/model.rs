//! Model assembly: a small convolutional trunk followed by the classifier
//! head `AAP → BN → Dropout → Dense → ReLU → BN → Dropout → Dense → [BN]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{BatchNorm, BatchNormConfig, SpatialBatchNorm};
use super::simple::{AdaptiveAvgPool, Conv2d, Dense, Dropout, Relu};
use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrunkLayer {
    Conv {
        out_channels: usize,
        kernel_size: usize,
    },
    BatchNorm,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub trunk: Vec<TrunkLayer>,
    pub hidden_size: usize,
    pub num_classes: usize,
    /// Appends a batch normalization over the logits.
    pub final_bn: bool,
    /// Whether the final BN's `gamma`/`beta` are trained. Off by default:
    /// a trainable shift learns the class prior and undoes the centering.
    pub final_bn_learnable: bool,
    /// Rates of the first and second head dropout.
    pub dropout: [f64; 2],
    pub batch_norm: BatchNormConfig,
}

impl ModelSpec {
    /// Conv(1→8,3×3)-BN-ReLU-Conv(8→16,3×3)-BN-ReLU trunk on 16×16 images.
    pub fn desk_scale(final_bn: bool) -> Self {
        Self {
            in_channels: 1,
            image_size: 16,
            trunk: vec![
                TrunkLayer::Conv {
                    out_channels: 8,
                    kernel_size: 3,
                },
                TrunkLayer::BatchNorm,
                TrunkLayer::Relu,
                TrunkLayer::Conv {
                    out_channels: 16,
                    kernel_size: 3,
                },
                TrunkLayer::BatchNorm,
                TrunkLayer::Relu,
            ],
            hidden_size: 32,
            num_classes: 2,
            final_bn,
            final_bn_learnable: false,
            dropout: [0.25, 0.5],
            batch_norm: BatchNormConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "only binary classification is supported, got {} classes",
                self.num_classes
            )));
        }
        if self.in_channels == 0 || self.hidden_size == 0 {
            return Err(Error::Config("channel and hidden sizes must be positive".into()));
        }
        for &rate in &self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        let mut channels = self.in_channels;
        let mut size = self.image_size;
        for layer in &self.trunk {
            if let TrunkLayer::Conv {
                out_channels,
                kernel_size,
            } = *layer
            {
                if kernel_size == 0 || kernel_size > size || out_channels == 0 {
                    return Err(Error::Config(format!(
                        "conv {channels}→{out_channels} with kernel {kernel_size} does not fit a {size}×{size} map"
                    )));
                }
                size = size - kernel_size + 1;
                channels = out_channels;
            }
        }
        Ok(())
    }

    /// Channel count entering the head.
    pub fn trunk_channels(&self) -> usize {
        self.trunk
            .iter()
            .rev()
            .find_map(|l| match *l {
                TrunkLayer::Conv { out_channels, .. } => Some(out_channels),
                _ => None,
            })
            .unwrap_or(self.in_channels)
    }

    /// Layer kinds of the full model in execution order.
    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        let mut kinds: Vec<LayerKind> = self
            .trunk
            .iter()
            .map(|l| match l {
                TrunkLayer::Conv { .. } => LayerKind::Conv,
                TrunkLayer::BatchNorm => LayerKind::SpatialBatchNorm,
                TrunkLayer::Relu => LayerKind::Relu,
            })
            .collect();
        kinds.extend(HEAD);
        if self.final_bn {
            kinds.push(LayerKind::BatchNorm);
        }
        kinds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    SpatialBatchNorm,
    Relu,
    AdaptiveAvgPool,
    BatchNorm,
    Dropout,
    Dense,
}

const HEAD: [LayerKind; 8] = [
    LayerKind::AdaptiveAvgPool,
    LayerKind::BatchNorm,
    LayerKind::Dropout,
    LayerKind::Dense,
    LayerKind::Relu,
    LayerKind::BatchNorm,
    LayerKind::Dropout,
    LayerKind::Dense,
];

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    SpatialBatchNorm(SpatialBatchNorm<T>),
    Relu(Relu),
    AdaptiveAvgPool(AdaptiveAvgPool),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout),
    Dense(Dense<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::SpatialBatchNorm(_) => LayerKind::SpatialBatchNorm,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::AdaptiveAvgPool(_) => LayerKind::AdaptiveAvgPool,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::SpatialBatchNorm(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::AdaptiveAvgPool(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
        }
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(g),
            Layer::SpatialBatchNorm(l) => l.backward(g),
            Layer::Relu(l) => l.backward(g),
            Layer::AdaptiveAvgPool(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
        }
    }

    fn batch_norm_mut(&mut self) -> Option<&mut BatchNorm<T>> {
        match self {
            Layer::SpatialBatchNorm(l) => Some(&mut l.inner),
            Layer::BatchNorm(l) => Some(l),
            _ => None,
        }
    }

    fn batch_norm(&self) -> Option<&BatchNorm<T>> {
        match self {
            Layer::SpatialBatchNorm(l) => Some(&l.inner),
            Layer::BatchNorm(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Dense or convolution weights; the only kind weight decay touches.
    Weight,
    Bias,
    Scale,
    Shift,
}

/// Mutable view of one parameter tensor and its latest gradient.
pub struct Param<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// False for frozen BN layers and a fixed final BN.
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<Layer<T>>,
    final_bn: Option<usize>,
    mode: Mode,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a model; `seed` drives weight init and dropout.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bn = spec.batch_norm;
        let mut layers = Vec::new();
        let mut channels = spec.in_channels;
        for layer in &spec.trunk {
            layers.push(match *layer {
                TrunkLayer::Conv {
                    out_channels,
                    kernel_size,
                } => {
                    let conv = Conv2d::new(channels, out_channels, kernel_size, &mut rng);
                    channels = out_channels;
                    Layer::Conv(conv)
                }
                TrunkLayer::BatchNorm => Layer::SpatialBatchNorm(SpatialBatchNorm::new(channels, bn)?),
                TrunkLayer::Relu => Layer::Relu(Relu::default()),
            });
        }
        let hidden = spec.hidden_size;
        let classes = spec.num_classes;
        let dropout_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD6E8_FEB8_6659_FD93;
        layers.push(Layer::AdaptiveAvgPool(AdaptiveAvgPool::default()));
        layers.push(Layer::BatchNorm(BatchNorm::new(channels, bn)?));
        layers.push(Layer::Dropout(Dropout::new(spec.dropout[0], dropout_seed)?));
        layers.push(Layer::Dense(Dense::new(channels, hidden, &mut rng)));
        layers.push(Layer::Relu(Relu::default()));
        layers.push(Layer::BatchNorm(BatchNorm::new(hidden, bn)?));
        layers.push(Layer::Dropout(Dropout::new(spec.dropout[1], dropout_seed.wrapping_add(1))?));
        layers.push(Layer::Dense(Dense::new(hidden, classes, &mut rng)));
        let final_bn = if spec.final_bn {
            let mut layer = BatchNorm::new(classes, bn)?;
            layer.affine_trainable = spec.final_bn_learnable;
            layers.push(Layer::BatchNorm(layer));
            Some(layers.len() - 1)
        } else {
            None
        };
        let mut model = Self {
            spec: spec.clone(),
            layers,
            final_bn,
            mode: Mode::Train,
        };
        model.set_mode(Mode::Train);
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        for layer in &mut self.layers {
            match layer {
                Layer::Dropout(d) => d.mode = mode,
                other => {
                    if let Some(bn) = other.batch_norm_mut() {
                        bn.state.mode = mode;
                    }
                }
            }
        }
    }

    /// Freezes or unfreezes the trunk BN layers. Head BN layers, including
    /// the final one, always train.
    pub fn set_bn_frozen(&mut self, frozen: bool) {
        for layer in &mut self.layers {
            if let Layer::SpatialBatchNorm(bn) = layer {
                bn.inner.state.frozen = frozen;
            }
        }
    }

    pub fn final_bn(&self) -> Option<&BatchNorm<T>> {
        self.final_bn.and_then(|i| self.layers[i].batch_norm())
    }

    pub fn final_bn_mut(&mut self) -> Option<&mut BatchNorm<T>> {
        let i = self.final_bn?;
        self.layers[i].batch_norm_mut()
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(Layer::batch_norm)
    }

    /// Runs the model in its current mode and returns `[m×num_classes]` logits.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = &self.spec;
        let expected = [x.shape().first().copied().unwrap_or(0), s.in_channels, s.image_size, s.image_size];
        if x.shape() != expected {
            return Err(Error::shape("model_forward", x.shape(), &expected));
        }
        if x.shape()[0] == 0 {
            return Err(Error::EmptyBatch("model_forward"));
        }
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Sets the mode, then runs [`Model::forward`].
    pub fn forward_mode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.set_mode(mode);
        self.forward(x)
    }

    /// Backpropagates `grad_logits` through the last forward pass, leaving
    /// parameter gradients in place and returning the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Parameters in model order.
    pub fn params(&mut self) -> Vec<Param<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push(Param {
                        name: format!("{i}.conv.kernel"),
                        kind: ParamKind::Weight,
                        value: &mut c.kernel,
                        grad: &c.grad_kernel,
                        trainable: true,
                    });
                    out.push(Param {
                        name: format!("{i}.conv.bias"),
                        kind: ParamKind::Bias,
                        value: &mut c.bias,
                        grad: &c.grad_bias,
                        trainable: true,
                    });
                }
                Layer::Dense(d) => {
                    out.push(Param {
                        name: format!("{i}.dense.weight"),
                        kind: ParamKind::Weight,
                        value: &mut d.weight,
                        grad: &d.grad_weight,
                        trainable: true,
                    });
                    out.push(Param {
                        name: format!("{i}.dense.bias"),
                        kind: ParamKind::Bias,
                        value: &mut d.bias,
                        grad: &d.grad_bias,
                        trainable: true,
                    });
                }
                other => {
                    if let Some(bn) = other.batch_norm_mut() {
                        let trainable = bn.trainable();
                        let BatchNorm {
                            state,
                            grad_gamma,
                            grad_beta,
                            ..
                        } = bn;
                        out.push(Param {
                            name: format!("{i}.bn.gamma"),
                            kind: ParamKind::Scale,
                            value: &mut state.gamma,
                            grad: grad_gamma,
                            trainable,
                        });
                        out.push(Param {
                            name: format!("{i}.bn.beta"),
                            kind: ParamKind::Shift,
                            value: &mut state.beta,
                            grad: grad_beta,
                            trainable,
                        });
                    }
                }
            }
        }
        out
    }

    /// Every tensor needed to restore the model: parameters plus BN running
    /// statistics, in model order.
    pub fn state_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.kernel, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                other => {
                    if let Some(bn) = other.batch_norm() {
                        let s = &bn.state;
                        out.extend([&s.gamma, &s.beta, &s.running_mean, &s.running_var]);
                    }
                }
            }
        }
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.kernel, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                other => {
                    if let Some(bn) = other.batch_norm_mut() {
                        let s = &mut bn.state;
                        out.extend([
                            &mut s.gamma,
                            &mut s.beta,
                            &mut s.running_mean,
                            &mut s.running_var,
                        ]);
                    }
                }
            }
        }
        out
    }

    /// Active-unit masks of every ReLU from the last forward pass.
    pub fn relu_masks(&self) -> Vec<Vec<bool>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Relu(r) => Some(r.mask().to_vec()),
                _ => None,
            })
            .collect()
    }
}
