//! Hand-written CNN training library for studying a final batch-normalization
//! layer placed between the last dense layer and the softmax on heavily
//! imbalanced binary image classification.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); training and
//! the experiment harness run in `f64`.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use config::{Flags, Hyper, TrainConfig};
pub use error::{Error, Result};
pub use layers::{Mode, Model, ModelSpec};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use training::RunReport;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
