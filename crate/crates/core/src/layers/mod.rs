//! Layers with hand-written backward passes and the model built from them.

pub mod batchnorm;
pub mod model;
pub mod simple;

use serde::{Deserialize, Serialize};

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, BatchNormConfig,
    BatchNormGrads, BatchNormState, SpatialBatchNorm,
};
pub use model::{Layer, LayerKind, Model, ModelSpec, Param, ParamKind, TrunkLayer};
pub use simple::{AdaptiveAvgPool, Conv2d, Dense, Dropout, Relu};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}
