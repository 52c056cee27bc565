//! Loss, mixup, the SGD optimizer with learning-rate schedules, and the
//! training loop.

pub mod loss;
pub mod mixup;
pub mod optim;
pub mod trainer;

pub use loss::{one_hot, soft_weighted_cross_entropy, softmax, weighted_cross_entropy};
pub use mixup::{mix_with, mixed_sample_weights, mixup_batch, MixedBatch};
pub use optim::{lr_at, OptimConfig, Schedule, Sgd};
pub use trainer::{
    inverse_frequency_weights, predict_proba, split_loss, train_model, train_run, RunReport, TrainedRun,
};
