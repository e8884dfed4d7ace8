//! Weighted loss, AdamW with EMA shadow weights, and the training loop.

mod loss;
mod optim;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

pub use loss::{pressure_weights, weighted_mse, weighted_mse_var, LossWeights};
pub use optim::{
    adamw_step, clip_grad_norm, ema_update, AdamState, EmaState, Hyperparams, LrSchedule, NonFinitePolicy,
};
pub use trainer::{
    batch_loss_and_grads, steps_for_epochs, train, Sample, TrainConfig, TrainReport, TrainedModel,
    CHECKPOINT_FILE, METRICS_FILE,
};

use crate::autodiff::TensorError;
use crate::dataset::DatasetError;
use crate::grids::GridError;
use crate::stepsnet::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss became non-finite at step {step}; batch written to {}", dump.display())]
    NonFiniteLoss { step: usize, dump: PathBuf },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}
