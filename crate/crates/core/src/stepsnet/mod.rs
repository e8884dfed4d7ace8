//! The two-stage forecaster: dynamics tokens pass through a first stack of
//! adaLN transformer blocks, are joined with the thermodynamic tokens and
//! pass through a second, wider stack that predicts the state increment.

mod block;
mod checkpoint;
mod complexity;
mod config;
mod embed;
mod model;
mod params;
mod patch;

use thiserror::Error;

pub use block::{adaln_block, BlockVars};
pub use checkpoint::{
    read_checkpoint, read_checkpoint_header, write_checkpoint, Checkpoint, CheckpointHeader, SetEntry,
    TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use complexity::{mac_count, monolithic_mac_count, param_count};
pub use config::ModelConfig;
pub use embed::{position_table, timestep_features};
pub use model::{ForwardOutput, StepsNet};
pub use params::{block_specs, init_specs, Init, ModelParams, ParamLayout, ParamSpec, BLOCK_TENSORS};
pub use patch::{patch_index, patchify, reflect_pad_lat, unpatchify, TokenGrid};

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch in {0}")]
    Checksum(String),
    #[error("checkpoint stores {found} tensors, expected {expected}")]
    Precision { found: String, expected: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}
