//! Channel catalog, snapshots and normalization, randomized-interval
//! training pairs, the synthetic atmosphere and the series file format.

mod catalog;
mod format;
mod sampler;
mod state;
mod synth;

use thiserror::Error;

pub use catalog::{ChannelInfo, Group, GroupSplit, Level, VariableCatalog, VariableSpec, PRESSURE_LEVELS};
pub use format::{read_manifest, read_series, write_series, ChunkEntry, Manifest, CHUNK_STEPS, MANIFEST_FILE};
pub use sampler::{make_training_pair, DeltaTSampler, OutOfRange, TrainingPair};
pub use state::{compute_norm_stats, delta_target, NormStats, Series, StateTensor, STEP_HOURS};
pub use synth::{synth_atmosphere, SynthConfig};

use crate::grids::GridError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("channel {0} has zero variance")]
    DegenerateChannel(usize),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("{file} is truncated: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PartialEq for DatasetError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
