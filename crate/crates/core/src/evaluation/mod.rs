//! Rollouts, latitude-weighted scores, raw-versus-shadow-weight comparison,
//! cyclone tracking and field dumps.

mod dump;
mod metrics;
mod rollout;
mod scores;
mod tracker;

use thiserror::Error;

pub use dump::{dump_fields, PANELS};
pub use metrics::{acc, acc_field, error_sums, rmse, rmse_field, Climatology, ErrorSums};
pub use rollout::{persistence, rollout, ForecastTrajectory};
pub use scores::{
    compare_ema, evaluate, merge_scores, pct_reduction, score_inits, EmaComparison, EmaReference, EmaRow,
    EvalConfig, Forecaster, InitScores, ScoreRow, ScoreTable, SCORE_HEADER, UNDEFINED,
};
pub use tracker::{
    intensity_difference, intensity_error_hpa, track_cyclone, track_error_km, track_fields, CycloneTrack,
    TrackPoint, DEFAULT_SEARCH_RADIUS_DEG,
};

use crate::dataset::DatasetError;
use crate::grids::GridError;
use crate::stepsnet::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("region '{0}' selects no cells")]
    EmptyMask(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("tracks cover different leads")]
    LeadMismatch,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}
