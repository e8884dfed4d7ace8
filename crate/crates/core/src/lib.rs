//! Two-stage variable-aware transformer forecaster for gridded atmospheric
//! states, with the data, training and verification tooling around it.

pub mod autodiff;
pub mod dataset;
pub mod evaluation;
pub mod grids;
pub mod rng;
pub mod stepsnet;
pub mod training;
