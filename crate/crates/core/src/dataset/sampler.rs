//! Training-pair assembly with a randomized forecast interval.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{delta_target, DatasetError, Series, StateTensor, STEP_HOURS};

/// Draws the forecast interval δt uniformly from a fixed support.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaTSampler {
    support: Vec<u32>,
}

impl Default for DeltaTSampler {
    fn default() -> Self {
        Self {
            support: vec![6, 12, 24],
        }
    }
}

impl DeltaTSampler {
    pub fn new(support: Vec<u32>) -> Result<Self, DatasetError> {
        if support.is_empty() {
            return Err(DatasetError::InvalidInput("empty δt support".into()));
        }
        if let Some(bad) = support.iter().find(|&&h| h == 0 || h as i64 % STEP_HOURS != 0) {
            return Err(DatasetError::InvalidInput(format!(
                "δt {bad}h is not a positive multiple of 6"
            )));
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.support[rng.gen_range(0..self.support.len())]
    }
}

/// What to do when the drawn δt runs past the end of the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutOfRange {
    Error,
    /// Redraw δt among the values that still fit.
    Resample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x0: StateTensor,
    pub delta_hours: u32,
    /// `state(t0 + δt) − state(t0)` in normalized units, `[V, H, W]`.
    pub target: Vec<f32>,
}

const MAX_REDRAWS: usize = 10_000;

/// Builds one pair from a normalized series starting at `t_index`.
pub fn make_training_pair<R: Rng + ?Sized>(
    series: &Series,
    t_index: usize,
    sampler: &DeltaTSampler,
    rng: &mut R,
    policy: OutOfRange,
) -> Result<TrainingPair, DatasetError> {
    if !series.normalized() {
        return Err(DatasetError::InvalidInput(
            "training pairs are built from a normalized series".into(),
        ));
    }
    if t_index >= series.len() {
        return Err(DatasetError::OutOfRange(format!(
            "start index {t_index} beyond series of length {}",
            series.len()
        )));
    }
    let step = STEP_HOURS as usize;
    let fits = |h: u32| t_index + h as usize / step < series.len();
    let mut delta_hours = sampler.sample(rng);
    if !fits(delta_hours) {
        match policy {
            OutOfRange::Error => {
                return Err(DatasetError::OutOfRange(format!(
                    "index {t_index} + {delta_hours}h exceeds series of length {}",
                    series.len()
                )))
            }
            OutOfRange::Resample => {
                if !sampler.support().iter().any(|&h| fits(h)) {
                    return Err(DatasetError::OutOfRange(format!(
                        "no δt in {:?} fits after index {t_index}",
                        sampler.support()
                    )));
                }
                let mut tries = 0;
                while !fits(delta_hours) {
                    tries += 1;
                    if tries > MAX_REDRAWS {
                        return Err(DatasetError::OutOfRange("δt redraw limit reached".into()));
                    }
                    delta_hours = sampler.sample(rng);
                }
            }
        }
    }
    let x0 = &series.states[t_index];
    let xt = &series.states[t_index + delta_hours as usize / STEP_HOURS as usize];
    Ok(TrainingPair {
        x0: x0.clone(),
        delta_hours,
        target: delta_target(x0, xt)?,
    })
}
