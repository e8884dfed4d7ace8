use serde::{Deserialize, Serialize};

use super::{DatasetError, VariableCatalog};
use crate::grids::LatLonGrid;

/// Hours between consecutive snapshots of every series.
pub const STEP_HOURS: i64 = 6;

/// One atmospheric snapshot, `[V, H, W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    values: Vec<f32>,
    shape: [usize; 3],
    /// Hours since the series epoch; always a multiple of six.
    pub valid_time: i64,
    pub normalized: bool,
}

impl StateTensor {
    pub fn new(
        values: Vec<f32>,
        shape: [usize; 3],
        valid_time: i64,
        normalized: bool,
    ) -> Result<Self, DatasetError> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(DatasetError::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                values.len()
            )));
        }
        if valid_time % STEP_HOURS != 0 {
            return Err(DatasetError::InvalidInput(format!(
                "valid time {valid_time}h is not 6-hour aligned"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite(format!("state value at flat index {pos}")));
        }
        Ok(Self {
            values,
            shape,
            valid_time,
            normalized,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn n_channels(&self) -> usize {
        self.shape[0]
    }

    pub fn cells(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.cells();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.values[(c * self.shape[1] + i) * self.shape[2] + j]
    }
}

/// A uniformly spaced (6-hourly) sequence of states on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub catalog: VariableCatalog,
    pub grid: LatLonGrid,
    pub states: Vec<StateTensor>,
}

impl Series {
    pub fn new(
        catalog: VariableCatalog,
        grid: LatLonGrid,
        states: Vec<StateTensor>,
    ) -> Result<Self, DatasetError> {
        let shape = [catalog.n_channels(), grid.n_lat(), grid.n_lon()];
        for (k, s) in states.iter().enumerate() {
            if s.shape() != shape {
                return Err(DatasetError::ShapeMismatch(format!(
                    "state {k} has shape {:?}, expected {shape:?}",
                    s.shape()
                )));
            }
            if k > 0 && s.valid_time != states[k - 1].valid_time + STEP_HOURS {
                return Err(DatasetError::InvalidInput(format!(
                    "state {k} breaks the 6-hour time axis"
                )));
            }
            if s.normalized != states[0].normalized {
                return Err(DatasetError::InvalidInput(
                    "series mixes normalized and physical states".into(),
                ));
            }
        }
        Ok(Self {
            catalog,
            grid,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.catalog.n_channels(), self.grid.n_lat(), self.grid.n_lon()]
    }

    pub fn normalized(&self) -> bool {
        self.states.first().is_some_and(|s| s.normalized)
    }

    /// Sub-series over an index range (clamped to the series length).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Series {
        let end = range.end.min(self.len());
        let start = range.start.min(end);
        Series {
            catalog: self.catalog.clone(),
            grid: self.grid.clone(),
            states: self.states[start..end].to_vec(),
        }
    }

    pub fn map_states(
        &self,
        f: impl Fn(&StateTensor) -> Result<StateTensor, DatasetError>,
    ) -> Result<Series, DatasetError> {
        let states = self.states.iter().map(f).collect::<Result<_, _>>()?;
        Series::new(self.catalog.clone(), self.grid.clone(), states)
    }
}

/// Per-channel mean and standard deviation in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population mean/std per channel over all snapshots and grid cells.
pub fn compute_norm_stats(states: &[StateTensor]) -> Result<NormStats, DatasetError> {
    if states.len() < 2 {
        return Err(DatasetError::InvalidInput(format!(
            "normalization statistics need at least 2 snapshots, got {}",
            states.len()
        )));
    }
    let shape = states[0].shape();
    if let Some(bad) = states.iter().position(|s| s.shape() != shape) {
        return Err(DatasetError::ShapeMismatch(format!("snapshot {bad} differs in shape")));
    }
    let n_ch = shape[0];
    let count = (states.len() * states[0].cells()) as f64;
    let mut mean = vec![0.0f64; n_ch];
    for s in states {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += s.channel(c).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; n_ch];
    for s in states {
        for (c, v) in var.iter_mut().enumerate() {
            *v += s
                .channel(c)
                .iter()
                .map(|&x| (x as f64 - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt()).collect();
    for (c, &s) in std.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(DatasetError::DegenerateChannel(c));
        }
    }
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, state: &StateTensor, want_normalized: bool) -> Result<(), DatasetError> {
        if state.n_channels() != self.n_channels() {
            return Err(DatasetError::ShapeMismatch(format!(
                "state has {} channels, statistics {}",
                state.n_channels(),
                self.n_channels()
            )));
        }
        if state.normalized != want_normalized {
            return Err(DatasetError::InvalidInput(format!(
                "expected a {} state",
                if want_normalized { "normalized" } else { "physical" }
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, state: &StateTensor) -> Result<StateTensor, DatasetError> {
        self.check(state, false)?;
        let n = state.cells();
        let values = state
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let c = k / n;
                ((v as f64 - self.mean[c]) / self.std[c]) as f32
            })
            .collect();
        StateTensor::new(values, state.shape(), state.valid_time, true)
    }

    pub fn denormalize(&self, state: &StateTensor) -> Result<StateTensor, DatasetError> {
        self.check(state, true)?;
        let n = state.cells();
        let values = state
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let c = k / n;
                (v as f64 * self.std[c] + self.mean[c]) as f32
            })
            .collect();
        StateTensor::new(values, state.shape(), state.valid_time, false)
    }

    pub fn normalize_series(&self, series: &Series) -> Result<Series, DatasetError> {
        series.map_states(|s| self.normalize(s))
    }
}

/// Residual target `xt − x0`, element-wise.
pub fn delta_target(x0: &StateTensor, xt: &StateTensor) -> Result<Vec<f32>, DatasetError> {
    if x0.shape() != xt.shape() {
        return Err(DatasetError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x0.shape(),
            xt.shape()
        )));
    }
    if x0.normalized != xt.normalized {
        return Err(DatasetError::InvalidInput(
            "delta between a normalized and a physical state".into(),
        ));
    }
    Ok(xt.values().iter().zip(x0.values()).map(|(b, a)| b - a).collect())
}
