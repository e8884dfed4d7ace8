use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::{Float, Tape, Tensor, Var};
use crate::dataset::{Level, VariableCatalog};
use crate::grids::{latitude_weights, LatLonGrid};

/// Raw weight of each channel is its pressure level in hPa (surface fields
/// count as 1000 hPa), normalized so the weights average to 1. Channels
/// nearer the ground, where the air is densest, weigh more.
pub fn pressure_weights(catalog: &VariableCatalog) -> Vec<f64> {
    let raw: Vec<f64> = catalog
        .channels()
        .map(|c| match c.level {
            Level::Pressure(hpa) => hpa as f64,
            Level::Surface => 1000.0,
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|r| r / mean).collect()
}

/// Per-channel weights `w` and per-latitude weights `lat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w: Vec<f64>,
    pub lat: Vec<f64>,
    pub n_lon: usize,
}

impl LossWeights {
    pub fn new(catalog: &VariableCatalog, grid: &LatLonGrid) -> Result<Self, TrainError> {
        Ok(Self {
            w: pressure_weights(catalog),
            lat: latitude_weights(grid)?,
            n_lon: grid.n_lon(),
        })
    }

    pub fn from_parts(w: Vec<f64>, lat: Vec<f64>, n_lon: usize) -> Result<Self, TrainError> {
        if w.is_empty() || lat.is_empty() || n_lon == 0 {
            return Err(TrainError::Config("empty loss weights".into()));
        }
        if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) || lat.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(TrainError::Config(
                "channel weights must be positive and latitude weights non-negative".into(),
            ));
        }
        Ok(Self { w, lat, n_lon })
    }

    pub fn uniform(v: usize, h: usize, w: usize) -> Self {
        Self {
            w: vec![1.0; v],
            lat: vec![1.0; h],
            n_lon: w,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len() * self.lat.len() * self.n_lon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `w(v)·L(i) / (V·H·W)` for every element of a `[V, H, W]` field.
    pub fn element_weights(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut out = Vec::with_capacity(self.len());
        for &wv in &self.w {
            for &li in &self.lat {
                out.extend(std::iter::repeat(wv * li / n).take(self.n_lon));
            }
        }
        out
    }
}

/// `(1/(V·H·W)) Σ w(v) L(i) (pred − target)²` over a `[V, H, W]` field.
pub fn weighted_mse<T: Float>(pred: &[T], target: &[T], weights: &LossWeights) -> Result<f64, TrainError> {
    if pred.len() != weights.len() || target.len() != weights.len() {
        return Err(TrainError::Shape(format!(
            "prediction {} / target {} / weights {} elements",
            pred.len(),
            target.len(),
            weights.len()
        )));
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite("loss input".into()));
    }
    let hw = weights.lat.len() * weights.n_lon;
    let mut total = 0.0;
    for (v, &wv) in weights.w.iter().enumerate() {
        for (i, &li) in weights.lat.iter().enumerate() {
            let base = v * hw + i * weights.n_lon;
            let row: f64 = (base..base + weights.n_lon)
                .map(|k| {
                    let e = pred[k].as_f64() - target[k].as_f64();
                    e * e
                })
                .sum();
            total += wv * li * row;
        }
    }
    Ok(total / weights.len() as f64)
}

/// The same loss recorded on a tape against a constant target.
pub fn weighted_mse_var<T: Float>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &[T],
    weights: &LossWeights,
) -> Result<Var, TrainError> {
    let shape = tape.shape(pred).to_vec();
    if target.len() != weights.len() || shape.iter().product::<usize>() != weights.len() {
        return Err(TrainError::Shape(format!(
            "prediction {shape:?} / target {} / weights {} elements",
            target.len(),
            weights.len()
        )));
    }
    let t = tape.constant(Tensor::new(shape.clone(), target.to_vec())?);
    let w = tape.constant(Tensor::new(
        shape,
        weights.element_weights().into_iter().map(T::of).collect(),
    )?);
    let e = tape.sub(pred, t)?;
    let sq = tape.mul(e, e)?;
    let weighted = tape.mul(sq, w)?;
    Ok(tape.sum(weighted)?)
}
