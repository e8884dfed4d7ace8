use super::{EvalError, ForecastTrajectory};
use crate::dataset::{Series, StateTensor};
use crate::grids::RegionMask;

/// Weighted squared-error sums over one masked field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorSums {
    pub weighted_sq: f64,
    pub weight: f64,
}

impl ErrorSums {
    pub fn mse(&self) -> Option<f64> {
        (self.weight > 0.0).then(|| self.weighted_sq / self.weight)
    }
}

fn check_field(n: usize, mask: &RegionMask, lat_w: &[f64]) -> Result<(), EvalError> {
    if n != mask.mask.len() || lat_w.len() != mask.n_lat {
        return Err(EvalError::Shape(format!(
            "field of {n} cells against a {}x{} mask and {} latitude weights",
            mask.n_lat,
            mask.n_lon,
            lat_w.len()
        )));
    }
    if mask.count() == 0 {
        return Err(EvalError::EmptyMask(mask.region.name().into()));
    }
    Ok(())
}

pub fn error_sums(f: &[f32], t: &[f32], mask: &RegionMask, lat_w: &[f64]) -> Result<ErrorSums, EvalError> {
    check_field(f.len(), mask, lat_w)?;
    if t.len() != f.len() {
        return Err(EvalError::Shape("forecast and truth differ in size".into()));
    }
    let mut s = ErrorSums::default();
    for (i, &l) in lat_w.iter().enumerate() {
        for j in 0..mask.n_lon {
            if mask.get(i, j) {
                let k = i * mask.n_lon + j;
                let e = f[k] as f64 - t[k] as f64;
                s.weighted_sq += l * e * e;
                s.weight += l;
            }
        }
    }
    Ok(s)
}

/// `sqrt(Σ L e² / Σ L)` over the masked cells of one `[H, W]` field.
pub fn rmse_field(f: &[f32], t: &[f32], mask: &RegionMask, lat_w: &[f64]) -> Result<f64, EvalError> {
    error_sums(f, t, mask, lat_w)?
        .mse()
        .map(f64::sqrt)
        .ok_or_else(|| EvalError::EmptyMask(format!("{} (zero total weight)", mask.region.name())))
}

/// Latitude-weighted anomaly correlation over the masked cells. `None` when
/// either anomaly field has zero weighted variance.
pub fn acc_field(
    f: &[f32],
    t: &[f32],
    clim: &[f64],
    mask: &RegionMask,
    lat_w: &[f64],
) -> Result<Option<f64>, EvalError> {
    check_field(f.len(), mask, lat_w)?;
    if t.len() != f.len() || clim.len() != f.len() {
        return Err(EvalError::Shape("forecast, truth and climatology differ in size".into()));
    }
    let (mut ft, mut ff, mut tt) = (0.0, 0.0, 0.0);
    for (i, &l) in lat_w.iter().enumerate() {
        for j in 0..mask.n_lon {
            if mask.get(i, j) {
                let k = i * mask.n_lon + j;
                let fa = f[k] as f64 - clim[k];
                let ta = t[k] as f64 - clim[k];
                ft += l * fa * ta;
                ff += l * fa * fa;
                tt += l * ta * ta;
            }
        }
    }
    if ff <= 0.0 || tt <= 0.0 {
        return Ok(None);
    }
    Ok(Some((ft / (ff * tt).sqrt()).clamp(-1.0, 1.0)))
}

fn aligned<'a>(
    traj: &'a ForecastTrajectory,
    truth: &'a [StateTensor],
) -> Result<impl Iterator<Item = (&'a StateTensor, &'a StateTensor)>, EvalError> {
    if truth.len() < traj.len() {
        return Err(EvalError::Shape(format!(
            "{} truth states for {} forecast states",
            truth.len(),
            traj.len()
        )));
    }
    Ok(traj.states.iter().zip(truth))
}

/// RMSE of one channel at every lead; `truth[k]` verifies `traj.states[k]`.
pub fn rmse(
    traj: &ForecastTrajectory,
    truth: &[StateTensor],
    channel: usize,
    mask: &RegionMask,
    lat_w: &[f64],
) -> Result<Vec<f64>, EvalError> {
    aligned(traj, truth)?
        .map(|(f, t)| rmse_field(f.channel(channel), t.channel(channel), mask, lat_w))
        .collect()
}

pub fn acc(
    traj: &ForecastTrajectory,
    truth: &[StateTensor],
    clim: &Climatology,
    channel: usize,
    mask: &RegionMask,
    lat_w: &[f64],
) -> Result<Vec<Option<f64>>, EvalError> {
    let c = clim.channel(channel);
    aligned(traj, truth)?
        .map(|(f, t)| acc_field(f.channel(channel), t.channel(channel), c, mask, lat_w))
        .collect()
}

/// Per-channel, per-cell mean state in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub mean: Vec<f64>,
    pub shape: [usize; 3],
    pub source: String,
}

impl Climatology {
    pub fn from_series(series: &Series, source: &str) -> Result<Self, EvalError> {
        if series.is_empty() {
            return Err(EvalError::InvalidInput("climatology needs at least one state".into()));
        }
        if series.normalized() {
            return Err(EvalError::InvalidInput("climatology is computed in physical units".into()));
        }
        let shape = series.shape();
        let mut mean = vec![0.0; shape.iter().product()];
        for s in &series.states {
            for (m, &v) in mean.iter_mut().zip(s.values()) {
                *m += v as f64;
            }
        }
        let n = series.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Self {
            mean,
            shape,
            source: source.into(),
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let cells = self.shape[1] * self.shape[2];
        &self.mean[c * cells..(c + 1) * cells]
    }
}
