use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{acc_field, error_sums};
use super::rollout::{check_step, persistence, rollout};
use super::{Climatology, EvalError, ForecastTrajectory};
use crate::dataset::{NormStats, Series, StateTensor, STEP_HOURS};
use crate::grids::{latitude_weights, region_mask, Region, RegionMask};
use crate::stepsnet::{ModelParams, StepsNet};

/// Produces trajectories from physical-unit initial states.
#[derive(Debug, Clone, Copy)]
pub enum Forecaster<'a> {
    Model {
        net: &'a StepsNet,
        params: &'a ModelParams<f32>,
        norm: &'a NormStats,
    },
    Persistence,
}

impl Forecaster<'_> {
    pub fn forecast(&self, x0: &StateTensor, n_steps: usize, step_hours: u32) -> Result<ForecastTrajectory, EvalError> {
        match self {
            Forecaster::Model { net, params, norm } => {
                rollout(net, params, &norm.normalize(x0)?, norm, n_steps, step_hours)
            }
            Forecaster::Persistence => persistence(x0, n_steps, step_hours),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Channel labels such as `Z500` or `MSLP`.
    pub variables: Vec<String>,
    pub regions: Vec<Region>,
    pub n_steps: usize,
    pub step_hours: u32,
    /// Indices into the truth series of the initial states.
    pub init_indices: Vec<usize>,
    pub jobs: usize,
}

impl EvalConfig {
    pub fn lead_hours(&self) -> Vec<u32> {
        (1..=self.n_steps).map(|k| k as u32 * self.step_hours).collect()
    }

    /// Every admissible initial index of `series`, thinned by `stride`.
    pub fn all_inits(series_len: usize, n_steps: usize, step_hours: u32, stride: usize) -> Vec<usize> {
        let span = n_steps * step_hours as usize / STEP_HOURS as usize;
        (0..series_len.saturating_sub(span)).step_by(stride.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub variable: String,
    pub region: String,
    pub lead_hours: u32,
    pub metric: String,
    /// `None` marks an undefined score.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

pub const SCORE_HEADER: &str = "variable,region,lead_hours,metric,value";
pub const UNDEFINED: &str = "NA";

impl ScoreTable {
    pub fn get(&self, variable: &str, region: &str, lead: u32, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variable == variable && r.region == region && r.lead_hours == lead && r.metric == metric)
            .and_then(|r| r.value)
    }

    /// Appends `other` with `suffix` added to its metric names.
    pub fn extend_with_suffix(&mut self, other: ScoreTable, suffix: &str) {
        self.rows.extend(other.rows.into_iter().map(|mut r| {
            r.metric.push_str(suffix);
            r
        }));
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SCORE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let v = r.value.map_or(UNDEFINED.to_string(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{v}", r.variable, r.region, r.lead_hours, r.metric);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines();
        if lines.next() != Some(SCORE_HEADER) {
            return Err(EvalError::InvalidInput("not a score table".into()));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || EvalError::InvalidInput(format!("malformed score row '{l}'"));
                if f.len() != 5 {
                    return Err(bad());
                }
                Ok(ScoreRow {
                    variable: f[0].into(),
                    region: f[1].into(),
                    lead_hours: f[2].parse().map_err(|_| bad())?,
                    metric: f[3].into(),
                    value: if f[4] == UNDEFINED { None } else { Some(f[4].parse().map_err(|_| bad())?) },
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }
}

/// Scores of one initial condition, `[variable][region][lead]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitScores {
    pub init: usize,
    pub mse: Vec<Vec<Vec<Option<f64>>>>,
    pub acc: Vec<Vec<Vec<Option<f64>>>>,
}

struct Prepared {
    channels: Vec<usize>,
    masks: Vec<RegionMask>,
    lat_w: Vec<f64>,
    leads: Vec<u32>,
}

fn prepare(truth: &Series, cfg: &EvalConfig) -> Result<Prepared, EvalError> {
    check_step(cfg.step_hours)?;
    if truth.normalized() {
        return Err(EvalError::InvalidInput("scores are computed against physical-unit truth".into()));
    }
    let channels = cfg
        .variables
        .iter()
        .map(|v| {
            truth
                .catalog
                .channel_by_label(v)
                .ok_or_else(|| EvalError::InvalidInput(format!("unknown variable '{v}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let span = cfg.n_steps * cfg.step_hours as usize / STEP_HOURS as usize;
    if let Some(&bad) = cfg.init_indices.iter().find(|&&i| i + span >= truth.len()) {
        return Err(EvalError::InvalidInput(format!(
            "initial index {bad} leaves no room for {}h of verification",
            cfg.n_steps * cfg.step_hours as usize
        )));
    }
    Ok(Prepared {
        channels,
        masks: cfg.regions.iter().map(|&r| region_mask(&truth.grid, r)).collect(),
        lat_w: latitude_weights(&truth.grid)?,
        leads: cfg.lead_hours(),
    })
}

fn score_init(
    forecaster: &Forecaster,
    truth: &Series,
    clim: &Climatology,
    cfg: &EvalConfig,
    prep: &Prepared,
    init: usize,
) -> Result<InitScores, EvalError> {
    let traj = forecaster.forecast(&truth.states[init], cfg.n_steps, cfg.step_hours)?;
    let stride = cfg.step_hours as usize / STEP_HOURS as usize;
    let empty = || vec![vec![vec![None; prep.leads.len()]; prep.masks.len()]; prep.channels.len()];
    let (mut mse, mut acc) = (empty(), empty());
    for (li, &lead) in prep.leads.iter().enumerate() {
        let Some(f) = traj.at_lead(lead) else { continue };
        let t = &truth.states[init + (li + 1) * stride];
        for (vi, &c) in prep.channels.iter().enumerate() {
            for (ri, mask) in prep.masks.iter().enumerate() {
                mse[vi][ri][li] = error_sums(f.channel(c), t.channel(c), mask, &prep.lat_w)?.mse();
                acc[vi][ri][li] = acc_field(f.channel(c), t.channel(c), clim.channel(c), mask, &prep.lat_w)?;
            }
        }
    }
    Ok(InitScores { init, mse, acc })
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Combines per-initialization scores. Partials are sorted by init index
/// first, so the result does not depend on the order they arrive in.
/// RMSE is the root of the mean MSE over inits; ACC is the mean ACC.
pub fn merge_scores(mut partials: Vec<InitScores>, cfg: &EvalConfig) -> ScoreTable {
    partials.sort_by_key(|p| p.init);
    let leads = cfg.lead_hours();
    let mut rows = Vec::new();
    for (vi, var) in cfg.variables.iter().enumerate() {
        for (ri, region) in cfg.regions.iter().enumerate() {
            for (li, &lead) in leads.iter().enumerate() {
                let mse = mean_defined(partials.iter().map(|p| p.mse[vi][ri][li]));
                let acc = mean_defined(partials.iter().map(|p| p.acc[vi][ri][li]));
                for (metric, value) in [("rmse", mse.map(f64::sqrt)), ("acc", acc)] {
                    rows.push(ScoreRow {
                        variable: var.clone(),
                        region: region.name().into(),
                        lead_hours: lead,
                        metric: metric.into(),
                        value,
                    });
                }
            }
        }
    }
    ScoreTable { rows }
}

/// Per-initialization scores, computed on up to `cfg.jobs` threads.
pub fn score_inits(
    forecaster: &Forecaster,
    truth: &Series,
    clim: &Climatology,
    cfg: &EvalConfig,
) -> Result<Vec<InitScores>, EvalError> {
    let prep = prepare(truth, cfg)?;
    let jobs = cfg.jobs.clamp(1, cfg.init_indices.len().max(1));
    if jobs == 1 {
        return cfg
            .init_indices
            .iter()
            .map(|&i| score_init(forecaster, truth, clim, cfg, &prep, i))
            .collect();
    }
    let chunk = cfg.init_indices.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .init_indices
            .chunks(chunk)
            .map(|inits| {
                let prep = &prep;
                s.spawn(move || {
                    inits
                        .iter()
                        .map(|&i| score_init(forecaster, truth, clim, cfg, prep, i))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(cfg.init_indices.len());
        for h in handles {
            all.extend(h.join().expect("scoring thread panicked")?);
        }
        Ok(all)
    })
}

pub fn evaluate(
    forecaster: &Forecaster,
    truth: &Series,
    clim: &Climatology,
    cfg: &EvalConfig,
) -> Result<ScoreTable, EvalError> {
    if cfg.init_indices.is_empty() {
        return Err(EvalError::InvalidInput("no initial conditions to score".into()));
    }
    Ok(merge_scores(score_inits(forecaster, truth, clim, cfg)?, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaRow {
    pub variable: String,
    pub lead_hours: u32,
    pub rmse_raw: f64,
    pub rmse_ema: f64,
    /// `(raw − ema) / raw · 100`; positive when the shadow weights help.
    pub pct_reduction: f64,
}

/// Reference reductions from shadow weights at full scale, carried as
/// context next to the toy-scale comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaReference {
    pub mean_reduction_pct: f64,
    pub day3_reduction_pct: f64,
    pub day10_reduction_pct: f64,
    pub note: String,
}

impl Default for EmaReference {
    fn default() -> Self {
        Self {
            mean_reduction_pct: 3.34,
            day3_reduction_pct: 4.75,
            day10_reduction_pct: 2.0,
            note: "full-scale reanalysis training with decay 0.9; the sign need not carry over to toy runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaComparison {
    pub rows: Vec<EmaRow>,
    pub mean_pct_reduction: f64,
    pub reference: EmaReference,
}

pub fn pct_reduction(raw: f64, ema: f64) -> f64 {
    if raw == ema {
        0.0
    } else {
        (raw - ema) / raw * 100.0
    }
}

/// Global RMSE of raw against shadow weights, per variable and lead.
pub fn compare_ema(
    net: &StepsNet,
    raw: &ModelParams<f32>,
    ema: &ModelParams<f32>,
    norm: &NormStats,
    truth: &Series,
    clim: &Climatology,
    cfg: &EvalConfig,
) -> Result<EmaComparison, EvalError> {
    if raw.names != ema.names || raw.tensors.iter().zip(&ema.tensors).any(|(a, b)| a.shape() != b.shape()) {
        return Err(EvalError::InvalidInput("raw and EMA weights have different layouts".into()));
    }
    let cfg = EvalConfig {
        regions: vec![Region::Global],
        ..cfg.clone()
    };
    let run = |params| {
        evaluate(&Forecaster::Model { net, params, norm }, truth, clim, &cfg)
    };
    let (a, b) = (run(raw)?, run(ema)?);
    let mut rows = Vec::new();
    for var in &cfg.variables {
        for lead in cfg.lead_hours() {
            let r = a.get(var, "global", lead, "rmse");
            let e = b.get(var, "global", lead, "rmse");
            if let (Some(r), Some(e)) = (r, e) {
                rows.push(EmaRow {
                    variable: var.clone(),
                    lead_hours: lead,
                    rmse_raw: r,
                    rmse_ema: e,
                    pct_reduction: pct_reduction(r, e),
                });
            }
        }
    }
    let mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.pct_reduction).sum::<f64>() / rows.len() as f64
    };
    Ok(EmaComparison {
        rows,
        mean_pct_reduction: mean,
        reference: EmaReference::default(),
    })
}

impl EmaComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,lead_hours,rmse_raw,rmse_ema,pct_reduction\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.variable, r.lead_hours, r.rmse_raw, r.rmse_ema, r.pct_reduction
            );
        }
        s
    }

    /// Writes `<stem>.csv` and the `<stem>.json` metadata sidecar.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let meta = serde_json::json!({
            "mean_pct_reduction": self.mean_pct_reduction,
            "rows": self.rows.len(),
            "reference": self.reference,
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}
