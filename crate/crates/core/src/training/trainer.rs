use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adamw_step, clip_grad_norm, ema_update, weighted_mse_var, AdamState, EmaState, Hyperparams, LossWeights,
    LrSchedule, NonFinitePolicy, TrainError,
};
use crate::autodiff::{Float, Tape, Tensor};
use crate::dataset::{make_training_pair, DeltaTSampler, NormStats, OutOfRange, Series, TrainingPair};
use crate::rng::subsystem_rng;
use crate::stepsnet::{
    read_checkpoint, write_checkpoint, Checkpoint, ModelConfig, ModelParams, StepsNet,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    /// Optimizer steps; 0 derives the count from `hyper.epochs`.
    pub steps: usize,
    pub seed: u64,
    pub delta_support: Vec<u32>,
    /// Draw one batch up front and train on it repeatedly.
    pub overfit_one_batch: bool,
    /// Also keep a numbered checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    pub nonfinite: NonFinitePolicy,
    /// Write elapsed milliseconds to the metrics file; off gives byte-identical reruns.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            steps: 0,
            seed: 0,
            delta_support: DeltaTSampler::default().support().to_vec(),
            overfit_one_batch: false,
            checkpoint_every: 0,
            nonfinite: NonFinitePolicy::Fail,
            record_wall_time: true,
        }
    }
}

/// One training example converted to the working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x0: Vec<T>,
    pub delta_hours: u32,
    pub target: Vec<T>,
}

impl<T: Float> Sample<T> {
    pub fn from_pair(pair: &TrainingPair) -> Self {
        Self {
            x0: pair.x0.values().iter().map(|&v| T::of(v as f64)).collect(),
            delta_hours: pair.delta_hours,
            target: pair.target.iter().map(|&v| T::of(v as f64)).collect(),
        }
    }
}

/// Mean loss over `batch` and its gradient for every parameter tensor.
pub fn batch_loss_and_grads<T: Float>(
    net: &StepsNet,
    params: &ModelParams<T>,
    batch: &[Sample<T>],
    weights: &LossWeights,
) -> Result<(f64, Vec<Tensor<T>>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let scale = T::of(1.0 / batch.len() as f64);
    let mut grads: Vec<Tensor<T>> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut total = 0.0;
    for s in batch {
        let mut tape = Tape::new();
        let vars = net.load(&mut tape, params, true)?;
        let out = net.forward(&mut tape, &vars, &s.x0, s.delta_hours as f64)?;
        let loss = weighted_mse_var(&mut tape, out.delta, &s.target, weights)?;
        total += tape.value(loss).item().as_f64();
        for (acc, g) in grads.iter_mut().zip(tape.grad(loss, &vars)?) {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v * scale;
            }
        }
    }
    Ok((total / batch.len() as f64, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub skipped: usize,
    pub checkpoint: PathBuf,
}

#[derive(Serialize)]
struct BatchDiagnostic {
    step: usize,
    lr: f64,
    loss: f64,
    samples: Vec<SampleInfo>,
}

#[derive(Serialize)]
struct SampleInfo {
    t_index: usize,
    valid_time_hours: i64,
    delta_hours: u32,
    input_max_abs: f32,
    target_max_abs: f32,
}

fn draw_batch(
    series: &Series,
    sampler: &DeltaTSampler,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, TrainingPair)>, TrainError> {
    (0..size)
        .map(|_| {
            let t = rng.gen_range(0..series.len() - 1);
            Ok((t, make_training_pair(series, t, sampler, rng, OutOfRange::Resample)?))
        })
        .collect()
}

fn max_abs(v: &[f32]) -> f32 {
    v.iter().fold(0.0f32, |m, x| m.max(x.abs()))
}

fn dump_batch(
    out_dir: &Path,
    step: usize,
    lr: f64,
    loss: f64,
    batch: &[(usize, TrainingPair)],
) -> Result<PathBuf, TrainError> {
    let diag = BatchDiagnostic {
        step,
        lr,
        loss,
        samples: batch
            .iter()
            .map(|(t, p)| SampleInfo {
                t_index: *t,
                valid_time_hours: p.x0.valid_time,
                delta_hours: p.delta_hours,
                input_max_abs: max_abs(p.x0.values()),
                target_max_abs: max_abs(&p.target),
            })
            .collect(),
    };
    let path = out_dir.join(format!("nonfinite_step_{step}.json"));
    fs::write(&path, serde_json::to_string_pretty(&diag)?)?;
    Ok(path)
}

/// Number of optimizer steps for `epochs` passes over the start indices.
pub fn steps_for_epochs(series_len: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * series_len.saturating_sub(1).div_ceil(batch_size)
}

struct RunState<'a> {
    model: &'a ModelConfig,
    cfg: &'a TrainConfig,
    schedule: LrSchedule,
    norm: &'a NormStats,
}

impl RunState<'_> {
    fn checkpoint(
        &self,
        step: usize,
        params: &ModelParams<f32>,
        ema: &EmaState<f32>,
        adam: &AdamState<f32>,
        rng: &ChaCha8Rng,
    ) -> Checkpoint<f32> {
        Checkpoint {
            config: self.model.clone(),
            step: step as u64,
            rng_seed: self.cfg.seed,
            rng_word_pos: rng.get_word_pos(),
            meta: serde_json::json!({
                "train": self.cfg,
                "schedule": self.schedule,
                "norm": self.norm,
                "adam_t": adam.t,
            }),
            sets: vec![
                ("raw".into(), params.clone()),
                ("ema".into(), ema.params.clone()),
                ("adam_m".into(), adam.m.clone()),
                ("adam_v".into(), adam.v.clone()),
            ],
        }
    }
}

/// Trains on a normalized series and writes `metrics.csv` plus
/// `checkpoint.ckpt` (raw and EMA weights) under `out_dir`.
pub fn train(
    series: &Series,
    norm: &NormStats,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport, TrainError> {
    cfg.hyper.validate()?;
    if !series.normalized() {
        return Err(TrainError::Config("training needs a normalized series".into()));
    }
    if series.len() < 2 {
        return Err(TrainError::Config("training needs at least two snapshots".into()));
    }
    if series.catalog != model.catalog || series.grid != model.grid {
        return Err(TrainError::Config("series catalog or grid differs from the model".into()));
    }
    let steps = if cfg.steps > 0 {
        cfg.steps
    } else {
        steps_for_epochs(series.len(), cfg.hyper.batch_size, cfg.hyper.epochs)
    };
    let sampler = DeltaTSampler::new(cfg.delta_support.clone())?;
    let net = StepsNet::new(model.clone())?;
    let weights = LossWeights::new(&model.catalog, &model.grid)?;
    let run = RunState {
        model,
        cfg,
        schedule: LrSchedule::new(&cfg.hyper, steps),
        norm,
    };

    let mut params: ModelParams<f32> = net.init_params(&mut subsystem_rng(cfg.seed, "model/init"));
    let mut ema = EmaState::new(&params, cfg.hyper.ema_decay);
    let mut adam = AdamState::new(&params);
    let mut rng = subsystem_rng(cfg.seed, "train/batches");

    fs::create_dir_all(out_dir)?;
    let mut metrics = BufWriter::new(fs::File::create(out_dir.join(METRICS_FILE))?);
    writeln!(metrics, "step,loss,lr,wall_ms")?;

    let fixed = if cfg.overfit_one_batch {
        Some(draw_batch(series, &sampler, cfg.hyper.batch_size, &mut rng)?)
    } else {
        None
    };
    let start = Instant::now();
    let mut losses = Vec::with_capacity(steps);
    let mut skipped = 0;
    for step in 0..steps {
        let batch = match &fixed {
            Some(b) => b.clone(),
            None => draw_batch(series, &sampler, cfg.hyper.batch_size, &mut rng)?,
        };
        let samples: Vec<Sample<f32>> = batch.iter().map(|(_, p)| Sample::from_pair(p)).collect();
        let lr = run.schedule.lr(step);
        let (loss, mut grads) = batch_loss_and_grads(&net, &params, &samples, &weights)?;
        if !loss.is_finite() {
            metrics.flush()?;
            let dump = dump_batch(out_dir, step, lr, loss, &batch)?;
            return Err(TrainError::NonFiniteLoss { step, dump });
        }
        if let Some(clip) = cfg.hyper.grad_clip {
            clip_grad_norm(&mut grads, clip);
        }
        if adamw_step(&mut params, &grads, &mut adam, &cfg.hyper, lr, cfg.nonfinite)? {
            ema_update(&mut ema, &params)?;
        } else {
            skipped += 1;
        }
        losses.push(loss);
        let wall = if cfg.record_wall_time { start.elapsed().as_millis() } else { 0 };
        writeln!(metrics, "{},{loss},{lr},{wall}", step + 1)?;
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < steps {
            let path = out_dir.join(format!("checkpoint_{:07}.ckpt", step + 1));
            write_checkpoint(&path, &run.checkpoint(step + 1, &params, &ema, &adam, &rng))?;
        }
    }
    metrics.flush()?;
    let path = out_dir.join(CHECKPOINT_FILE);
    write_checkpoint(&path, &run.checkpoint(steps, &params, &ema, &adam, &rng))?;
    Ok(TrainReport {
        losses,
        skipped,
        checkpoint: path,
    })
}

/// Weights and normalization restored from a training checkpoint.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: StepsNet,
    pub raw: ModelParams<f32>,
    pub ema: ModelParams<f32>,
    pub norm: NormStats,
    pub step: u64,
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let ckpt: Checkpoint<f32> = read_checkpoint(path)?;
        let norm: NormStats = serde_json::from_value(
            ckpt.meta
                .get("norm")
                .cloned()
                .ok_or_else(|| TrainError::Config("checkpoint carries no normalization".into()))?,
        )?;
        let net = StepsNet::new(ckpt.config.clone())?;
        let take = |label: &str| {
            let p = ckpt
                .set(label)
                .cloned()
                .ok_or_else(|| TrainError::Config(format!("checkpoint has no '{label}' weights")))?;
            p.check_layout(net.layout())?;
            Ok::<_, TrainError>(p)
        };
        Ok(Self {
            raw: take("raw")?,
            ema: take("ema")?,
            norm,
            step: ckpt.step,
            net,
        })
    }

    pub fn weights(&self, use_ema: bool) -> &ModelParams<f32> {
        if use_ema {
            &self.ema
        } else {
            &self.raw
        }
    }
}
