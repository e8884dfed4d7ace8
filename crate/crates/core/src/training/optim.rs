use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::{Float, Tensor};
use crate::stepsnet::ModelParams;

/// Optimizer and schedule settings. Defaults are the reference training
/// recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub warmup_fraction: f64,
    pub final_lr_fraction: f64,
    /// Global-norm gradient clipping; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-5,
            batch_size: 16,
            epochs: 50,
            ema_decay: 0.9,
            warmup_fraction: 0.01,
            final_lr_fraction: 0.1,
            grad_clip: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight decay non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("EMA decay must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad("schedule fractions must lie in [0, 1]");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }
}

/// Linear warmup to `peak` then cosine decay to `final_fraction · peak`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub final_fraction: f64,
}

impl LrSchedule {
    pub fn new(hyper: &Hyperparams, total_steps: usize) -> Self {
        let warmup = (hyper.warmup_fraction * total_steps as f64).ceil() as usize;
        Self {
            peak: hyper.lr,
            warmup_steps: warmup.min(total_steps),
            total_steps,
            final_fraction: hyper.final_lr_fraction,
        }
    }

    /// Learning rate for the zero-based optimizer step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.final_fraction * self.peak;
        floor + (self.peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonFinitePolicy {
    Skip,
    Fail,
}

/// First and second moments plus the count of applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

fn check_congruent<T: Float>(a: &ModelParams<T>, b: &[Tensor<T>]) -> Result<(), TrainError> {
    if a.len() != b.len() || a.tensors.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(TrainError::Shape("gradients are not congruent with parameters".into()));
    }
    Ok(())
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// One AdamW update with bias correction and decoupled weight decay
/// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)`. Returns `false` when a non-finite
/// gradient was skipped under [`NonFinitePolicy::Skip`].
pub fn adamw_step<T: Float>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &Hyperparams,
    lr: f64,
    policy: NonFinitePolicy,
) -> Result<bool, TrainError> {
    check_congruent(params, grads)?;
    if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
        return match policy {
            NonFinitePolicy::Skip => Ok(false),
            NonFinitePolicy::Fail => Err(TrainError::NonFinite(format!(
                "gradient of {}",
                params.names[k]
            ))),
        };
    }
    state.t += 1;
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let c1 = T::of(1.0 - hyper.beta1.powf(state.t as f64));
    let c2 = T::of(1.0 - hyper.beta2.powf(state.t as f64));
    let (lr, eps) = (T::of(lr), T::of(hyper.eps));
    let decay = T::one() - lr * T::of(hyper.weight_decay);
    let one = T::one();
    for (k, g) in grads.iter().enumerate() {
        let p = params.tensors[k].data_mut();
        let m = state.m.tensors[k].data_mut();
        let v = state.v.tensors[k].data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(true)
}

/// Shadow weights `ema ← decay·ema + (1 − decay)·θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState<T> {
    pub decay: f64,
    pub params: ModelParams<T>,
}

impl<T: Float> EmaState<T> {
    /// Starts from a copy of the initial weights.
    pub fn new(params: &ModelParams<T>, decay: f64) -> Self {
        Self {
            decay,
            params: params.clone(),
        }
    }
}

pub fn ema_update<T: Float>(ema: &mut EmaState<T>, params: &ModelParams<T>) -> Result<(), TrainError> {
    check_congruent(&ema.params, &params.tensors)?;
    let d = T::of(ema.decay);
    let rest = T::one() - d;
    for (e, p) in ema.params.tensors.iter_mut().zip(&params.tensors) {
        for (e, &p) in e.data_mut().iter_mut().zip(p.data()) {
            *e = d * *e + rest * p;
        }
    }
    Ok(())
}
