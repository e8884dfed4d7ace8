use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::autodiff::{Float, Tensor};

/// Tensors per adaLN block, in layout order.
pub const BLOCK_TENSORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn linear(specs: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize, init: Init) -> usize {
    let start = specs.len();
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![fan_in, fan_out],
        init,
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![fan_out],
        init: Init::Zero,
    });
    start
}

/// Specs of one block of width `width` conditioned on a `cond`-wide vector.
/// Order: modulation, qkv, attention projection, MLP in, MLP out.
pub fn block_specs(prefix: &str, width: usize, cond: usize, mlp_ratio: usize) -> Vec<ParamSpec> {
    let mut s = Vec::with_capacity(BLOCK_TENSORS);
    let hidden = mlp_ratio * width;
    linear(&mut s, &format!("{prefix}.ada"), cond, 6 * width, Init::Zero);
    linear(&mut s, &format!("{prefix}.qkv"), width, 3 * width, Init::Xavier);
    linear(&mut s, &format!("{prefix}.proj"), width, width, Init::Xavier);
    linear(&mut s, &format!("{prefix}.fc1"), width, hidden, Init::Xavier);
    linear(&mut s, &format!("{prefix}.fc2"), hidden, width, Init::Xavier);
    s
}

/// Where each named tensor of the network lives in the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub t_fc1: usize,
    pub t_fc2: usize,
    pub cond1: usize,
    pub embed_dyn: usize,
    pub embed_thermo: usize,
    pub step1: Vec<usize>,
    pub step2: Vec<usize>,
    pub final_ada: usize,
    pub head: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let te = cfg.t_embed_dim;
        let pa = cfg.patch_area();
        let d = cfg.width();
        let mut specs = Vec::new();
        let t_fc1 = linear(&mut specs, "t_embed.fc1", te, te, Init::Xavier);
        let t_fc2 = linear(&mut specs, "t_embed.fc2", te, te, Init::Xavier);
        let cond1 = linear(&mut specs, "cond1", te, cfg.d1, Init::Xavier);
        let embed_dyn = linear(&mut specs, "embed.dynamics", pa * cfg.n_dynamics(), cfg.d1, Init::Xavier);
        let embed_thermo = linear(&mut specs, "embed.thermo", pa * cfg.n_thermo(), cfg.d2, Init::Xavier);
        let mut step1 = Vec::with_capacity(cfg.n1);
        for b in 0..cfg.n1 {
            step1.push(specs.len());
            specs.extend(block_specs(&format!("step1.{b}"), cfg.d1, cfg.d1, cfg.mlp_ratio));
        }
        let mut step2 = Vec::with_capacity(cfg.n2);
        for b in 0..cfg.n2 {
            step2.push(specs.len());
            specs.extend(block_specs(&format!("step2.{b}"), d, te, cfg.mlp_ratio));
        }
        let final_ada = linear(&mut specs, "final.ada", te, 2 * d, Init::Zero);
        let head = linear(&mut specs, "final.head", d, pa * cfg.n_channels(), Init::Zero);
        Self {
            specs,
            t_fc1,
            t_fc2,
            cond1,
            embed_dyn,
            embed_thermo,
            step1,
            step2,
            final_ada,
            head,
        }
    }

    /// Parameter count by enumeration of the layout.
    pub fn count(&self) -> u64 {
        self.specs.iter().map(|s| s.numel() as u64).sum()
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams<T> {
        init_specs(&self.specs, rng)
    }
}

pub fn init_specs<T: Float, R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> ModelParams<T> {
    let tensors = specs
        .iter()
        .map(|s| match s.init {
            Init::Zero => Tensor::zeros(&s.shape),
            Init::Xavier => {
                let a = (6.0 / (s.shape[0] + s.shape[s.shape.len() - 1]) as f64).sqrt();
                Tensor::from_fn(&s.shape, |_| T::of(rng.gen_range(-a..a)))
            }
        })
        .collect();
    ModelParams {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        tensors,
    }
}

/// Named tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Float> ModelParams<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> u64 {
        self.tensors.iter().map(|t| t.numel() as u64).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    /// Checks names and shapes against a layout.
    pub fn check_layout(&self, layout: &ParamLayout) -> Result<(), ModelError> {
        if self.len() != layout.specs.len() {
            return Err(ModelError::Shape(format!(
                "{} tensors given, layout has {}",
                self.len(),
                layout.specs.len()
            )));
        }
        for ((name, t), spec) in self.names.iter().zip(&self.tensors).zip(&layout.specs) {
            if *name != spec.name || t.shape() != spec.shape.as_slice() {
                return Err(ModelError::Shape(format!(
                    "tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}
