//! Run configuration: a plain `key = value` text file layered over a preset,
//! with command-line overrides on top.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use stepcast::dataset::{SynthConfig, VariableCatalog};
use stepcast::evaluation::EvalConfig;
use stepcast::grids::{LatLonGrid, Region};
use stepcast::stepsnet::ModelConfig;
use stepcast::training::{Hyperparams, NonFinitePolicy, TrainConfig};

use crate::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "STEPCAST_OUTPUT_ROOT";
pub const RESOLVED_SUFFIX: &str = ".config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub deterministic: bool,
    pub out_dir: PathBuf,

    pub data_dir: Option<PathBuf>,
    pub data_steps: usize,
    pub data_train: Range<usize>,
    pub data_test: Range<usize>,
    pub synth_n_lat: usize,
    pub synth_n_lon: usize,

    pub model_patch_size: usize,
    pub model_d1: usize,
    pub model_d2: usize,
    pub model_n1: usize,
    pub model_n2: usize,
    pub model_heads1: usize,
    pub model_heads2: usize,
    pub model_t_embed_dim: usize,

    pub hyper: Hyperparams,
    pub train_steps: usize,
    pub train_delta_support: Vec<u32>,
    pub train_checkpoint_every: usize,
    pub train_nonfinite: NonFinitePolicy,

    pub eval_variables: Vec<String>,
    pub eval_regions: Vec<Region>,
    pub eval_n_steps: usize,
    pub eval_step_hours: u32,
    pub eval_init_stride: usize,
    pub eval_jobs: usize,
    pub eval_use_ema: bool,

    pub track_radius_deg: f64,
}

fn default_out_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let model = ModelConfig::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset '{name}'")))?;
        let toy = name == "toy";
        let mut hyper = Hyperparams::default();
        if toy {
            hyper.lr = 1e-3;
            hyper.batch_size = 4;
        }
        Ok(Self {
            preset: name.to_string(),
            seed: 7,
            deterministic: true,
            out_dir: default_out_root(),
            data_dir: None,
            data_steps: 1460,
            data_train: 0..1200,
            data_test: 1200..1460,
            synth_n_lat: if toy { model.grid.n_lat() } else { 16 },
            synth_n_lon: if toy { model.grid.n_lon() } else { 32 },
            model_patch_size: model.patch_size,
            model_d1: model.d1,
            model_d2: model.d2,
            model_n1: model.n1,
            model_n2: model.n2,
            model_heads1: model.heads1,
            model_heads2: model.heads2,
            model_t_embed_dim: model.t_embed_dim,
            hyper,
            train_steps: if toy { 3000 } else { 0 },
            train_delta_support: vec![6, 12, 24],
            train_checkpoint_every: 0,
            train_nonfinite: NonFinitePolicy::Fail,
            eval_variables: Vec::new(),
            eval_regions: Region::ALL.to_vec(),
            eval_n_steps: 8,
            eval_step_hours: 6,
            eval_init_stride: 12,
            eval_jobs: 1,
            eval_use_ema: true,
            track_radius_deg: 10.0,
        })
    }

    /// Preset named in the file or overrides (default `toy`), then the file,
    /// then the overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let file_pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        let preset = overrides
            .iter()
            .rev()
            .chain(file_pairs.iter().rev())
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.as_str())
            .unwrap_or("toy");
        let mut cfg = Self::preset(preset)?;
        for (k, v) in file_pairs.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Usage(format!("{key}: expected {what}, got '{value}'"));
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad("a number"))?
            };
        }
        match key {
            "preset" => {
                if value != self.preset {
                    return Err(CliError::Usage(format!("preset is fixed to '{}' before other keys apply", self.preset)));
                }
            }
            "seed" => self.seed = num!(),
            "deterministic" => self.deterministic = parse_bool(value).ok_or_else(|| bad("true or false"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data.dir" => self.data_dir = (value != "default").then(|| PathBuf::from(value)),
            "data.steps" => self.data_steps = num!(),
            "data.train" => self.data_train = parse_range(value).ok_or_else(|| bad("a range a..b"))?,
            "data.test" => self.data_test = parse_range(value).ok_or_else(|| bad("a range a..b"))?,
            "synth.n_lat" => self.synth_n_lat = num!(),
            "synth.n_lon" => self.synth_n_lon = num!(),
            "model.patch_size" => self.model_patch_size = num!(),
            "model.d1" => self.model_d1 = num!(),
            "model.d2" => self.model_d2 = num!(),
            "model.n1" => self.model_n1 = num!(),
            "model.n2" => self.model_n2 = num!(),
            "model.heads1" => self.model_heads1 = num!(),
            "model.heads2" => self.model_heads2 = num!(),
            "model.t_embed_dim" => self.model_t_embed_dim = num!(),
            "train.lr" => self.hyper.lr = num!(),
            "train.beta1" => self.hyper.beta1 = num!(),
            "train.beta2" => self.hyper.beta2 = num!(),
            "train.eps" => self.hyper.eps = num!(),
            "train.weight_decay" => self.hyper.weight_decay = num!(),
            "train.batch_size" => self.hyper.batch_size = num!(),
            "train.epochs" => self.hyper.epochs = num!(),
            "train.ema_decay" => self.hyper.ema_decay = num!(),
            "train.warmup_fraction" => self.hyper.warmup_fraction = num!(),
            "train.final_lr_fraction" => self.hyper.final_lr_fraction = num!(),
            "train.grad_clip" => {
                self.hyper.grad_clip = if value == "none" { None } else { Some(num!()) };
            }
            "train.steps" => self.train_steps = num!(),
            "train.delta_support" => {
                self.train_delta_support = parse_list(value, |s| s.parse().ok()).ok_or_else(|| bad("hours like 6,12,24"))?
            }
            "train.checkpoint_every" => self.train_checkpoint_every = num!(),
            "train.nonfinite" => {
                self.train_nonfinite = match value {
                    "fail" => NonFinitePolicy::Fail,
                    "skip" => NonFinitePolicy::Skip,
                    _ => return Err(bad("fail or skip")),
                }
            }
            "eval.variables" => {
                self.eval_variables = if value == "all" {
                    Vec::new()
                } else {
                    parse_list(value, |s| Some(s.to_string())).ok_or_else(|| bad("labels like Z500,T850"))?
                }
            }
            "eval.regions" => {
                self.eval_regions = parse_list(value, |s| s.parse().ok()).ok_or_else(|| bad("regions like global,tropics"))?
            }
            "eval.n_steps" => self.eval_n_steps = num!(),
            "eval.step_hours" => self.eval_step_hours = num!(),
            "eval.init_stride" => self.eval_init_stride = num!(),
            "eval.jobs" => self.eval_jobs = num!(),
            "eval.use_ema" => self.eval_use_ema = parse_bool(value).ok_or_else(|| bad("true or false"))?,
            "track.radius_deg" => self.track_radius_deg = num!(),
            _ => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Dataset directory; `data` under the output directory unless set.
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let catalog = ModelConfig::preset(&self.preset).map(|m| m.catalog).unwrap_or_else(VariableCatalog::toy);
        Ok(SynthConfig {
            n_lat: self.synth_n_lat,
            n_lon: self.synth_n_lon,
            catalog,
            ..SynthConfig::toy(self.seed, self.data_steps)
        })
    }

    /// Architecture from the config on the given catalog and grid.
    pub fn model(&self, catalog: VariableCatalog, grid: LatLonGrid) -> Result<ModelConfig, CliError> {
        ModelConfig::new(
            catalog,
            grid,
            self.model_patch_size,
            self.model_d1,
            self.model_d2,
            self.model_n1,
            self.model_n2,
            self.model_heads1,
            self.model_heads2,
            self.model_t_embed_dim,
        )
        .map_err(|e| CliError::Usage(format!("invalid model settings: {e}")))
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            hyper: self.hyper.clone(),
            steps: self.train_steps,
            seed: self.seed,
            delta_support: self.train_delta_support.clone(),
            overfit_one_batch: false,
            checkpoint_every: self.train_checkpoint_every,
            nonfinite: self.train_nonfinite,
            record_wall_time: !self.deterministic,
        }
    }

    pub fn eval(&self, catalog: &VariableCatalog, series_len: usize) -> EvalConfig {
        let variables = if self.eval_variables.is_empty() {
            catalog.labels()
        } else {
            self.eval_variables.clone()
        };
        EvalConfig {
            variables,
            regions: self.eval_regions.clone(),
            n_steps: self.eval_n_steps,
            step_hours: self.eval_step_hours,
            init_indices: EvalConfig::all_inits(series_len, self.eval_n_steps, self.eval_step_hours, self.eval_init_stride),
            jobs: self.eval_jobs.max(1),
        }
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let h = &self.hyper;
        let join = |v: Vec<String>| if v.is_empty() { "all".to_string() } else { v.join(",") };
        BTreeMap::from([
            ("preset", self.preset.clone()),
            ("seed", self.seed.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("data.dir", self.data_dir.as_ref().map_or("default".into(), |d| d.display().to_string())),
            ("data.steps", self.data_steps.to_string()),
            ("data.train", format!("{}..{}", self.data_train.start, self.data_train.end)),
            ("data.test", format!("{}..{}", self.data_test.start, self.data_test.end)),
            ("synth.n_lat", self.synth_n_lat.to_string()),
            ("synth.n_lon", self.synth_n_lon.to_string()),
            ("model.patch_size", self.model_patch_size.to_string()),
            ("model.d1", self.model_d1.to_string()),
            ("model.d2", self.model_d2.to_string()),
            ("model.n1", self.model_n1.to_string()),
            ("model.n2", self.model_n2.to_string()),
            ("model.heads1", self.model_heads1.to_string()),
            ("model.heads2", self.model_heads2.to_string()),
            ("model.t_embed_dim", self.model_t_embed_dim.to_string()),
            ("train.lr", h.lr.to_string()),
            ("train.beta1", h.beta1.to_string()),
            ("train.beta2", h.beta2.to_string()),
            ("train.eps", h.eps.to_string()),
            ("train.weight_decay", h.weight_decay.to_string()),
            ("train.batch_size", h.batch_size.to_string()),
            ("train.epochs", h.epochs.to_string()),
            ("train.ema_decay", h.ema_decay.to_string()),
            ("train.warmup_fraction", h.warmup_fraction.to_string()),
            ("train.final_lr_fraction", h.final_lr_fraction.to_string()),
            ("train.grad_clip", h.grad_clip.map_or("none".into(), |c| c.to_string())),
            ("train.steps", self.train_steps.to_string()),
            ("train.delta_support", join(self.train_delta_support.iter().map(|d| d.to_string()).collect())),
            ("train.checkpoint_every", self.train_checkpoint_every.to_string()),
            (
                "train.nonfinite",
                match self.train_nonfinite {
                    NonFinitePolicy::Fail => "fail".into(),
                    NonFinitePolicy::Skip => "skip".into(),
                },
            ),
            ("eval.variables", join(self.eval_variables.clone())),
            ("eval.regions", join(self.eval_regions.iter().map(|r| r.name().to_string()).collect())),
            ("eval.n_steps", self.eval_n_steps.to_string()),
            ("eval.step_hours", self.eval_step_hours.to_string()),
            ("eval.init_stride", self.eval_init_stride.to_string()),
            ("eval.jobs", self.eval_jobs.to_string()),
            ("eval.use_ema", self.eval_use_ema.to_string()),
            ("track.radius_deg", self.track_radius_deg.to_string()),
        ])
    }

    /// Writes the resolved configuration as `<command>.config.txt` in the
    /// output directory.
    pub fn persist(&self, command: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(format!("{command}{RESOLVED_SUFFIX}"));
        std::fs::write(&path, self.to_string())?;
        Ok(path)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries = self.entries();
        // The preset goes first so that the file re-resolves to the same run.
        writeln!(f, "preset = {}", entries["preset"])?;
        for (k, v) in entries.iter().filter(|(k, _)| **k != "preset") {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_range(s: &str) -> Option<Range<usize>> {
    let (a, b) = s.split_once("..")?;
    let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (a < b).then_some(a..b)
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = s.split(',').map(|x| f(x.trim())).collect();
    items.filter(|v| !v.is_empty())
}
