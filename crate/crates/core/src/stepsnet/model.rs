use std::sync::Arc;

use super::block::{adaln_block, linear, modulate, modulation, BlockVars};
use super::embed::{check_interval, position_table, timestep_features};
use super::{ModelConfig, ModelError, ModelParams, ParamLayout, BLOCK_TENSORS};
use crate::autodiff::{Float, Tape, Tensor, Var};

/// Handles to the two outputs of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Predicted normalized increment `[V, H, W]`.
    pub delta: Var,
    /// Step-1 token output `[T, d1]`.
    pub y1: Var,
}

/// The two-stage forecaster with its precomputed index maps.
#[derive(Debug, Clone)]
pub struct StepsNet {
    config: ModelConfig,
    layout: ParamLayout,
    dyn_index: Vec<usize>,
    thermo_index: Vec<usize>,
    out_index: Arc<Vec<usize>>,
    pos1: Vec<f64>,
    pos2: Vec<f64>,
}

/// Index from a `[V, H, W]` input into the token matrix of the given
/// channels, with the latitude axis reflect-padded to `h_pad` rows.
fn token_index(channels: &[usize], h: usize, w: usize, h_pad: usize, p: usize) -> Vec<usize> {
    let local = super::patch_index(channels.len(), h_pad, w, p);
    local
        .into_iter()
        .map(|k| {
            let (c, rest) = (k / (h_pad * w), k % (h_pad * w));
            let (i, j) = (rest / w, rest % w);
            let src_i = if i < h { i } else { 2 * h - 2 - i };
            (channels[c] * h + src_i) * w + j
        })
        .collect()
}

impl StepsNet {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (h, w, p) = (config.grid.n_lat(), config.grid.n_lon(), config.patch_size);
        let hp = config.padded_lat();
        let v = config.n_channels();
        let dyn_index = token_index(&config.group_split.dynamics, h, w, hp, p);
        let thermo_index = token_index(&config.group_split.thermo, h, w, hp, p);

        // Inverse of the head's token layout, cropped to the real rows.
        let mut inverse = vec![0; v * hp * w];
        for (f, &k) in super::patch_index(v, hp, w, p).iter().enumerate() {
            inverse[k] = f;
        }
        let mut out_index = Vec::with_capacity(v * h * w);
        for c in 0..v {
            out_index.extend_from_slice(&inverse[c * hp * w..c * hp * w + h * w]);
        }

        let (rows, cols) = (config.token_rows(), config.token_cols());
        Ok(Self {
            pos1: position_table(rows, cols, config.d1),
            pos2: position_table(rows, cols, config.d2),
            layout: ParamLayout::new(&config),
            dyn_index,
            thermo_index,
            out_index: Arc::new(out_index),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn input_len(&self) -> usize {
        self.config.n_channels() * self.config.grid.n_cells()
    }

    pub fn init_params<T: Float, R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ModelParams<T> {
        self.layout.init(rng)
    }

    /// Pushes parameters onto `tape` as trainable leaves or constants.
    pub fn load<T: Float>(
        &self,
        tape: &mut Tape<T>,
        params: &ModelParams<T>,
        trainable: bool,
    ) -> Result<Vec<Var>, ModelError> {
        params.check_layout(&self.layout)?;
        Ok(params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect())
    }

    /// Timestep conditioning `c` `[1, t_embed_dim]`.
    pub fn timestep_embedding<T: Float>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        delta_hours: f64,
    ) -> Result<Var, ModelError> {
        check_interval(delta_hours)?;
        let te = self.config.t_embed_dim;
        let feats = timestep_features(delta_hours, te);
        let f = tape.constant(Tensor::new(vec![1, te], feats.into_iter().map(T::of).collect())?);
        let l = &self.layout;
        let h = linear(tape, f, vars[l.t_fc1], vars[l.t_fc1 + 1])?;
        let h = tape.silu(h)?;
        Ok(linear(tape, h, vars[l.t_fc2], vars[l.t_fc2 + 1])?)
    }

    fn tokens<T: Float>(
        &self,
        tape: &mut Tape<T>,
        x0: &[T],
        index: &[usize],
        n_channels: usize,
    ) -> Result<Var, ModelError> {
        let width = n_channels * self.config.patch_area();
        let data = index.iter().map(|&k| x0[k]).collect();
        Ok(tape.constant(Tensor::new(vec![self.config.n_tokens(), width], data)?))
    }

    fn positions<T: Float>(&self, tape: &mut Tape<T>, table: &[f64], dim: usize) -> Result<Var, ModelError> {
        let data = table.iter().map(|&v| T::of(v)).collect();
        Ok(tape.constant(Tensor::new(vec![self.config.n_tokens(), dim], data)?))
    }

    /// Forward pass for one normalized state `x0` `[V, H, W]`.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x0: &[T],
        delta_hours: f64,
    ) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.config;
        let l = &self.layout;
        if vars.len() != l.specs.len() {
            return Err(ModelError::Shape(format!(
                "{} parameter handles given, layout has {}",
                vars.len(),
                l.specs.len()
            )));
        }
        if x0.len() != self.input_len() {
            return Err(ModelError::Shape(format!(
                "input holds {} values, expected [{}, {}, {}]",
                x0.len(),
                cfg.n_channels(),
                cfg.grid.n_lat(),
                cfg.grid.n_lon()
            )));
        }
        if let Some(k) = x0.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("input value {k}")));
        }

        let c = self.timestep_embedding(tape, vars, delta_hours)?;
        let c1 = linear(tape, c, vars[l.cond1], vars[l.cond1 + 1])?;

        let tok = self.tokens(tape, x0, &self.dyn_index, cfg.n_dynamics())?;
        let mut y = linear(tape, tok, vars[l.embed_dyn], vars[l.embed_dyn + 1])?;
        let pos = self.positions(tape, &self.pos1, cfg.d1)?;
        y = tape.add(y, pos)?;
        for &start in &l.step1 {
            let b = BlockVars::from_vars(&vars[start..start + BLOCK_TENSORS]);
            y = adaln_block(tape, y, c1, &b, cfg.heads1)?;
        }
        let y1 = y;

        let tok = self.tokens(tape, x0, &self.thermo_index, cfg.n_thermo())?;
        let mut e = linear(tape, tok, vars[l.embed_thermo], vars[l.embed_thermo + 1])?;
        let pos = self.positions(tape, &self.pos2, cfg.d2)?;
        e = tape.add(e, pos)?;
        let mut z = tape.concat(&[y1, e])?;
        for &start in &l.step2 {
            let b = BlockVars::from_vars(&vars[start..start + BLOCK_TENSORS]);
            z = adaln_block(tape, z, c, &b, cfg.heads2)?;
        }

        let m = modulation(tape, c, vars[l.final_ada], vars[l.final_ada + 1], 2, cfg.width())?;
        let h = modulate(tape, z, m[0], m[1])?;
        let out = linear(tape, h, vars[l.head], vars[l.head + 1])?;
        let shape = [cfg.n_channels(), cfg.grid.n_lat(), cfg.grid.n_lon()];
        let delta = tape.gather(out, Arc::clone(&self.out_index), &shape)?;
        Ok(ForwardOutput { delta, y1 })
    }

    /// Gradient-free inference of the normalized increment.
    pub fn predict<T: Float>(
        &self,
        params: &ModelParams<T>,
        x0: &[T],
        delta_hours: f64,
    ) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.load(&mut tape, params, false)?;
        let out = self.forward(&mut tape, &vars, x0, delta_hours)?;
        let delta = tape.value(out.delta).data().to_vec();
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("model output".into()));
        }
        Ok(delta)
    }
}
