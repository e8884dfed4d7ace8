//! Closed-form parameter and multiply-accumulate counts.
//!
//! MACs count every matrix product of one forward pass for one sample:
//! linear layers `rows·in·out`, attention `2·T²·w` (scores plus weighted
//! sum). Element-wise work is not counted.

use super::ModelConfig;

fn linear_params(fan_in: u64, fan_out: u64) -> u64 {
    fan_in * fan_out + fan_out
}

fn block_params(w: u64, cond: u64, ratio: u64) -> u64 {
    linear_params(cond, 6 * w)
        + linear_params(w, 3 * w)
        + linear_params(w, w)
        + linear_params(w, ratio * w)
        + linear_params(ratio * w, w)
}

pub fn param_count(cfg: &ModelConfig) -> u64 {
    let te = cfg.t_embed_dim as u64;
    let pa = cfg.patch_area() as u64;
    let (d1, d2) = (cfg.d1 as u64, cfg.d2 as u64);
    let d = d1 + d2;
    let r = cfg.mlp_ratio as u64;
    let v = cfg.n_channels() as u64;
    2 * linear_params(te, te)
        + linear_params(te, d1)
        + linear_params(pa * cfg.n_dynamics() as u64, d1)
        + linear_params(pa * cfg.n_thermo() as u64, d2)
        + cfg.n1 as u64 * block_params(d1, d1, r)
        + cfg.n2 as u64 * block_params(d, te, r)
        + linear_params(te, 2 * d)
        + linear_params(d, pa * v)
}

fn block_macs(tokens: u64, w: u64, cond: u64, ratio: u64) -> u64 {
    cond * 6 * w + tokens * 3 * w * w + 2 * tokens * tokens * w + tokens * w * w + 2 * tokens * ratio * w * w
}

/// MACs of one forward pass of the two-stage network.
pub fn mac_count(cfg: &ModelConfig) -> u64 {
    let t = cfg.n_tokens() as u64;
    let te = cfg.t_embed_dim as u64;
    let pa = cfg.patch_area() as u64;
    let (d1, d2) = (cfg.d1 as u64, cfg.d2 as u64);
    let d = d1 + d2;
    let r = cfg.mlp_ratio as u64;
    2 * te * te
        + te * d1
        + t * pa * cfg.n_dynamics() as u64 * d1
        + t * pa * cfg.n_thermo() as u64 * d2
        + cfg.n1 as u64 * block_macs(t, d1, d1, r)
        + cfg.n2 as u64 * block_macs(t, d, te, r)
        + te * 2 * d
        + t * d * pa * cfg.n_channels() as u64
}

/// MACs of a single-stage comparator: width `d1 + d2`, depth `n1 + n2`,
/// all channels embedded together, every block conditioned directly on
/// the timestep embedding.
pub fn monolithic_mac_count(cfg: &ModelConfig) -> u64 {
    let t = cfg.n_tokens() as u64;
    let te = cfg.t_embed_dim as u64;
    let pa = cfg.patch_area() as u64;
    let d = cfg.width() as u64;
    let v = cfg.n_channels() as u64;
    let r = cfg.mlp_ratio as u64;
    2 * te * te
        + t * pa * v * d
        + (cfg.n1 + cfg.n2) as u64 * block_macs(t, d, te, r)
        + te * 2 * d
        + t * d * pa * v
}
