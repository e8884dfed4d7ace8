//! Desk-scale synthetic atmosphere.
//!
//! Each channel is a smooth random field stored as zonal Fourier
//! coefficients `C_k(i)` per latitude row, `f(i, j) = Σ_k Re(C_k(i) e^{ikλ_j})`.
//! One 6-hour step applies, in order:
//!
//! 1. solid-body rotation: `C_k ← C_k e^{-ikΔλ}` (the field moves east),
//! 2. zonal diffusion: `C_k ← C_k e^{-κ k²}`,
//! 3. meridional diffusion: a symmetric three-point stencil with reflecting
//!    ends applied to every `C_k` column,
//! 4. optional stochastic forcing on `k ≥ 1`, scaled so the zonal damping
//!    alone would keep each mode's variance stationary.
//!
//! Steps 1–3 are deterministic, so `x(t + 6h)` is mostly a function of `x(t)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Level, Series, StateTensor, VariableCatalog, STEP_HOURS};
use crate::grids::LatLonGrid;
use crate::rng::subsystem_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub catalog: VariableCatalog,
    /// Highest zonal wavenumber; must stay below `n_lon / 2`.
    pub max_wavenumber: usize,
    /// Meridional basis functions per zonal mode.
    pub lat_modes: usize,
    /// Eastward displacement per step, in grid columns.
    pub rotation_cells_per_step: f64,
    /// κ of the zonal damping `e^{-κ k²}` per step.
    pub lon_diffusion: f64,
    /// Stencil weight of the meridional diffusion, in `[0, 0.5]`.
    pub lat_diffusion: f64,
    /// Forcing amplitude relative to the stationary level; 0 disables it.
    pub forcing: f64,
    pub start_hours: i64,
}

impl SynthConfig {
    /// 8-channel, 16×32 configuration used throughout the tests and the CLI toy preset.
    pub fn toy(seed: u64, n_steps: usize) -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            n_steps,
            seed,
            catalog: VariableCatalog::toy(),
            max_wavenumber: 5,
            lat_modes: 3,
            rotation_cells_per_step: 0.5,
            lon_diffusion: 0.003,
            lat_diffusion: 0.02,
            forcing: 1.0,
            start_hours: 0,
        }
    }

    pub fn grid(&self) -> Result<LatLonGrid, DatasetError> {
        Ok(LatLonGrid::cell_centred(self.n_lat, self.n_lon)?)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if 2 * self.max_wavenumber >= self.n_lon {
            return Err(DatasetError::InvalidInput(format!(
                "max_wavenumber {} must be below n_lon/2",
                self.max_wavenumber
            )));
        }
        if !(0.0..=0.5).contains(&self.lat_diffusion) {
            return Err(DatasetError::InvalidInput("lat_diffusion must lie in [0, 0.5]".into()));
        }
        if self.lon_diffusion < 0.0 || self.forcing < 0.0 {
            return Err(DatasetError::InvalidInput("diffusion and forcing must be non-negative".into()));
        }
        if self.start_hours % STEP_HOURS != 0 {
            return Err(DatasetError::InvalidInput("start time must be 6-hour aligned".into()));
        }
        Ok(())
    }
}

/// Typical level and spread of a channel in physical units, plus the
/// amplitude of its zonal-mean `cos 2θ` profile in standardized units.
fn physical_scale(short: &str, level: Level) -> (f64, f64, f64) {
    let p = match level {
        Level::Pressure(p) => p as f64,
        Level::Surface => 1000.0,
    };
    let height = 44_330.8 * (1.0 - (p / 1013.25).powf(0.190_263));
    match short {
        "Z" => (9.806_65 * height, 600.0, -1.5),
        "T" => ((288.15 - 0.0065 * height).max(216.65), 4.0, -1.5),
        "Q" => {
            let q = 0.012 * (p / 1000.0).powi(3);
            (q, 0.3 * q, -1.5)
        }
        "U" => (5.0, 8.0, 1.0),
        "V" => (0.0, 6.0, 0.0),
        "T2m" => (288.0, 6.0, -2.0),
        "MSLP" => (101_325.0, 900.0, 0.3),
        "SP" => (98_000.0, 1200.0, 0.3),
        "U10" => (0.0, 4.0, 0.5),
        "V10" => (0.0, 3.0, 0.0),
        _ => (0.0, 1.0, 0.0),
    }
}

#[derive(Clone, Copy, Default)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn mul(self, o: C64) -> C64 {
        C64 {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }

    fn scale(self, s: f64) -> C64 {
        C64 {
            re: self.re * s,
            im: self.im * s,
        }
    }
}

struct ChannelField {
    /// `coeffs[k * n_lat + i]`.
    coeffs: Vec<C64>,
    offset: f64,
    scale: f64,
    /// Stationary amplitude of mode k in standardized units.
    amplitude: Vec<f64>,
}

/// Generates a deterministic synthetic series. Same config, same bits.
pub fn synth_atmosphere(config: &SynthConfig) -> Result<Series, DatasetError> {
    config.validate()?;
    let grid = config.grid()?;
    let (h, w) = (config.n_lat, config.n_lon);
    let n_k = config.max_wavenumber + 1;
    let colat: Vec<f64> = grid.latitudes().iter().map(|p| (90.0 - p).to_radians()).collect();
    let lons: Vec<f64> = grid.longitudes().iter().map(|l| l.to_radians()).collect();

    let mut init_rng = subsystem_rng(config.seed, "synth/init");
    let mut noise_rng = subsystem_rng(config.seed, "synth/forcing");

    let mut fields: Vec<ChannelField> = config
        .catalog
        .channels()
        .map(|info| {
            let (offset, scale, profile) = physical_scale(&info.short_name, info.level);
            let amplitude: Vec<f64> = (0..n_k).map(|k| 1.0 / (1.0 + k as f64)).collect();
            let mut coeffs = vec![C64::default(); n_k * h];
            for (k, amp) in amplitude.iter().enumerate() {
                for m in 0..config.lat_modes {
                    let mut draw = || init_rng.gen_range(-1.0..1.0);
                    let (a, b, c, d) = (draw(), draw(), draw(), draw());
                    let damp = amp / (1.0 + m as f64);
                    for (i, &th) in colat.iter().enumerate() {
                        let (cm, sm) = ((m as f64 * th).cos(), (m as f64 * th).sin());
                        let slot = &mut coeffs[k * h + i];
                        slot.re += damp * (a * cm + c * sm);
                        if k > 0 {
                            slot.im += damp * (b * cm + d * sm);
                        }
                    }
                }
            }
            let mut field = ChannelField {
                coeffs,
                offset,
                scale,
                amplitude,
            };
            let std = grid_std(&field.synthesize(h, &lons));
            let norm = if std > 0.0 { 1.0 / std } else { 1.0 };
            field.coeffs.iter_mut().for_each(|c| *c = c.scale(norm));
            field.amplitude.iter_mut().for_each(|a| *a *= norm);
            for (i, &th) in colat.iter().enumerate() {
                field.coeffs[i].re += profile * (2.0 * th).cos();
            }
            field
        })
        .collect();

    let shift = 2.0 * PI * config.rotation_cells_per_step / w as f64;
    let rotation: Vec<C64> = (0..n_k)
        .map(|k| C64 {
            re: (k as f64 * shift).cos(),
            im: -(k as f64 * shift).sin(),
        })
        .collect();
    let damping: Vec<f64> = (0..n_k)
        .map(|k| (-config.lon_diffusion * (k * k) as f64).exp())
        .collect();
    let noise_std: Vec<f64> = damping
        .iter()
        .map(|d| config.forcing * (1.0 - d * d).max(0.0).sqrt())
        .collect();

    let shape = [config.catalog.n_channels(), h, w];
    let mut states = Vec::with_capacity(config.n_steps);
    for t in 0..config.n_steps {
        if t > 0 {
            for field in &mut fields {
                step_field(field, h, &rotation, &damping, &noise_std, config.lat_diffusion, &mut noise_rng);
            }
        }
        let mut values = Vec::with_capacity(shape.iter().product());
        for field in &fields {
            values.extend(
                field
                    .synthesize(h, &lons)
                    .into_iter()
                    .map(|f| (field.offset + field.scale * f) as f32),
            );
        }
        let valid_time = config.start_hours + STEP_HOURS * t as i64;
        states.push(StateTensor::new(values, shape, valid_time, false)?);
    }
    Series::new(config.catalog.clone(), grid, states)
}

fn step_field<R: Rng>(
    field: &mut ChannelField,
    h: usize,
    rotation: &[C64],
    damping: &[f64],
    noise_std: &[f64],
    lat_diffusion: f64,
    rng: &mut R,
) {
    let n_k = rotation.len();
    for k in 0..n_k {
        let col = &mut field.coeffs[k * h..(k + 1) * h];
        for c in col.iter_mut() {
            *c = c.mul(rotation[k]).scale(damping[k]);
        }
        if lat_diffusion > 0.0 {
            let old = col.to_vec();
            for i in 0..h {
                let up = old[i.saturating_sub(1)];
                let down = old[(i + 1).min(h - 1)];
                col[i].re = old[i].re + lat_diffusion * (up.re - 2.0 * old[i].re + down.re);
                col[i].im = old[i].im + lat_diffusion * (up.im - 2.0 * old[i].im + down.im);
            }
        }
    }
    if noise_std.iter().any(|&s| s > 0.0) {
        let root3 = 3f64.sqrt();
        for k in 1..n_k {
            let s = noise_std[k] * field.amplitude[k];
            // Forcing is smooth in latitude: a random combination of two modes.
            let (a, b, c, d) = (
                rng.gen_range(-root3..root3),
                rng.gen_range(-root3..root3),
                rng.gen_range(-root3..root3),
                rng.gen_range(-root3..root3),
            );
            for i in 0..h {
                let th = PI * (i as f64 + 0.5) / h as f64;
                let (c1, s1) = (th.cos(), th.sin());
                field.coeffs[k * h + i].re += s * (a * s1 + c * c1);
                field.coeffs[k * h + i].im += s * (b * s1 + d * c1);
            }
        }
    }
}

impl ChannelField {
    fn synthesize(&self, h: usize, lons: &[f64]) -> Vec<f64> {
        let n_k = self.coeffs.len() / h;
        let w = lons.len();
        let mut out = vec![0.0; h * w];
        for (j, &lam) in lons.iter().enumerate() {
            let basis: Vec<C64> = (0..n_k)
                .map(|k| C64 {
                    re: (k as f64 * lam).cos(),
                    im: (k as f64 * lam).sin(),
                })
                .collect();
            for i in 0..h {
                let mut v = 0.0;
                for (k, b) in basis.iter().enumerate() {
                    v += self.coeffs[k * h + i].mul(*b).re;
                }
                out[i * w + j] = v;
            }
        }
        out
    }
}

fn grid_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_variance(s: &StateTensor, c: usize) -> f64 {
        let v: Vec<f64> = s.channel(c).iter().map(|&x| x as f64).collect();
        grid_std(&v).powi(2)
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SynthConfig::toy(7, 12);
        let a = synth_atmosphere(&cfg).unwrap();
        let b = synth_atmosphere(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_atmosphere(&SynthConfig::toy(8, 12)).unwrap();
        assert_ne!(a.states[0], c.states[0]);
    }

    #[test]
    fn diffusion_only_variance_does_not_grow() {
        let cfg = SynthConfig {
            rotation_cells_per_step: 0.0,
            forcing: 0.0,
            lon_diffusion: 0.02,
            lat_diffusion: 0.2,
            ..SynthConfig::toy(3, 40)
        };
        let s = synth_atmosphere(&cfg).unwrap();
        for c in 0..cfg.catalog.n_channels() {
            for t in 1..s.len() {
                let prev = channel_variance(&s.states[t - 1], c);
                let now = channel_variance(&s.states[t], c);
                assert!(now <= prev * (1.0 + 1e-5), "channel {c} step {t}: {prev} -> {now}");
            }
            assert!(channel_variance(&s.states[39], c) < channel_variance(&s.states[0], c));
        }
    }

    #[test]
    fn advection_only_returns_after_full_rotation() {
        // 32 columns at 0.5 columns per step: a full turn takes 64 steps.
        let cfg = SynthConfig {
            rotation_cells_per_step: 0.5,
            forcing: 0.0,
            lon_diffusion: 0.0,
            lat_diffusion: 0.0,
            ..SynthConfig::toy(5, 65)
        };
        let s = synth_atmosphere(&cfg).unwrap();
        let (first, last) = (&s.states[0], &s.states[64]);
        for c in 0..cfg.catalog.n_channels() {
            let spread = channel_variance(first, c).sqrt();
            for (a, b) in first.channel(c).iter().zip(last.channel(c)) {
                assert!(((a - b).abs() as f64) < 1e-4 * spread.max(a.abs() as f64));
            }
        }
        // Two columns per 4 steps: after 4 steps the field is an exact column shift.
        let shifted = &s.states[4];
        for c in 0..cfg.catalog.n_channels() {
            for i in 0..16 {
                for j in 0..32 {
                    let a = first.get(c, i, j) as f64;
                    let b = shifted.get(c, i, (j + 2) % 32) as f64;
                    assert!((a - b).abs() < 1e-4 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn rejects_aliasing_wavenumbers() {
        let cfg = SynthConfig {
            max_wavenumber: 16,
            ..SynthConfig::toy(1, 2)
        };
        assert!(synth_atmosphere(&cfg).is_err());
    }
}
