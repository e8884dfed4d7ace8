//! Fixed sinusoidal features for the forecast interval and token positions.

use super::ModelError;

const MAX_PERIOD: f64 = 10_000.0;

/// Interleaved `[sin(δt·ω₀), cos(δt·ω₀), sin(δt·ω₁), …]` with
/// `ω_k = MAX_PERIOD^(−k/(dim/2))`. This is the input of the timestep MLP.
pub fn timestep_features(delta_hours: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-MAX_PERIOD.ln() * k as f64 / half as f64).exp();
        let arg = delta_hours * freq;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
    out
}

pub(crate) fn check_interval(delta_hours: f64) -> Result<(), ModelError> {
    if !delta_hours.is_finite() || delta_hours <= 0.0 {
        return Err(ModelError::Config(format!(
            "forecast interval must be positive, got {delta_hours}h"
        )));
    }
    Ok(())
}

/// 2-D sinusoidal position table `[rows·cols, dim]`. The first half of the
/// features encodes the token row, the second half the column; each half
/// is interleaved sin/cos pairs.
pub fn position_table(rows: usize, cols: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; rows * cols * dim];
    for r in 0..rows {
        for c in 0..cols {
            let row = &mut out[(r * cols + c) * dim..(r * cols + c + 1) * dim];
            for (f, v) in row.iter_mut().enumerate() {
                let (pos, local, width) = if f < half {
                    (r, f, half)
                } else {
                    (c, f - half, dim - half)
                };
                let pair = local / 2;
                let freq = MAX_PERIOD.powf(-2.0 * pair as f64 / width.max(1) as f64);
                let arg = pos as f64 * freq;
                *v = if local % 2 == 0 { arg.sin() } else { arg.cos() };
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_interval_alternates_zero_one() {
        let f = timestep_features(0.0, 8);
        assert_eq!(f, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn intervals_are_distinguishable() {
        let a = timestep_features(6.0, 16);
        let b = timestep_features(12.0, 16);
        let c = timestep_features(24.0, 16);
        let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>();
        assert!(dist(&a, &b) > 0.1 && dist(&b, &c) > 0.1 && dist(&a, &c) > 0.1);
    }

    #[test]
    fn rejects_non_positive_interval() {
        assert!(check_interval(0.0).is_err());
        assert!(check_interval(-6.0).is_err());
        assert!(check_interval(f64::NAN).is_err());
        assert!(check_interval(6.0).is_ok());
    }

    #[test]
    fn positions_are_unique() {
        let t = position_table(4, 8, 16);
        for a in 0..32 {
            for b in a + 1..32 {
                let d: f64 = (0..16).map(|f| (t[a * 16 + f] - t[b * 16 + f]).abs()).sum();
                assert!(d > 1e-3, "tokens {a} and {b} share an encoding");
            }
        }
        assert!(t.iter().all(|v| v.abs() <= 1.0));
    }
}
