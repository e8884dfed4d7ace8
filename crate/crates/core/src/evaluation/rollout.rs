use super::EvalError;
use crate::dataset::{DatasetError, NormStats, StateTensor, STEP_HOURS};
use crate::stepsnet::{ModelError, ModelParams, StepsNet};

/// States in physical units at increasing lead times, lead 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTrajectory {
    pub init_time: i64,
    pub lead_hours: Vec<u32>,
    pub states: Vec<StateTensor>,
    /// Set when the rollout stopped early on a non-finite state.
    pub truncated: Option<String>,
}

impl ForecastTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn at_lead(&self, hours: u32) -> Option<&StateTensor> {
        self.lead_hours.iter().position(|&h| h == hours).map(|k| &self.states[k])
    }
}

pub(crate) fn check_step(step_hours: u32) -> Result<(), EvalError> {
    if step_hours == 0 || step_hours as i64 % STEP_HOURS != 0 {
        return Err(EvalError::InvalidInput(format!(
            "rollout step {step_hours}h is not a positive multiple of 6"
        )));
    }
    Ok(())
}

/// Iterates `x ← x + model(x, step)` from the normalized `x0` and returns the
/// denormalized trajectory. A non-finite state ends the rollout early.
pub fn rollout(
    net: &StepsNet,
    params: &ModelParams<f32>,
    x0: &StateTensor,
    norm: &NormStats,
    n_steps: usize,
    step_hours: u32,
) -> Result<ForecastTrajectory, EvalError> {
    check_step(step_hours)?;
    if !x0.normalized {
        return Err(EvalError::InvalidInput("rollout starts from a normalized state".into()));
    }
    let mut traj = ForecastTrajectory {
        init_time: x0.valid_time,
        lead_hours: vec![0],
        states: vec![norm.denormalize(x0)?],
        truncated: None,
    };
    let mut x = x0.values().to_vec();
    for k in 1..=n_steps {
        let lead = k as u32 * step_hours;
        let delta = match net.predict(params, &x, step_hours as f64) {
            Ok(d) => d,
            Err(ModelError::NonFinite(what)) => {
                traj.truncated = Some(format!("non-finite {what} at lead {lead}h"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        for (v, d) in x.iter_mut().zip(&delta) {
            *v += d;
        }
        if x.iter().any(|v| !v.is_finite()) {
            traj.truncated = Some(format!("state overflowed at lead {lead}h"));
            break;
        }
        let state = StateTensor::new(x.clone(), x0.shape(), x0.valid_time + lead as i64, true)?;
        let physical = match norm.denormalize(&state) {
            Ok(s) => s,
            Err(DatasetError::NonFinite(what)) => {
                traj.truncated = Some(format!("non-finite {what} at lead {lead}h"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        traj.states.push(physical);
        traj.lead_hours.push(lead);
    }
    Ok(traj)
}

/// The forecast that nothing changes.
pub fn persistence(x0: &StateTensor, n_steps: usize, step_hours: u32) -> Result<ForecastTrajectory, EvalError> {
    check_step(step_hours)?;
    let mut traj = ForecastTrajectory {
        init_time: x0.valid_time,
        lead_hours: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        truncated: None,
    };
    for k in 0..=n_steps {
        let lead = k as u32 * step_hours;
        let s = StateTensor::new(x0.values().to_vec(), x0.shape(), x0.valid_time + lead as i64, x0.normalized)?;
        traj.states.push(s);
        traj.lead_hours.push(lead);
    }
    Ok(traj)
}
