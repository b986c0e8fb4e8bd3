//! Adam with bias correction, operating on the flat parameter vector.

use super::TrainError;
use crate::diffnet::ParamVector;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. The parameter vector must stay finite;
/// a non-finite gradient or update aborts with diagnostics.
pub fn adam_step(
    params: &mut ParamVector,
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if grad.len() != params.values.len() || state.m.len() != params.values.len() {
        return Err(TrainError::Config(format!(
            "gradient/state size {} does not match parameter count {}",
            grad.len(),
            params.values.len()
        )));
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite(format!(
            "gradient component {k} is {}",
            grad[k]
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for k in 0..grad.len() {
        let g = grad[k];
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g;
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params.values[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    if let Some(k) = params.values.iter().position(|p| !p.is_finite()) {
        return Err(TrainError::NonFinite(format!(
            "parameter {k} became {} after the update",
            params.values[k]
        )));
    }
    Ok(())
}
