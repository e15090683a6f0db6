use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step; returns the parameter delta.
pub fn adam_step(state: &mut AdamState, grad: &[f64], alpha: f64, params: &AdamParams) -> Vec<f64> {
    let mut delta = vec![0.0; grad.len()];
    adam_step_into(state, grad, alpha, params, &mut delta);
    delta
}

pub fn adam_step_into(state: &mut AdamState, grad: &[f64], alpha: f64, params: &AdamParams, delta: &mut [f64]) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - params.b1.powi(t);
    let c2 = 1.0 - params.b2.powi(t);
    for (((m, v), g), d) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grad).zip(delta.iter_mut()) {
        *m = params.b1 * *m + (1.0 - params.b1) * g;
        *v = params.b2 * *v + (1.0 - params.b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *d = -alpha * m_hat / (v_hat.sqrt() + params.eps);
    }
}
