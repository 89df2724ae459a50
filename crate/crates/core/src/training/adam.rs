use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} gradients, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let bc1 = 1.0 - beta1.powf(state.t as f64);
    let bc2 = 1.0 - beta2.powf(state.t as f64);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}
