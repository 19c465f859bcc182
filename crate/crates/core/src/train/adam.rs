use crate::error::{Error, Result};

use super::TrainConfig;

/// First and second moment estimates per parameter slot, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(slot_lengths: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = slot_lengths.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        OptimizerState { m, v, t: 0 }
    }

    pub fn for_params(params: &[&[f32]]) -> Self {
        Self::new(params.iter().map(|p| p.len()))
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything
/// is modified, so a rejected step leaves parameters and state untouched.
pub fn adam_step(
    params: &mut [&mut [f32]],
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter slots, {} gradient slots, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (slot, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::InvalidArgument(format!(
                "slot {slot}: {} parameters, {} gradients, {} moments",
                p.len(),
                g.len(),
                m.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient slot {slot}, entry {i} ({})", g[i])));
        }
    }

    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let (lr, eps) = (config.learning_rate, config.adam_eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..p.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p[i] = (p[i] as f64 - step) as f32;
        }
    }
    Ok(())
}
