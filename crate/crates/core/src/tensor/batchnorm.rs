use super::{Mode, Shape4, Tensor4};
use crate::error::{Error, Result};

pub const DEFAULT_BN_MOMENTUM: f32 = 0.1;
pub const DEFAULT_BN_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
}

impl BatchNormState {
    /// `gamma = 1`, `beta = 0`, running statistics of a unit normal.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self, input: Shape4) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::Geometry {
                op: "batchnorm",
                msg: "gamma, beta and running statistics must share one length".into(),
            });
        }
        if input.c != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                left: format!("input {input}"),
                right: format!("{c} channels of state"),
            });
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) || self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm momentum {} must lie in (0, 1) and epsilon {} must be non-negative",
                self.momentum, self.epsilon
            )));
        }
        Ok(())
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let Some((mean, var)) = &cache.batch_stats else {
            return;
        };
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = ((1.0 - m) * self.running_var[c] + m * var[c]).max(0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: Mode,
    pub normalized: Tensor4,
    pub inv_std: Vec<f32>,
    /// Biased batch mean and variance; present in train mode only.
    pub batch_stats: Option<(Vec<f32>, Vec<f32>)>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor4,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

fn channel_values(x: &Tensor4, c: usize) -> impl Iterator<Item = f32> + '_ {
    (0..x.shape().n).flat_map(move |n| x.plane(n, c).iter().copied())
}

pub fn batchnorm_forward(
    input: &Tensor4,
    state: &BatchNormState,
    mode: Mode,
) -> Result<(Tensor4, BatchNormCache)> {
    let s = input.shape();
    state.validate(s)?;
    let count = (s.n * s.plane()) as f64;

    let (means, vars): (Vec<f32>, Vec<f32>) = match mode {
        Mode::Train => (0..s.c)
            .map(|c| {
                let mean = channel_values(input, c).map(f64::from).sum::<f64>() / count;
                let var = channel_values(input, c)
                    .map(|v| (v as f64 - mean).powi(2))
                    .sum::<f64>()
                    / count;
                (mean as f32, var as f32)
            })
            .unzip(),
        Mode::Infer => (state.running_mean.clone(), state.running_var.clone()),
    };
    let inv_std: Vec<f32> = vars
        .iter()
        .map(|&v| (1.0 / (v as f64 + state.epsilon as f64).sqrt()) as f32)
        .collect();

    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (mean, is, g, b) = (means[c], inv_std[c], state.gamma[c], state.beta[c]);
            let x = input.plane(n, c);
            let xh = normalized.plane_mut(n, c);
            for (d, &v) in xh.iter_mut().zip(x) {
                *d = (v - mean) * is;
            }
            let xh = normalized.plane(n, c).to_vec();
            for (d, v) in out.plane_mut(n, c).iter_mut().zip(xh) {
                *d = g * v + b;
            }
        }
    }
    let batch_stats = (mode == Mode::Train).then_some((means, vars));
    Ok((
        out,
        BatchNormCache {
            mode,
            normalized,
            inv_std,
            batch_stats,
        },
    ))
}

/// Train-mode forward that also folds the batch statistics into the running
/// averages.
pub fn batchnorm_forward_train(input: &Tensor4, state: &mut BatchNormState) -> Result<Tensor4> {
    let (out, cache) = batchnorm_forward(input, state, Mode::Train)?;
    state.update_running(&cache);
    Ok(out)
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    state: &BatchNormState,
    grad_out: &Tensor4,
) -> Result<BatchNormGrads> {
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(Error::shapes("batchnorm_backward", grad_out.shape(), s));
    }
    let count = (s.n * s.plane()) as f64;
    let mut grad_gamma = vec![0.0f32; s.c];
    let mut grad_beta = vec![0.0f32; s.c];
    let mut grad_input = Tensor4::zeros(s);

    for c in 0..s.c {
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            for (&g, &xh) in grad_out.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                sum_g += g as f64;
                sum_gx += g as f64 * xh as f64;
            }
        }
        grad_gamma[c] = sum_gx as f32;
        grad_beta[c] = sum_g as f32;

        let gamma = state.gamma[c] as f64;
        let is = cache.inv_std[c] as f64;
        for n in 0..s.n {
            let g = grad_out.plane(n, c);
            let xh = cache.normalized.plane(n, c).to_vec();
            let dst = grad_input.plane_mut(n, c);
            match cache.mode {
                Mode::Train => {
                    let mean_g = sum_g / count;
                    let mean_gx = sum_gx / count;
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(&xh) {
                        *d = (gamma * is * (gv as f64 - mean_g - x as f64 * mean_gx)) as f32;
                    }
                }
                Mode::Infer => {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d = (gamma * is * gv as f64) as f32;
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}
