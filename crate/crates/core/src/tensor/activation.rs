use serde::{Deserialize, Serialize};

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReluCap {
    None,
    Six,
}

impl ReluCap {
    fn upper(self) -> f32 {
        match self {
            ReluCap::None => f32::INFINITY,
            ReluCap::Six => 6.0,
        }
    }

    /// Open interval where the gradient passes through.
    #[inline]
    pub fn is_active(self, x: f32) -> bool {
        x > 0.0 && x < self.upper()
    }
}

pub fn relu_forward(input: &Tensor4, cap: ReluCap) -> Tensor4 {
    let hi = cap.upper();
    input.map(|v| v.max(0.0).min(hi))
}

/// Gradient is zero at the clamp points themselves.
pub fn relu_backward(input: &Tensor4, cap: ReluCap, grad_out: &Tensor4) -> Result<Tensor4> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shapes("relu_backward", input.shape(), grad_out.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if cap.is_active(x) { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(input.shape(), data)
}

fn check_classes(op: &'static str, s: Shape4) -> Result<()> {
    if s.c < 2 {
        return Err(Error::Geometry {
            op,
            msg: format!("softmax needs at least 2 channels, got {s}"),
        });
    }
    Ok(())
}

/// Per-pixel softmax over the channel axis, max-subtracted.
pub fn softmax_channel_forward(logits: &Tensor4) -> Result<Tensor4> {
    let s = logits.shape();
    check_classes("softmax", s)?;
    let p = s.plane();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        let x = logits.item(n);
        let base = n * s.item();
        let dst = &mut out.data_mut()[base..base + s.item()];
        for i in 0..p {
            let max = (0..s.c).map(|c| x[c * p + i]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for c in 0..s.c {
                let e = ((x[c * p + i] - max) as f64).exp();
                dst[c * p + i] = e as f32;
                sum += e;
            }
            for c in 0..s.c {
                dst[c * p + i] = (dst[c * p + i] as f64 / sum) as f32;
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of the softmax given its output `probs`.
pub fn softmax_channel_backward(probs: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    let s = probs.shape();
    check_classes("softmax_backward", s)?;
    if grad_out.shape() != s {
        return Err(Error::shapes("softmax_backward", grad_out.shape(), s));
    }
    let p = s.plane();
    let mut grad = Tensor4::zeros(s);
    for n in 0..s.n {
        let (pr, g) = (probs.item(n), grad_out.item(n));
        let base = n * s.item();
        let dst = &mut grad.data_mut()[base..base + s.item()];
        for i in 0..p {
            let dot: f64 = (0..s.c).map(|c| pr[c * p + i] as f64 * g[c * p + i] as f64).sum();
            for c in 0..s.c {
                dst[c * p + i] = (pr[c * p + i] as f64 * (g[c * p + i] as f64 - dot)) as f32;
            }
        }
    }
    Ok(grad)
}
