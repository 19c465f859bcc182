use rand::Rng;

use super::{Mode, RngStream, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Per-`(n, c)` multiplier: `0` for dropped channels, `1 / (1 - rate)` for
/// survivors, `1` in infer mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMask {
    shape: Shape4,
    scale: Vec<f32>,
}

impl ChannelMask {
    pub fn identity(shape: Shape4) -> Self {
        ChannelMask {
            shape,
            scale: vec![1.0; shape.n * shape.c],
        }
    }

    pub fn scales(&self) -> &[f32] {
        &self.scale
    }

    pub fn dropped(&self) -> usize {
        self.scale.iter().filter(|&&s| s == 0.0).count()
    }

    fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.shape() != self.shape {
            return Err(Error::shapes("channel_mask", x.shape(), self.shape));
        }
        let mut out = x.clone();
        let s = self.shape;
        for n in 0..s.n {
            for c in 0..s.c {
                let k = self.scale[n * s.c + c];
                if k != 1.0 {
                    out.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        Ok(out)
    }
}

/// Zeroes whole channels independently with probability `rate` in train mode.
pub fn spatial_dropout_forward(
    input: &Tensor4,
    rate: f32,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<(Tensor4, ChannelMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} must lie in [0, 1)"
        )));
    }
    let s = input.shape();
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), ChannelMask::identity(s)));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale = (0..s.n * s.c)
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
        .collect();
    let mask = ChannelMask { shape: s, scale };
    Ok((mask.apply(input)?, mask))
}

pub fn spatial_dropout_backward(mask: &ChannelMask, grad_out: &Tensor4) -> Result<Tensor4> {
    mask.apply(grad_out)
}
