use serde::{Deserialize, Serialize};

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Stacks channels in argument order. All inputs share `n`, `h`, `w`.
pub fn concat_many(inputs: &[&Tensor4]) -> Result<Tensor4> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .shape();
    for t in &inputs[1..] {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::shapes("concat_channels", first, s));
        }
    }
    let c: usize = inputs.iter().map(|t| t.shape().c).sum();
    let shape = Shape4::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for t in inputs {
            data.extend_from_slice(t.item(n));
        }
    }
    Tensor4::from_vec(shape, data)
}

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    concat_many(&[a, b])
}

/// Splits an upstream gradient back into per-input pieces.
pub fn concat_backward(grad_out: &Tensor4, channels: &[usize]) -> Result<Vec<Tensor4>> {
    let s = grad_out.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::ShapeMismatch {
            op: "concat_backward",
            left: format!("gradient {s}"),
            right: format!("channel split {channels:?}"),
        });
    }
    let mut parts: Vec<Vec<f32>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * s.plane()))
        .collect();
    for n in 0..s.n {
        let item = grad_out.item(n);
        let mut offset = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            let len = c * s.plane();
            part.extend_from_slice(&item[offset..offset + len]);
            offset += len;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor4::from_vec(Shape4::new(s.n, c, s.h, s.w), data))
        .collect()
}

pub fn add_many(inputs: &[&Tensor4]) -> Result<Tensor4> {
    let (first, rest) = inputs
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("sum of zero tensors".into()))?;
    let mut out = (*first).clone();
    for t in rest {
        if t.shape() != first.shape() {
            return Err(Error::shapes("add_elementwise", first.shape(), t.shape()));
        }
        out.add_assign(t)?;
    }
    Ok(out)
}

pub fn add_elementwise(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    add_many(&[a, b])
}

pub fn add_backward(grad_out: &Tensor4, arity: usize) -> Vec<Tensor4> {
    vec![grad_out.clone(); arity]
}

/// Zero padding per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    /// TF-style "same" padding for a stride-2 window of odd size `k` over an
    /// even extent: total `k - 2`, the extra pixel going to the bottom/right.
    pub fn same_stride2(k: usize) -> Self {
        let total = k.saturating_sub(2);
        let before = total / 2;
        Padding {
            top: before,
            bottom: total - before,
            left: before,
            right: total - before,
        }
    }

    pub fn output_shape(&self, s: Shape4) -> Shape4 {
        Shape4::new(s.n, s.c, s.h + self.top + self.bottom, s.w + self.left + self.right)
    }
}

pub fn pad2d_forward(input: &Tensor4, pad: Padding) -> Tensor4 {
    let s = input.shape();
    let o = pad.output_shape(s);
    let mut out = Tensor4::zeros(o);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                let row = (y + pad.top) * o.w + pad.left;
                dst[row..row + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
            }
        }
    }
    out
}

pub fn pad2d_backward(grad_out: &Tensor4, pad: Padding) -> Result<Tensor4> {
    let o = grad_out.shape();
    if o.h < pad.top + pad.bottom + 1 || o.w < pad.left + pad.right + 1 {
        return Err(Error::Geometry {
            op: "pad2d_backward",
            msg: format!("gradient {o} smaller than padding {pad:?}"),
        });
    }
    let h = o.h - pad.top - pad.bottom;
    let w = o.w - pad.left - pad.right;
    Ok(window(grad_out, pad.top, pad.left, h, w))
}

fn window(x: &Tensor4, top: usize, left: usize, h: usize, w: usize) -> Tensor4 {
    let s = x.shape();
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                let row = (y + top) * s.w + left;
                dst[y * w..(y + 1) * w].copy_from_slice(&src[row..row + w]);
            }
        }
    }
    out
}

fn crop_offsets(from: Shape4, h: usize, w: usize) -> Result<(usize, usize)> {
    if h == 0 || w == 0 || h > from.h || w > from.w {
        return Err(Error::Geometry {
            op: "crop",
            msg: format!("cannot crop {from} to {h}x{w}"),
        });
    }
    Ok(((from.h - h) / 2, (from.w - w) / 2))
}

/// Center crop to `h x w`; an odd surplus leaves the extra pixel at the
/// bottom/right edge out.
pub fn crop_to(input: &Tensor4, h: usize, w: usize) -> Result<Tensor4> {
    let (top, left) = crop_offsets(input.shape(), h, w)?;
    Ok(window(input, top, left, h, w))
}

pub fn crop_backward(grad_out: &Tensor4, input_shape: Shape4) -> Result<Tensor4> {
    let g = grad_out.shape();
    let (top, left) = crop_offsets(input_shape, g.h, g.w)?;
    if g.n != input_shape.n || g.c != input_shape.c {
        return Err(Error::shapes("crop_backward", g, input_shape));
    }
    let pad = Padding {
        top,
        bottom: input_shape.h - g.h - top,
        left,
        right: input_shape.w - g.w - left,
    };
    Ok(pad2d_forward(grad_out, pad))
}
