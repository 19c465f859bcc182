use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Winning window offset (0..4, row-major) for every output value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PoolIndices {
    input_shape: Shape4,
    offsets: Vec<u8>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }

    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first position in
/// row-major scan order.
pub fn maxpool2x2_forward(input: &Tensor4) -> Result<(Tensor4, PoolIndices)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Geometry {
            op: "maxpool2x2",
            msg: format!("spatial extents must be even, got {s}"),
        });
    }
    let out_shape = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut offsets = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let x = input.plane(n, c);
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut best = x[2 * oy * s.w + 2 * ox];
                    let mut arg = 0u8;
                    for k in 1..4u8 {
                        let v = x[(2 * oy + (k / 2) as usize) * s.w + 2 * ox + (k % 2) as usize];
                        if v > best {
                            best = v;
                            arg = k;
                        }
                    }
                    out.push(best);
                    offsets.push(arg);
                }
            }
        }
    }
    Ok((
        Tensor4::from_vec(out_shape, out)?,
        PoolIndices {
            input_shape: s,
            offsets,
        },
    ))
}

/// Gathers the window positions recorded in `indices` from `input`, which
/// need not be their maxima. Replays a pooling decision on a perturbed
/// input.
pub fn maxpool2x2_select(input: &Tensor4, indices: &PoolIndices) -> Result<Tensor4> {
    let s = indices.input_shape;
    if input.shape() != s {
        return Err(Error::shapes("maxpool2x2_select", input.shape(), s));
    }
    let out_shape = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut k = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let x = input.plane(n, c);
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let off = indices.offsets[k] as usize;
                    out.push(x[(2 * oy + off / 2) * s.w + 2 * ox + off % 2]);
                    k += 1;
                }
            }
        }
    }
    Tensor4::from_vec(out_shape, out)
}

pub fn maxpool2x2_backward(indices: &PoolIndices, grad_out: &Tensor4) -> Result<Tensor4> {
    let s = indices.input_shape;
    let out_shape = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    if grad_out.shape() != out_shape {
        return Err(Error::shapes("maxpool2x2_backward", grad_out.shape(), out_shape));
    }
    let mut grad = Tensor4::zeros(s);
    let mut k = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let off = indices.offsets[k];
                    let y = 2 * oy + (off / 2) as usize;
                    let x = 2 * ox + (off % 2) as usize;
                    dst[y * s.w + x] += g[oy * out_shape.w + ox];
                    k += 1;
                }
            }
        }
    }
    Ok(grad)
}
