use rayon::prelude::*;

use super::{window_extent, Shape4, Tensor4};
use crate::error::{Error, Result};

/// One `k_h x k_w` kernel per channel, stored as `(c, 1, k_h, k_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseParams {
    pub weights: Tensor4,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct DepthwiseGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
}

impl DepthwiseParams {
    pub fn zeros(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        DepthwiseParams {
            weights: Tensor4::zeros(Shape4::new(channels, 1, kernel, kernel)),
            stride,
            padding,
        }
    }

    pub fn channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape().h, self.weights.shape().w)
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if self.weights.shape().c != 1 {
            return Err(Error::Geometry {
                op: "depthwise_conv",
                msg: format!("kernels must be shaped (c, 1, kh, kw), got {}", self.weights.shape()),
            });
        }
        if self.channels() != input.c {
            return Err(Error::ShapeMismatch {
                op: "depthwise_conv",
                left: format!("input {input}"),
                right: format!("{} kernels", self.channels()),
            });
        }
        let (kh, kw) = self.kernel();
        let h = window_extent("depthwise_conv", input.h, kh, self.stride, self.padding)?;
        let w = window_extent("depthwise_conv", input.w, kw, self.stride, self.padding)?;
        Ok(Shape4::new(input.n, input.c, h, w))
    }
}

#[inline]
fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let v = (o * stride + k) as isize - pad as isize;
    (v >= 0 && (v as usize) < extent).then_some(v as usize)
}

pub fn depthwise_forward(input: &Tensor4, params: &DepthwiseParams) -> Result<Tensor4> {
    let s = input.shape();
    let out_shape = params.output_shape(s)?;
    let (kh, kw) = params.kernel();
    let (stride, pad) = (params.stride, params.padding);
    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, c) = (idx / s.c, idx % s.c);
            let x = input.plane(n, c);
            let k = params.weights.plane(c, 0);
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut acc = 0.0f32;
                    for i in 0..kh {
                        let Some(iy) = src(oy, i, stride, pad, s.h) else { continue };
                        for j in 0..kw {
                            if let Some(ix) = src(ox, j, stride, pad, s.w) {
                                acc += x[iy * s.w + ix] * k[i * kw + j];
                            }
                        }
                    }
                    dst[oy * out_shape.w + ox] = acc;
                }
            }
        });
    Ok(out)
}

pub fn depthwise_backward(
    input: &Tensor4,
    params: &DepthwiseParams,
    grad_out: &Tensor4,
) -> Result<DepthwiseGrads> {
    let s = input.shape();
    let out_shape = params.output_shape(s)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shapes("depthwise_backward", grad_out.shape(), out_shape));
    }
    let (kh, kw) = params.kernel();
    let (stride, pad) = (params.stride, params.padding);

    let partials: Vec<(Vec<f32>, Vec<f32>)> = (0..s.n * s.c)
        .into_par_iter()
        .map(|idx| {
            let (n, c) = (idx / s.c, idx % s.c);
            let x = input.plane(n, c);
            let g = grad_out.plane(n, c);
            let k = params.weights.plane(c, 0);
            let mut gx = vec![0.0; s.plane()];
            let mut gk = vec![0.0; kh * kw];
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let go = g[oy * out_shape.w + ox];
                    for i in 0..kh {
                        let Some(iy) = src(oy, i, stride, pad, s.h) else { continue };
                        for j in 0..kw {
                            if let Some(ix) = src(ox, j, stride, pad, s.w) {
                                gx[iy * s.w + ix] += go * k[i * kw + j];
                                gk[i * kw + j] += go * x[iy * s.w + ix];
                            }
                        }
                    }
                }
            }
            (gx, gk)
        })
        .collect();

    let mut grad_input = Vec::with_capacity(s.len());
    let mut grad_w = vec![0.0; params.weights.shape().len()];
    for (idx, (gx, gk)) in partials.into_iter().enumerate() {
        grad_input.extend_from_slice(&gx);
        let c = idx % s.c;
        grad_w[c * kh * kw..(c + 1) * kh * kw]
            .iter_mut()
            .zip(&gk)
            .for_each(|(a, b)| *a += b);
    }
    Ok(DepthwiseGrads {
        input: Tensor4::from_vec(s, grad_input)?,
        weights: Tensor4::from_vec(params.weights.shape(), grad_w)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, check_input_gradient, check_slice_gradient};
    use crate::tensor::{conv2d_forward, ConvParams, RngStream};

    #[test]
    fn identity_kernels_pass_input_through() {
        let mut rng = RngStream::new(10);
        let x = Tensor4::random_uniform(Shape4::new(1, 2, 5, 4), &mut rng);
        let mut p = DepthwiseParams::zeros(2, 3, 1, 1);
        p.weights.set(0, 0, 1, 1, 1.0);
        p.weights.set(1, 0, 1, 1, 1.0);
        assert_eq!(depthwise_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn single_channel_agrees_with_conv2d() {
        let mut rng = RngStream::new(11);
        for &(s, pad) in &[(1, 1), (2, 0), (1, 0)] {
            let x = Tensor4::random_uniform(Shape4::new(2, 1, 7, 7), &mut rng);
            let w = Tensor4::random_uniform(Shape4::new(1, 1, 3, 3), &mut rng);
            let dw = DepthwiseParams { weights: w.clone(), stride: s, padding: pad };
            let conv = ConvParams::new(w, vec![0.0], s, pad).unwrap();
            let a = depthwise_forward(&x, &dw).unwrap();
            let b = conv2d_forward(&x, &conv).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn output_channel_depends_only_on_its_input_channel() {
        let mut rng = RngStream::new(12);
        let x = Tensor4::random_uniform(Shape4::new(1, 3, 5, 5), &mut rng);
        let p = DepthwiseParams { weights: Tensor4::random_uniform(Shape4::new(3, 1, 3, 3), &mut rng), stride: 1, padding: 1 };
        let base = depthwise_forward(&x, &p).unwrap();
        let mut y = x.clone();
        y.plane_mut(0, 1).iter_mut().for_each(|v| *v += 1.0);
        let moved = depthwise_forward(&y, &p).unwrap();
        assert_eq!(base.plane(0, 0), moved.plane(0, 0));
        assert_eq!(base.plane(0, 2), moved.plane(0, 2));
        assert_ne!(base.plane(0, 1), moved.plane(0, 1));
    }

    #[test]
    fn rejects_kernel_count_mismatch() {
        let x = Tensor4::zeros(Shape4::new(1, 3, 5, 5));
        assert!(depthwise_forward(&x, &DepthwiseParams::zeros(2, 3, 1, 1)).is_err());
    }

    #[test]
    fn finite_differences_match() {
        let mut rng = RngStream::new(13);
        for &(k, s, pad, h) in &[(3, 1, 1, 5), (3, 2, 0, 5), (5, 1, 2, 6)] {
            let x = Tensor4::random_uniform(Shape4::new(2, 2, h, h), &mut rng);
            let p = DepthwiseParams { weights: Tensor4::random_uniform(Shape4::new(2, 1, k, k), &mut rng), stride: s, padding: pad };
            let proj = gradcheck::projection(p.output_shape(x.shape()).unwrap(), 7);
            let g = depthwise_backward(&x, &p, &proj).unwrap();
            let r = check_input_gradient(&x, g.input.data(), gradcheck::LINEAR_STEP, |x| {
                Some(depthwise_forward(x, &p).ok()?.dot(&proj).unwrap())
            });
            assert!(r.passes(gradcheck::TOLERANCE), "{r:?}");
            let r = check_slice_gradient(p.weights.data(), g.weights.data(), gradcheck::LINEAR_STEP, |w| {
                let mut q = p.clone();
                q.weights.data_mut().copy_from_slice(w);
                Some(depthwise_forward(&x, &q).ok()?.dot(&proj).unwrap())
            });
            assert!(r.passes(gradcheck::TOLERANCE), "{r:?}");
        }
    }
}
