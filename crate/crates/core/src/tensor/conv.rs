use rayon::prelude::*;

use super::gemm::{gemm, Mat};
use super::{ensure_channels, window_extent, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Weights shaped `(c_out, c_in, k_h, k_w)`, one bias per output channel and
/// symmetric zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor4,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor4, bias: Vec<f32>, stride: usize, padding: usize) -> Result<Self> {
        let p = ConvParams {
            weights,
            bias,
            stride,
            padding,
        };
        p.validate()?;
        Ok(p)
    }

    /// Zero-initialized parameters.
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            weights: Tensor4::zeros(Shape4::new(c_out, c_in, kernel, kernel)),
            bias: vec![0.0; c_out],
            stride,
            padding,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s.h, s.w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.c_out() {
            return Err(Error::Geometry {
                op: "conv2d",
                msg: format!(
                    "bias length {} does not match {} output channels",
                    self.bias.len(),
                    self.c_out()
                ),
            });
        }
        if self.stride == 0 {
            return Err(Error::Geometry {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.validate()?;
        ensure_channels("conv2d", input, self.c_in())?;
        let (kh, kw) = self.kernel();
        let h = window_extent("conv2d", input.h, kh, self.stride, self.padding)?;
        let w = window_extent("conv2d", input.w, kw, self.stride, self.padding)?;
        Ok(Shape4::new(input.n, self.c_out(), h, w))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == (1, 1) && self.stride == 1 && self.padding == 0
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Vec<f32>,
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(params: &ConvParams, input: Shape4, output: Shape4) -> Self {
        let (kh, kw) = params.kernel();
        Geometry {
            c_in: input.c,
            h: input.h,
            w: input.w,
            kh,
            kw,
            stride: params.stride,
            pad: params.padding,
            ho: output.h,
            wo: output.w,
        }
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }

    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let cols = self.cols();
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match self.src(oy, ki, self.h) {
                            None => line.iter_mut().for_each(|v| *v = 0.0),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = self.src(ox, kj, self.w).map_or(0.0, |ix| src_row[ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], x: &mut [f32]) {
        let cols = self.cols();
        for ci in 0..self.c_in {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, ki, self.h) else {
                            continue;
                        };
                        for ox in 0..self.wo {
                            if let Some(ix) = self.src(ox, kj, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation plus per-channel bias.
pub fn conv2d_forward(input: &Tensor4, params: &ConvParams) -> Result<Tensor4> {
    let in_shape = input.shape();
    let out_shape = params.output_shape(in_shape)?;
    let geo = Geometry::new(params, in_shape, out_shape);
    let c_out = params.c_out();
    let weights = Mat::new(params.weights.data(), c_out, geo.rows());

    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            let x = input.item(n);
            for (co, chunk) in dst.chunks_mut(geo.cols()).enumerate() {
                chunk.iter_mut().for_each(|v| *v = params.bias[co]);
            }
            if params.is_pointwise() {
                gemm(weights, Mat::new(x, geo.rows(), geo.cols()), 1.0, dst);
            } else {
                let mut col = vec![0.0; geo.rows() * geo.cols()];
                geo.im2col(x, &mut col);
                gemm(weights, Mat::new(&col, geo.rows(), geo.cols()), 1.0, dst);
            }
        });
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor4,
    params: &ConvParams,
    grad_out: &Tensor4,
) -> Result<ConvGrads> {
    let in_shape = input.shape();
    let out_shape = params.output_shape(in_shape)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shapes("conv2d_backward", grad_out.shape(), out_shape));
    }
    let geo = Geometry::new(params, in_shape, out_shape);
    let c_out = params.c_out();
    let (rows, cols) = (geo.rows(), geo.cols());
    let weights = Mat::new(params.weights.data(), c_out, rows);

    // Per-item partial results, reduced in batch order so the sum is
    // independent of thread scheduling.
    let partials: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..in_shape.n)
        .into_par_iter()
        .map(|n| {
            let x = input.item(n);
            let g = grad_out.item(n);
            let g_mat = Mat::new(g, c_out, cols);

            let mut gw = vec![0.0; c_out * rows];
            let mut gx = vec![0.0; in_shape.item()];
            if params.is_pointwise() {
                gemm(g_mat, Mat::new(x, rows, cols).t(), 0.0, &mut gw);
                gemm(weights.t(), g_mat, 0.0, &mut gx);
            } else {
                let mut col = vec![0.0; rows * cols];
                geo.im2col(x, &mut col);
                gemm(g_mat, Mat::new(&col, rows, cols).t(), 0.0, &mut gw);
                gemm(weights.t(), g_mat, 0.0, &mut col);
                geo.col2im(&col, &mut gx);
            }
            let gb = g.chunks(cols).map(|c| c.iter().sum()).collect();
            (gx, gw, gb)
        })
        .collect();

    let mut grad_input = Vec::with_capacity(in_shape.len());
    let mut grad_w = vec![0.0; c_out * rows];
    let mut grad_b = vec![0.0; c_out];
    for (gx, gw, gb) in partials {
        grad_input.extend_from_slice(&gx);
        grad_w.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
        grad_b.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        input: Tensor4::from_vec(in_shape, grad_input)?,
        weights: Tensor4::from_vec(params.weights.shape(), grad_w)?,
        bias: grad_b,
    })
}
