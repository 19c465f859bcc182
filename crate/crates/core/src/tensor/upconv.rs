use rayon::prelude::*;

use super::gemm::{gemm, Mat};
use super::{ensure_channels, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Stride-2 transposed convolution with 2x2 kernels. Weights are stored
/// `(c_in, c_out, 2, 2)`, which is exactly the weight layout of the stride-2
/// convolution it is the adjoint of.
#[derive(Debug, Clone, PartialEq)]
pub struct UpConvParams {
    pub weights: Tensor4,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct UpConvGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Vec<f32>,
}

impl UpConvParams {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        UpConvParams {
            weights: Tensor4::zeros(Shape4::new(c_in, c_out, 2, 2)),
            bias: vec![0.0; c_out],
        }
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().n
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().c
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let ws = self.weights.shape();
        if ws.h != 2 || ws.w != 2 {
            return Err(Error::Geometry {
                op: "upconv2x",
                msg: format!("kernel must be 2x2, got {ws}"),
            });
        }
        if self.bias.len() != self.c_out() {
            return Err(Error::Geometry {
                op: "upconv2x",
                msg: format!("bias length {} for {} output channels", self.bias.len(), self.c_out()),
            });
        }
        ensure_channels("upconv2x", input, self.c_in())?;
        Ok(Shape4::new(input.n, self.c_out(), input.h * 2, input.w * 2))
    }
}

pub fn upconv2x_forward(input: &Tensor4, params: &UpConvParams) -> Result<Tensor4> {
    let s = input.shape();
    let out_shape = params.output_shape(s)?;
    let (c_in, c_out, p) = (s.c, params.c_out(), s.plane());
    let w = Mat::new(params.weights.data(), c_in, c_out * 4);

    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            let mut taps = vec![0.0; c_out * 4 * p];
            gemm(w.t(), Mat::new(input.item(n), c_in, p), 0.0, &mut taps);
            let ow = 2 * s.w;
            for o in 0..c_out {
                let plane = &mut dst[o * 4 * p..(o + 1) * 4 * p];
                for a in 0..2 {
                    for b in 0..2 {
                        let row = &taps[(o * 4 + a * 2 + b) * p..(o * 4 + a * 2 + b + 1) * p];
                        for i in 0..s.h {
                            for j in 0..s.w {
                                plane[(2 * i + a) * ow + 2 * j + b] = row[i * s.w + j] + params.bias[o];
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn upconv2x_backward(
    input: &Tensor4,
    params: &UpConvParams,
    grad_out: &Tensor4,
) -> Result<UpConvGrads> {
    let s = input.shape();
    let out_shape = params.output_shape(s)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shapes("upconv2x_backward", grad_out.shape(), out_shape));
    }
    let (c_in, c_out, p) = (s.c, params.c_out(), s.plane());
    let w = Mat::new(params.weights.data(), c_in, c_out * 4);
    let ow = 2 * s.w;

    let partials: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let g = grad_out.item(n);
            let mut gathered = vec![0.0; c_out * 4 * p];
            let mut gb = vec![0.0; c_out];
            for o in 0..c_out {
                let plane = &g[o * 4 * p..(o + 1) * 4 * p];
                gb[o] = plane.iter().sum();
                for a in 0..2 {
                    for b in 0..2 {
                        let row = &mut gathered[(o * 4 + a * 2 + b) * p..(o * 4 + a * 2 + b + 1) * p];
                        for i in 0..s.h {
                            for j in 0..s.w {
                                row[i * s.w + j] = plane[(2 * i + a) * ow + 2 * j + b];
                            }
                        }
                    }
                }
            }
            let g_mat = Mat::new(&gathered, c_out * 4, p);
            let mut gx = vec![0.0; c_in * p];
            gemm(w, g_mat, 0.0, &mut gx);
            let mut gw = vec![0.0; c_in * c_out * 4];
            gemm(Mat::new(input.item(n), c_in, p), g_mat.t(), 0.0, &mut gw);
            (gx, gw, gb)
        })
        .collect();

    let mut grad_input = Vec::with_capacity(s.len());
    let mut grad_w = vec![0.0; c_in * c_out * 4];
    let mut grad_b = vec![0.0; c_out];
    for (gx, gw, gb) in partials {
        grad_input.extend_from_slice(&gx);
        grad_w.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
        grad_b.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
    }
    Ok(UpConvGrads {
        input: Tensor4::from_vec(s, grad_input)?,
        weights: Tensor4::from_vec(params.weights.shape(), grad_w)?,
        bias: grad_b,
    })
}
