//! Dense rank-4 tensors and the differentiable layer primitives built on them.
//!
//! Every operation here is a pure function of its inputs: forward functions
//! return the output together with whatever the backward pass needs, and
//! backward functions take that record plus the upstream gradient.

mod activation;
mod batchnorm;
mod combine;
mod conv;
mod depthwise;
mod dropout;
mod gemm;
mod pool;
mod rng;
mod upconv;

pub use activation::{
    relu_backward, relu_forward, softmax_channel_backward, softmax_channel_forward, ReluCap,
};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_train, BatchNormCache,
    BatchNormGrads, BatchNormState, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM,
};
pub use combine::{
    add_backward, add_elementwise, add_many, concat_backward, concat_channels, concat_many,
    crop_backward, crop_to, pad2d_backward, pad2d_forward, Padding,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use depthwise::{depthwise_backward, depthwise_forward, DepthwiseGrads, DepthwiseParams};
pub use dropout::{
    spatial_dropout_backward, spatial_dropout_forward, ChannelMask,
};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, maxpool2x2_select, PoolIndices};
pub use rng::{derive_seed, RngStream};
pub use upconv::{upconv2x_backward, upconv2x_forward, UpConvGrads, UpConvParams};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train mode uses batch statistics and stochastic regularizers; infer mode
/// is deterministic and uses running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Number of values in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Geometry {
                op: "tensor",
                msg: format!("all extents must be at least 1, got {self}"),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major `(batch, channel, height, width)` array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn from_vec(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Geometry {
                op: "tensor",
                msg: format!(
                    "data length {} does not match shape {shape} ({} values)",
                    data.len(),
                    shape.len()
                ),
            });
        }
        Ok(Tensor4 { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: Shape4) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape4, value: f32) -> Self {
        shape.validate().expect("tensor extents must be positive");
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        t.data[i] = f(n, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    /// Uniform values in `[-1, 1)`.
    pub fn random_uniform(shape: Shape4, rng: &mut RngStream) -> Self {
        use rand::Rng;
        let data = (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Self::from_vec(shape, data).expect("length matches by construction")
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Slice of one `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Slice of one batch item.
    pub fn item(&self, n: usize) -> &[f32] {
        let s = self.shape.item();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f32) -> Tensor4 {
        self.map(|v| v * k)
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor4) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shapes("dot", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shapes("add_assign", self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(self, shape: Shape4) -> Result<Tensor4> {
        Tensor4::from_vec(shape, self.data)
    }
}

pub(crate) fn ensure_channels(op: &'static str, input: Shape4, expected: usize) -> Result<()> {
    if input.c != expected {
        return Err(Error::ShapeMismatch {
            op,
            left: format!("input {input}"),
            right: format!("{expected} expected channels"),
        });
    }
    Ok(())
}

/// Output extent of a strided window; rejects empty and non-integral results.
pub(crate) fn window_extent(
    op: &'static str,
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry {
            op,
            msg: "stride must be positive".into(),
        });
    }
    let padded = extent + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry {
            op,
            msg: format!("kernel {kernel} larger than padded extent {padded}"),
        });
    }
    let span = padded - kernel;
    if !span.is_multiple_of(stride) {
        return Err(Error::Geometry {
            op,
            msg: format!(
                "output extent ({extent} + 2*{pad} - {kernel})/{stride} + 1 is not an integer"
            ),
        });
    }
    Ok(span / stride + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(Tensor4::from_vec(Shape4::new(1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let s = Shape4::new(2, 3, 4, 5);
        let t = Tensor4::from_fn(s, |n, c, h, w| (n * 1000 + c * 100 + h * 10 + w) as f32);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[s.index(1, 2, 3, 4)], 1234.0);
        assert_eq!(t.plane(1, 2)[3 * 5 + 4], 1234.0);
    }

    #[test]
    fn window_extent_rules() {
        assert_eq!(window_extent("t", 5, 3, 1, 1).unwrap(), 5);
        assert_eq!(window_extent("t", 8, 2, 2, 0).unwrap(), 4);
        assert!(window_extent("t", 8, 3, 2, 1).is_err());
        assert!(window_extent("t", 2, 3, 1, 0).is_err());
    }
}
