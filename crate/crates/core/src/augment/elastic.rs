use rand::Rng;
use serde::{Deserialize, Serialize};

use super::affine::warp;
use crate::error::{Error, Result};
use crate::grid::{check_same_extent, Image, Mask};
use crate::tensor::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticParams {
    /// Multiplier of the smoothed displacement fields, in pixels.
    pub alpha: f64,
    /// Standard deviation of the Gaussian smoothing, in pixels.
    pub sigma: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        ElasticParams {
            alpha: 720.0,
            sigma: 24.0,
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("elastic.alpha", "must be finite and non-negative"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("elastic.sigma", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Normalized Gaussian taps truncated at three standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(0.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `0..n` with the edge sample repeated
/// (`d c b a | a b c d | d c b a`), for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable convolution with reflected borders.
fn smooth(field: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            rows[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * field[r * w + reflect(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * rows[reflect(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

/// Per-pixel `(dx, dy)`: two independent uniform(-1, 1) fields, smoothed
/// and multiplied by `alpha`.
pub fn displacement_field(height: usize, width: usize, params: &ElasticParams, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let kernel = gaussian_kernel(params.sigma);
    let mut draw = || -> Vec<f64> { (0..height * width).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let (raw_x, raw_y) = (draw(), draw());
    let scale = |v: Vec<f64>| v.into_iter().map(|d| d * params.alpha).collect::<Vec<_>>();
    (
        scale(smooth(&raw_x, height, width, &kernel)),
        scale(smooth(&raw_y, height, width, &kernel)),
    )
}

pub fn elastic_transform(image: &Image, mask: &Mask, params: &ElasticParams, rng: &mut RngStream) -> Result<(Image, Mask)> {
    check_same_extent("elastic_transform", image, mask)?;
    params.validate()?;
    let (h, w) = image.extent();
    let (dx, dy) = displacement_field(h, w, params, rng);
    Ok(warp(image, mask, |r, c| (c as f64 + dx[r * w + c], r as f64 + dy[r * w + c])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_truncated() {
        for sigma in [0.3, 1.0, 2.5, 24.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(k.windows(2).take(k.len() / 2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn reflection_folds_any_offset() {
        let idx: Vec<usize> = (-5..9).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1, 2]);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let out = smooth(&[2.0; 12], 3, 4, &gaussian_kernel(5.0));
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }
}
