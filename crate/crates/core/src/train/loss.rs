use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Smallest probability fed to the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    /// One weight per class, background first.
    pub class_weights: Vec<f64>,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            class_weights: vec![0.05, 0.95],
        }
    }
}

impl LossSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.class_weights.len() != num_classes {
            return Err(Error::config(
                "class_weights",
                format!("{} weights for {num_classes} classes", self.class_weights.len()),
            ));
        }
        if let Some(w) = self.class_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::config("class_weights", format!("weight {w} must be positive and finite")));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> LossSpec {
        LossSpec {
            class_weights: self.class_weights.iter().map(|w| w * k).collect(),
        }
    }
}

/// Index of the hot channel at every pixel, rejecting anything that is not
/// exactly one-hot.
fn hot_classes(labels: &Tensor4) -> Result<Vec<usize>> {
    let s = labels.shape();
    let mut out = Vec::with_capacity(s.n * s.plane());
    for n in 0..s.n {
        for i in 0..s.plane() {
            let mut hot = None;
            for c in 0..s.c {
                match labels.plane(n, c)[i] {
                    0.0 => {}
                    1.0 if hot.is_none() => hot = Some(c),
                    v => {
                        return Err(Error::InvalidArgument(format!(
                            "labels are not one-hot at item {n}, pixel {i} (value {v} in channel {c})"
                        )))
                    }
                }
            }
            out.push(hot.ok_or_else(|| {
                Error::InvalidArgument(format!("labels are not one-hot at item {n}, pixel {i} (no class set)"))
            })?);
        }
    }
    Ok(out)
}

/// Class-weighted cross-entropy averaged over every pixel of the batch:
/// `-(1/P) Σ w_c log p_c` at each pixel's true class `c`.
///
/// The returned gradient is with respect to the logits that produced
/// `probs` through a channel softmax: `w_c (p - y) / P`.
pub fn weighted_cross_entropy(probs: &Tensor4, labels: &Tensor4, spec: &LossSpec) -> Result<(f64, Tensor4)> {
    let s = probs.shape();
    if labels.shape() != s {
        return Err(Error::shapes("weighted_cross_entropy", s, labels.shape()));
    }
    spec.validate(s.c)?;
    let classes = hot_classes(labels)?;
    let pixels = (s.n * s.plane()) as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor4::zeros(s);
    for n in 0..s.n {
        for i in 0..s.plane() {
            let c = classes[n * s.plane() + i];
            let w = spec.class_weights[c];
            let p = probs.plane(n, c)[i] as f64;
            // `max` would turn a NaN probability into the clamp value.
            let clamped = if p.is_nan() { p } else { p.max(LOG_CLAMP) };
            loss -= w * clamped.ln();
            for k in 0..s.c {
                let y = if k == c { 1.0 } else { 0.0 };
                let g = w * (probs.plane(n, k)[i] as f64 - y) / pixels;
                grad.plane_mut(n, k)[i] = g as f32;
            }
        }
    }
    Ok((loss / pixels, grad))
}

/// One-hot `(n, classes, h, w)` tensor from per-item label planes.
pub fn one_hot(labels: &[&[u8]], classes: usize, height: usize, width: usize) -> Result<Tensor4> {
    let shape = Shape4::new(labels.len(), classes, height, width);
    let mut t = Tensor4::zeros(shape);
    for (n, plane) in labels.iter().enumerate() {
        if plane.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "label plane {n} has {} values, expected {}",
                plane.len(),
                height * width
            )));
        }
        for (i, &l) in plane.iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::InvalidArgument(format!("label {l} outside {classes} classes")));
            }
            t.plane_mut(n, l)[i] = 1.0;
        }
    }
    Ok(t)
}
