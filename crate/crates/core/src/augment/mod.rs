//! Joint geometric augmentation of an image and its label mask: flips,
//! a random affine and an elastic deformation.

mod affine;
mod elastic;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use affine::{affine_transform, Affine};
pub use elastic::{displacement_field, elastic_transform, gaussian_kernel, ElasticParams};

use crate::error::{Error, Result};
use crate::grid::{check_same_extent, Image, Mask};
use crate::tensor::{derive_seed, RngStream};

/// Ranges are half-widths of intervals centred on the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    /// Relative per-axis scale change.
    pub scale_range: f64,
    /// Per-axis shift as a fraction of the extent.
    pub translate_range: f64,
    pub rotate_range: f64,
    pub shear_range: f64,
    /// Chance of applying each of scale, shear, rotation and translation.
    pub affine_prob: f64,
    pub elastic_prob: f64,
    pub elastic: ElasticParams,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            enabled: true,
            flip_h_prob: 0.2,
            flip_v_prob: 0.2,
            scale_range: 0.2,
            translate_range: 0.2,
            rotate_range: 25.0,
            shear_range: 8.0,
            affine_prob: 0.5,
            elastic_prob: 0.5,
            elastic: ElasticParams::default(),
        }
    }
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        AugmentSpec {
            enabled: false,
            ..AugmentSpec::default()
        }
    }

    /// Every probability and range zero: the pipeline runs but changes nothing.
    pub fn none() -> Self {
        AugmentSpec {
            enabled: true,
            flip_h_prob: 0.0,
            flip_v_prob: 0.0,
            scale_range: 0.0,
            translate_range: 0.0,
            rotate_range: 0.0,
            shear_range: 0.0,
            affine_prob: 0.0,
            elastic_prob: 0.0,
            elastic: ElasticParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("flip_h_prob", self.flip_h_prob),
            ("flip_v_prob", self.flip_v_prob),
            ("affine_prob", self.affine_prob),
            ("elastic_prob", self.elastic_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, format!("probability {p} outside [0, 1]")));
            }
        }
        for (field, r, max) in [
            ("scale_range", self.scale_range, 0.99),
            ("translate_range", self.translate_range, 1.0),
            ("rotate_range", self.rotate_range, 180.0),
            ("shear_range", self.shear_range, 80.0),
        ] {
            if !(0.0..=max).contains(&r) {
                return Err(Error::config(field, format!("half-width {r} outside [0, {max}]")));
            }
        }
        self.elastic.validate()
    }
}

/// One draw of the random affine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDraw {
    pub scale: (f64, f64),
    pub shear_degrees: f64,
    pub rotate_degrees: f64,
    /// Shift as a fraction of `(width, height)`.
    pub translate: (f64, f64),
}

fn symmetric(rng: &mut RngStream, half: f64) -> f64 {
    let u: f64 = rng.gen();
    (2.0 * u - 1.0) * half
}

/// Each of scale, shear, rotation and translation is switched on with
/// `affine_prob`. Every gate and value is drawn whether or not it is used,
/// so the stream position afterwards does not depend on the outcome.
pub fn sample_affine(spec: &AugmentSpec, rng: &mut RngStream) -> AffineDraw {
    let mut pair = |half: f64| {
        let on = rng.gen::<f64>() < spec.affine_prob;
        let (a, b) = (symmetric(rng, half), symmetric(rng, half));
        if on {
            (a, b)
        } else {
            (0.0, 0.0)
        }
    };
    let (sx, sy) = pair(spec.scale_range);
    let (shear_degrees, _) = pair(spec.shear_range);
    let (rotate_degrees, _) = pair(spec.rotate_range);
    let translate = pair(spec.translate_range);
    AffineDraw {
        scale: (1.0 + sx, 1.0 + sy),
        shear_degrees,
        rotate_degrees,
        translate,
    }
}

impl AffineDraw {
    /// Scale, then shear, then rotate, then translate, all about the grid
    /// center.
    pub fn matrix(&self, height: usize, width: usize) -> Affine {
        Affine::scale(self.scale.0, self.scale.1)
            .then(&Affine::shear_degrees(self.shear_degrees))
            .then(&Affine::rotation_degrees(self.rotate_degrees))
            .then(&Affine::translation(self.translate.0 * width as f64, self.translate.1 * height as f64))
            .about_center(height, width)
    }
}

pub fn compose_random_affine(spec: &AugmentSpec, rng: &mut RngStream, height: usize, width: usize) -> Affine {
    sample_affine(spec, rng).matrix(height, width)
}

/// The random decisions of one [`augment_sample`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub flip_h: bool,
    pub flip_v: bool,
    pub affine: Option<Affine>,
    /// Seed of the elastic displacement fields when elastic is applied.
    pub elastic_seed: Option<u64>,
}

pub fn plan_augmentation(spec: &AugmentSpec, height: usize, width: usize, sample_seed: u64) -> AugmentPlan {
    if !spec.enabled {
        return AugmentPlan {
            flip_h: false,
            flip_v: false,
            affine: None,
            elastic_seed: None,
        };
    }
    let mut rng = RngStream::new(sample_seed);
    let flip_h = rng.gen::<f64>() < spec.flip_h_prob;
    let flip_v = rng.gen::<f64>() < spec.flip_v_prob;
    let affine = compose_random_affine(spec, &mut rng, height, width);
    let elastic = rng.gen::<f64>() < spec.elastic_prob && spec.elastic.alpha > 0.0;
    AugmentPlan {
        flip_h,
        flip_v,
        affine: (!affine.is_identity()).then_some(affine),
        elastic_seed: elastic.then(|| derive_seed(sample_seed, &[1])),
    }
}

impl AugmentPlan {
    pub fn apply(&self, image: &Image, mask: &Mask, spec: &AugmentSpec) -> Result<(Image, Mask)> {
        check_same_extent("augment", image, mask)?;
        let (mut img, mut m) = (image.clone(), mask.clone());
        if self.flip_h {
            img = img.flip_horizontal();
            m = m.flip_horizontal();
        }
        if self.flip_v {
            img = img.flip_vertical();
            m = m.flip_vertical();
        }
        if let Some(a) = &self.affine {
            (img, m) = affine_transform(&img, &m, a)?;
        }
        if let Some(seed) = self.elastic_seed {
            (img, m) = elastic_transform(&img, &m, &spec.elastic, &mut RngStream::new(seed))?;
        }
        Ok((img, m))
    }
}

/// Flips by their probabilities, then one composed affine, then the
/// elastic warp, all drawn from `sample_seed`.
pub fn augment_sample(image: &Image, mask: &Mask, spec: &AugmentSpec, sample_seed: u64) -> Result<(Image, Mask)> {
    spec.validate()?;
    let (h, w) = image.extent();
    plan_augmentation(spec, h, w, sample_seed).apply(image, mask, spec)
}
