use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dseg::{save_image, save_mask};
use super::manifest::{write_manifest, CaseEntry, DatasetManifest, MANIFEST_VERSION};
use super::preprocess::{prepare_slice, SliceRecord};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::tensor::{derive_seed, RngStream};

/// Raw tumor labels assigned to successive blobs, so generated masks
/// exercise binarization.
const BLOB_LABELS: [u8; 3] = [2, 1, 4];

/// Synthetic slices: a bright noisy ellipse on a zero background with a
/// few smooth bright bumps inside it as the tumor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub extent: usize,
    /// Range of the ellipse semi-axes as a fraction of the extent.
    pub brain_axes: [f32; 2],
    pub brain_intensity: [f32; 2],
    pub max_blobs: usize,
    /// Range of blob radii as a fraction of the extent.
    pub blob_radius: [f32; 2],
    /// Peak intensity added at a blob center.
    pub blob_intensity: [f32; 2],
    /// Standard deviation of the additive noise inside the brain.
    pub noise: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            extent: 224,
            brain_axes: [0.30, 0.42],
            brain_intensity: [0.4, 0.7],
            max_blobs: 3,
            blob_radius: [0.03, 0.07],
            blob_intensity: [0.3, 0.6],
            noise: 0.05,
            seed: 0,
        }
    }
}

fn check_range(field: &str, r: [f32; 2], lo: f32, hi: f32) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi) {
        return Err(Error::config(
            field,
            format!("range [{}, {}] must be ordered and within [{lo}, {hi}]", r[0], r[1]),
        ));
    }
    Ok(())
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent < 8 {
            return Err(Error::config("extent", "must be at least 8"));
        }
        check_range("brain_axes", self.brain_axes, 0.05, 0.5)?;
        check_range("brain_intensity", self.brain_intensity, 1e-3, 1e3)?;
        check_range("blob_radius", self.blob_radius, 0.0, 0.5)?;
        check_range("blob_intensity", self.blob_intensity, 0.0, 1e3)?;
        if self.blob_radius[1] >= self.brain_axes[0] {
            return Err(Error::config("blob_radius", "largest blob must be smaller than the smallest brain axis"));
        }
        if self.max_blobs == 0 {
            return Err(Error::config("max_blobs", "must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One generated slice with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSlice {
    pub image: Image,
    /// Raw labels in {0, 1, 2, 4}.
    pub labels: Mask,
    /// Support of the brain ellipse.
    pub brain: Mask,
    pub blob_count: usize,
}

fn uniform(rng: &mut RngStream, r: [f32; 2]) -> f32 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Deterministic in `(spec.seed, case, slice)`. The brain shape depends on
/// the case only; blobs and noise change per slice.
pub fn phantom_slice(spec: &PhantomSpec, case: usize, slice: usize) -> Result<PhantomSlice> {
    spec.validate()?;
    let n = spec.extent;
    let e = n as f32;
    let mut case_rng = RngStream::new(derive_seed(spec.seed, &[case as u64]));
    let a = uniform(&mut case_rng, spec.brain_axes) * e;
    let b = uniform(&mut case_rng, spec.brain_axes) * e;
    let cy = (e - 1.0) / 2.0 + case_rng.gen_range(-0.04..0.04) * e;
    let cx = (e - 1.0) / 2.0 + case_rng.gen_range(-0.04..0.04) * e;
    let base = uniform(&mut case_rng, spec.brain_intensity);
    // Normalized ellipse radius; a norm, so rho(p + v) <= rho(p) + |v| / min(a, b).
    let rho = |y: f32, x: f32| (((y - cy) / b).powi(2) + ((x - cx) / a).powi(2)).sqrt();

    let mut rng = RngStream::new(derive_seed(spec.seed, &[case as u64, slice as u64]));
    let count = rng.gen_range(1..=spec.max_blobs);
    let mut blobs = Vec::with_capacity(count);
    for k in 0..count {
        let r = (uniform(&mut rng, spec.blob_radius) * e).max(0.75);
        let limit = 1.0 - r / a.min(b);
        // Integer centers keep at least one pixel inside every blob.
        let (by, bx) = loop {
            let y = (cy + rng.gen_range(-1.0..1.0) * b).round();
            let x = (cx + rng.gen_range(-1.0..1.0) * a).round();
            if rho(y, x) <= limit && y >= 0.0 && x >= 0.0 && y < e && x < e {
                break (y, x);
            }
        };
        let peak = uniform(&mut rng, spec.blob_intensity);
        blobs.push((by, bx, r, peak, BLOB_LABELS[k % BLOB_LABELS.len()]));
    }

    let noise = Normal::new(0.0f32, spec.noise.max(f32::MIN_POSITIVE)).expect("valid noise");
    let mut image = Grid::filled(n, n, 0.0f32);
    let mut labels = Grid::filled(n, n, 0u8);
    let mut brain = Grid::filled(n, n, 0u8);
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f32, x as f32);
            if rho(fy, fx) > 1.0 {
                continue;
            }
            brain.set(y, x, 1);
            let mut v = base + if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            for &(by, bx, r, peak, label) in &blobs {
                let d2 = ((fy - by).powi(2) + (fx - bx).powi(2)) / (r * r);
                if d2 < 1.0 {
                    v += peak * (1.0 - d2).powi(2);
                    labels.set(y, x, label);
                }
            }
            image.set(y, x, v.max(1e-3));
        }
    }
    Ok(PhantomSlice {
        image,
        labels,
        brain,
        blob_count: count,
    })
}

pub fn phantom_case_id(case: usize) -> String {
    format!("phantom_{case:03}")
}

/// Writes `case_count x slices_per_case` slices as DSEG files under `dir`
/// together with `dir/manifest.json`.
pub fn generate_phantom_dataset(
    spec: &PhantomSpec,
    case_count: usize,
    slices_per_case: usize,
    dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if case_count == 0 || slices_per_case == 0 {
        return Err(Error::InvalidArgument("case and slice counts must be at least 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
    let mut cases = Vec::with_capacity(case_count);
    for case in 0..case_count {
        let case_id = phantom_case_id(case);
        let case_dir = dir.join(&case_id);
        std::fs::create_dir_all(&case_dir).map_err(|e| Error::from(e).at_path(&case_dir))?;
        let mut entry = CaseEntry {
            case_id: case_id.clone(),
            images: Vec::new(),
            masks: Vec::new(),
        };
        for slice in 0..slices_per_case {
            let s = phantom_slice(spec, case, slice)?;
            let img = format!("{case_id}/image_{slice:03}.dseg");
            let mask = format!("{case_id}/mask_{slice:03}.dseg");
            save_image(&dir.join(&img), &s.image)?;
            save_mask(&dir.join(&mask), &s.labels)?;
            entry.images.push(img);
            entry.masks.push(mask);
        }
        cases.push(entry);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        cases,
        extent: Some([spec.extent, spec.extent]),
        note: format!("synthetic phantom, seed {}", spec.seed),
    };
    write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// In-memory equivalent of generating a phantom dataset and loading it.
pub fn phantom_records(
    spec: &PhantomSpec,
    case_count: usize,
    slices_per_case: usize,
    extent: (usize, usize),
) -> Result<Vec<SliceRecord>> {
    let mut out = Vec::with_capacity(case_count * slices_per_case);
    for case in 0..case_count {
        let id = phantom_case_id(case);
        for slice in 0..slices_per_case {
            let s = phantom_slice(spec, case, slice)?;
            if let Some(rec) = prepare_slice(&id, slice, &s.image, &s.labels, extent)? {
                out.push(rec);
            }
        }
    }
    Ok(out)
}
