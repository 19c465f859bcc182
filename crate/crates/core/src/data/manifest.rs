use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dseg::{load_image, load_mask};
use super::preprocess::{prepare_slice, SliceRecord};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    /// Slice files, relative to the manifest's directory unless absolute.
    pub images: Vec<String>,
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub cases: Vec<CaseEntry>,
    /// `[height, width]` of the stored slices, informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported manifest version {}, expected {MANIFEST_VERSION}", self.version),
            ));
        }
        let mut seen = HashSet::new();
        for (i, case) in self.cases.iter().enumerate() {
            if case.case_id.is_empty() {
                return Err(Error::config(format!("cases[{i}].case_id"), "must not be empty"));
            }
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::config(
                    format!("cases[{i}].case_id"),
                    format!("duplicate case id `{}`", case.case_id),
                ));
            }
            if case.images.len() != case.masks.len() {
                return Err(Error::config(
                    format!("cases[{i}]"),
                    format!("{} images but {} masks", case.images.len(), case.masks.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.case_id.clone()).collect()
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_str(text)?;
    m.validate()?;
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
    parse_manifest(&text).map_err(|e| e.at_path(path))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::from(e).at_path(path))
}

pub fn resolve(base: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads every slice listed in the manifest through [`prepare_slice`].
/// Empty slices are dropped; the rest come back at `extent`.
pub fn load_dataset(path: &Path, extent: (usize, usize)) -> Result<Vec<SliceRecord>> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for case in &manifest.cases {
        for (i, (img, mask)) in case.images.iter().zip(&case.masks).enumerate() {
            let img_path = resolve(base, img);
            let mask_path = resolve(base, mask);
            let image = load_image(&img_path)?;
            let mask = load_mask(&mask_path)?;
            if let Some(rec) = prepare_slice(&case.case_id, i, &image, &mask, extent).map_err(|e| e.at_path(&img_path))? {
                records.push(rec);
            }
        }
    }
    Ok(records)
}
