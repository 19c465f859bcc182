//! Overlap and boundary metrics for binary masks, and per-case reports.

mod distance;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use distance::{hausdorff, hausdorff_percentile, squared_distance_transform, PointSet};

use crate::error::{Error, Result};
use crate::grid::{check_same_extent, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Smoothing term of the Dice score.
    pub epsilon: f64,
    /// Hausdorff percentile; 100 is the plain maximum.
    pub hd_percentile: f64,
    /// Physical size of one pixel; Hausdorff distances are multiplied by it.
    pub spacing: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            epsilon: 1.0,
            hd_percentile: 100.0,
            spacing: 1.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be positive and finite"));
        }
        if !(self.hd_percentile > 0.0 && self.hd_percentile <= 100.0) {
            return Err(Error::config("hd_percentile", "must lie in (0, 100]"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::config("spacing", "must be positive and finite"));
        }
        Ok(())
    }
}

fn check_binary(mask: &Mask) -> Result<()> {
    match mask.data().iter().find(|&&v| v > 1) {
        Some(&v) => Err(Error::NonBinaryMask(v)),
        None => Ok(()),
    }
}

/// `(2 |P ∩ T| + ε) / (|P| + |T| + ε)`.
pub fn dice(pred: &Mask, truth: &Mask, config: &MetricConfig) -> Result<f64> {
    check_same_extent("dice", pred, truth)?;
    check_binary(pred)?;
    check_binary(truth)?;
    let (mut inter, mut sum) = (0u64, 0u64);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        inter += (p & t) as u64;
        sum += (p + t) as u64;
    }
    Ok((2.0 * inter as f64 + config.epsilon) / (sum as f64 + config.epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// False when the truth has no foreground, so sensitivity is a
    /// convention rather than a measurement.
    pub fn has_positives(&self) -> bool {
        self.tp + self.fn_ > 0
    }
}

pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    check_same_extent("confusion", pred, truth)?;
    check_binary(pred)?;
    check_binary(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `TP / (TP + FN)`; 1.0 when the truth has no foreground.
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    if c.has_positives() {
        c.tp as f64 / (c.tp + c.fn_) as f64
    } else {
        1.0
    }
}

/// `TN / (TN + FP)`; 1.0 when the truth is all foreground.
pub fn specificity(c: &ConfusionCounts) -> f64 {
    if c.tn + c.fp > 0 {
        c.tn as f64 / (c.tn + c.fp) as f64
    } else {
        1.0
    }
}

/// Hausdorff distance between two masks scaled by the pixel spacing, or
/// `None` when either mask is empty.
pub fn mask_hausdorff(pred: &Mask, truth: &Mask, config: &MetricConfig) -> Result<Option<f64>> {
    check_same_extent("hausdorff", pred, truth)?;
    let (p, t) = (PointSet::from_mask(pred), PointSet::from_mask(truth));
    if p.is_empty() || t.is_empty() {
        return Ok(None);
    }
    Ok(Some(hausdorff_percentile(&p, &t, config.hd_percentile)? * config.spacing))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dsc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub hd: Option<f64>,
    /// Sensitivity was set by the empty-truth convention.
    pub sensitivity_undefined: bool,
}

pub fn case_metrics(case_id: &str, pred: &Mask, truth: &Mask, config: &MetricConfig) -> Result<CaseMetrics> {
    let counts = confusion(pred, truth)?;
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dsc: dice(pred, truth, config)?,
        sensitivity: sensitivity(&counts),
        specificity: specificity(&counts),
        hd: mask_hausdorff(pred, truth, config)?,
        sensitivity_undefined: !counts.has_positives(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricMeans {
    pub dsc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub hd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Sorted by case id.
    pub cases: Vec<CaseMetrics>,
    /// Cases that could not be evaluated; listed in the CSV, excluded from
    /// every mean.
    pub missing: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn new(mut cases: Vec<CaseMetrics>, mut missing: Vec<String>) -> Self {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        missing.sort();
        MetricReport { cases, missing }
    }

    pub fn means(&self) -> MetricMeans {
        MetricMeans {
            dsc: mean(self.cases.iter().map(|c| c.dsc)),
            sensitivity: mean(self.cases.iter().map(|c| c.sensitivity)),
            specificity: mean(self.cases.iter().map(|c| c.specificity)),
            hd: mean(self.cases.iter().filter_map(|c| c.hd)),
        }
    }

    /// `case_id,dsc,sensitivity,specificity,hd` rows, missing values as
    /// `NA`, then a `MEAN` row.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("case_id,dsc,sensitivity,specificity,hd\n");
        let mut rows: Vec<(&str, [Option<f64>; 4])> = self
            .cases
            .iter()
            .map(|c| (c.case_id.as_str(), [Some(c.dsc), Some(c.sensitivity), Some(c.specificity), c.hd]))
            .chain(self.missing.iter().map(|id| (id.as_str(), [None; 4])))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let m = self.means();
        rows.push(("MEAN", [m.dsc, m.sensitivity, m.specificity, m.hd]));
        for (id, vals) in rows {
            let _ = writeln!(out, "{id},{},{},{},{}", cell(vals[0]), cell(vals[1]), cell(vals[2]), cell(vals[3]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::from(e).at_path(path))
    }
}

/// Metrics for matched `(case_id, mask)` lists. Both lists must name the
/// same cases; order does not matter.
pub fn evaluate_cases(
    predictions: &[(String, Mask)],
    truths: &[(String, Mask)],
    config: &MetricConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth cases",
            predictions.len(),
            truths.len()
        )));
    }
    let mut preds: Vec<&(String, Mask)> = predictions.iter().collect();
    let mut gts: Vec<&(String, Mask)> = truths.iter().collect();
    preds.sort_by(|a, b| a.0.cmp(&b.0));
    gts.sort_by(|a, b| a.0.cmp(&b.0));
    for (p, t) in preds.iter().zip(&gts) {
        if p.0 != t.0 {
            return Err(Error::InvalidArgument(format!("case `{}` has no counterpart `{}`", p.0, t.0)));
        }
    }
    let cases = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, t)| case_metrics(&p.0, &p.1, &t.1, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(cases, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut m = Mask::filled(h, w, 0);
        for &(r, c) in on {
            m.set(r, c, 1);
        }
        m
    }

    #[test]
    fn dice_examples() {
        let cfg = MetricConfig::default();
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(dice(&a, &a, &cfg).unwrap(), 1.0);
        let empty = mask(4, 4, &[]);
        assert_eq!(dice(&empty, &empty, &cfg).unwrap(), 1.0);
        let b = mask(4, 4, &[(0, 0), (0, 1), (2, 2), (3, 3)]);
        assert_eq!(dice(&a, &b, &cfg).unwrap(), 5.0 / 9.0);
        assert!(dice(&a, &mask(4, 5, &[]), &cfg).is_err());
    }

    #[test]
    fn sensitivity_example() {
        let c = ConfusionCounts {
            tp: 3,
            fp: 0,
            tn: 5,
            fn_: 1,
        };
        assert_eq!(sensitivity(&c), 0.75);
        assert_eq!(specificity(&c), 1.0);
    }

    #[test]
    fn empty_class_convention() {
        let empty = mask(3, 3, &[]);
        let c = confusion(&empty, &empty).unwrap();
        assert_eq!(c.total(), 9);
        assert!(!c.has_positives());
        assert_eq!(sensitivity(&c), 1.0);
        assert_eq!(specificity(&c), 1.0);
        let m = case_metrics("x", &empty, &empty, &MetricConfig::default()).unwrap();
        assert!(m.sensitivity_undefined);
        assert_eq!(m.hd, None);
    }

    #[test]
    fn non_binary_masks_are_rejected() {
        let mut bad = mask(2, 2, &[]);
        bad.set(0, 0, 2);
        assert!(matches!(confusion(&bad, &mask(2, 2, &[])), Err(Error::NonBinaryMask(2))));
    }

    #[test]
    fn spacing_scales_hausdorff() {
        let a = mask(5, 5, &[(0, 0)]);
        let b = mask(5, 5, &[(3, 4)]);
        let cfg = MetricConfig {
            spacing: 0.5,
            ..MetricConfig::default()
        };
        assert_eq!(mask_hausdorff(&a, &b, &cfg).unwrap(), Some(2.5));
    }

    #[test]
    fn report_means_and_csv() {
        let cfg = MetricConfig::default();
        let a = mask(2, 2, &[(0, 0)]);
        let report = evaluate_cases(&[("c1".into(), a.clone())], &[("c1".into(), a)], &cfg).unwrap();
        assert_eq!(report.to_csv(), "case_id,dsc,sensitivity,specificity,hd\nc1,1,1,1,0\nMEAN,1,1,1,0\n");

        let rows = vec![
            CaseMetrics {
                case_id: "b".into(),
                dsc: 0.6,
                sensitivity: 1.0,
                specificity: 1.0,
                hd: None,
                sensitivity_undefined: false,
            },
            CaseMetrics {
                case_id: "a".into(),
                dsc: 0.4,
                sensitivity: 0.5,
                specificity: 1.0,
                hd: Some(3.0),
                sensitivity_undefined: false,
            },
        ];
        let r = MetricReport::new(rows, vec!["c".into()]);
        assert_eq!(r.means().dsc, Some(0.5));
        assert_eq!(r.means().hd, Some(3.0));
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[1], "a,0.4,0.5,1,3");
        assert_eq!(lines[2], "b,0.6,1,1,NA");
        assert_eq!(lines[3], "c,NA,NA,NA,NA");
        assert_eq!(lines[4], "MEAN,0.5,0.75,1,3");
    }

    #[test]
    fn mismatched_cases_are_rejected() {
        let cfg = MetricConfig::default();
        let a = mask(2, 2, &[]);
        assert!(evaluate_cases(&[("a".into(), a.clone())], &[], &cfg).is_err());
        assert!(evaluate_cases(&[("a".into(), a.clone())], &[("b".into(), a)], &cfg).is_err());
    }
}
