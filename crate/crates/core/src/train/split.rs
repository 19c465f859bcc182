use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Validation share: 66 of 336 cases.
pub const VALIDATION_NUMERATOR: usize = 66;
pub const VALIDATION_DENOMINATOR: usize = 336;

/// Validation size for `n` cases, `round(n * 66 / 336)` kept within `1..n`.
pub fn validation_size(n: usize) -> usize {
    let v = (2 * n * VALIDATION_NUMERATOR + VALIDATION_DENOMINATOR) / (2 * VALIDATION_DENOMINATOR);
    v.clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded shuffle, then fold 0 validates on the first block and fold 1 on
/// the next block, which lies inside fold 0's training pool. Both folds
/// train on everything else.
pub fn crossval_split(case_ids: &[String], fold: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if case_ids.len() < 2 {
        return Err(Error::InvalidArgument(format!("cross-validation needs at least 2 cases, got {}", case_ids.len())));
    }
    if fold > 1 {
        return Err(Error::config("fold", format!("must be 0 or 1, got {fold}")));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = case_ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate case id `{dup}`")));
    }
    let mut order = case_ids.to_vec();
    order.shuffle(&mut RngStream::new(seed));
    let n_val = validation_size(order.len());
    let start = fold * n_val;
    let val = order[start..start + n_val].to_vec();
    let train = order[..start].iter().chain(&order[start + n_val..]).cloned().collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case{i}")).collect()
    }

    #[test]
    fn sizes() {
        assert_eq!(validation_size(336), 66);
        assert_eq!(validation_size(10), 2);
        assert_eq!(validation_size(2), 1);
        let (train, val) = crossval_split(&ids(336), 0, 7).unwrap();
        assert_eq!((train.len(), val.len()), (270, 66));
        let (train, val) = crossval_split(&ids(10), 1, 7).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
    }

    #[test]
    fn too_few_cases() {
        assert!(crossval_split(&ids(1), 0, 0).is_err());
        assert!(crossval_split(&ids(5), 2, 0).is_err());
        assert!(crossval_split(&["a".to_string(), "a".to_string()], 0, 0).is_err());
    }
}
