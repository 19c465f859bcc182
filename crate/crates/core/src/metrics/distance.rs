//! Exact Euclidean distance transform (Meijster, Roerdink and Hesselink)
//! in integer arithmetic, and the Hausdorff distance built on it.

use crate::error::{Error, Result};
use crate::grid::Mask;

/// Foreground pixel coordinates `(row, col)`, without duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSet {
    points: Vec<(i64, i64)>,
}

impl PointSet {
    pub fn new(mut points: Vec<(i64, i64)>) -> Result<Self> {
        points.sort_unstable();
        if let Some(w) = points.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("duplicate point {:?}", w[0])));
        }
        Ok(PointSet { points })
    }

    pub fn from_mask(mask: &Mask) -> Self {
        let mut points = Vec::new();
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.at(r, c) != 0 {
                    points.push((r as i64, c as i64));
                }
            }
        }
        PointSet { points }
    }

    pub fn points(&self) -> &[(i64, i64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Squared distance from every pixel to the nearest nonzero pixel of
/// `mask`, row-major. `None` when the mask has no foreground.
pub fn squared_distance_transform(mask: &Mask) -> Option<Vec<u64>> {
    let (h, w) = mask.extent();
    if mask.data().iter().all(|&v| v == 0) {
        return None;
    }
    // Larger than any in-grid distance along one axis.
    let inf = (h + w) as i64;

    // Phase 1: per column, distance to the nearest foreground row.
    let mut g = vec![0i64; h * w];
    for x in 0..w {
        g[x] = if mask.at(0, x) != 0 { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] = if mask.at(y, x) != 0 { 0 } else { (g[(y - 1) * w + x] + 1).min(inf) };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            let below = g[(y + 1) * w + x];
            if below < g[y * w + x] {
                g[y * w + x] = below + 1;
            }
        }
    }

    // Phase 2: per row, lower envelope of the parabolas (x - i)^2 + g(i)^2.
    let mut out = vec![0u64; h * w];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + row[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + row[u].pow(2) - row[i].pow(2)).div_euclid(2 * (uu - ii))
        };
        let mut q = 0usize;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while f(t[q], s[q]) > f(t[q], u) {
                if q == 0 {
                    break;
                }
                q -= 1;
            }
            if q == 0 && f(t[0], s[0]) > f(t[0], u) {
                s[0] = u;
            } else {
                let sv = 1 + sep(s[q], u);
                if sv < w as i64 {
                    q += 1;
                    s[q] = u;
                    t[q] = sv;
                }
            }
        }
        for x in (0..w).rev() {
            out[y * w + x] = f(x as i64, s[q]) as u64;
            if q > 0 && x as i64 == t[q] {
                q -= 1;
            }
        }
    }
    Some(out)
}

/// Squared distances from each point of `from` to the nearest point of
/// `to`, via one distance transform over the common bounding box.
fn directed_squared(from: &PointSet, to: &PointSet) -> Vec<u64> {
    let all = from.points.iter().chain(&to.points);
    let (r0, c0) = all.clone().fold((i64::MAX, i64::MAX), |(r, c), p| (r.min(p.0), c.min(p.1)));
    let (r1, c1) = all.fold((i64::MIN, i64::MIN), |(r, c), p| (r.max(p.0), c.max(p.1)));
    let (h, w) = ((r1 - r0 + 1) as usize, (c1 - c0 + 1) as usize);
    let mut grid = Mask::filled(h, w, 0);
    for &(r, c) in &to.points {
        grid.set((r - r0) as usize, (c - c0) as usize, 1);
    }
    let dt = squared_distance_transform(&grid).expect("target set is non-empty");
    from.points
        .iter()
        .map(|&(r, c)| dt[(r - r0) as usize * w + (c - c0) as usize])
        .collect()
}

/// Nearest-rank percentile of squared distances; `100` is the maximum.
fn percentile(mut values: Vec<u64>, pct: f64) -> u64 {
    values.sort_unstable();
    let rank = ((pct / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Symmetric Hausdorff distance in pixel units. With `pct = 100` this is the
/// exact `max(h(S, T), h(T, S))`; smaller values give the percentile
/// variant. One square root is taken at the very end.
pub fn hausdorff_percentile(a: &PointSet, b: &PointSet, pct: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {pct} outside (0, 100]")));
    }
    let ab = percentile(directed_squared(a, b), pct);
    let ba = percentile(directed_squared(b, a), pct);
    Ok((ab.max(ba) as f64).sqrt())
}

pub fn hausdorff(a: &PointSet, b: &PointSet) -> Result<f64> {
    hausdorff_percentile(a, b, 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: &[(i64, i64)]) -> PointSet {
        PointSet::new(points.to_vec()).unwrap()
    }

    #[test]
    fn three_four_five() {
        assert_eq!(hausdorff(&set(&[(0, 0)]), &set(&[(3, 4)])).unwrap(), 5.0);
    }

    #[test]
    fn asymmetric_directed_distances() {
        let s = set(&[(0, 0), (10, 0)]);
        let t = set(&[(0, 0)]);
        assert_eq!(directed_squared(&s, &t), vec![0, 100]);
        assert_eq!(directed_squared(&t, &s), vec![0]);
        assert_eq!(hausdorff(&s, &t).unwrap(), 10.0);
    }

    #[test]
    fn identical_sets_are_at_zero() {
        let s = set(&[(1, 2), (5, -3), (0, 7)]);
        assert_eq!(hausdorff(&s, &s.clone()).unwrap(), 0.0);
    }

    #[test]
    fn empty_sets_and_duplicates_are_rejected() {
        let s = set(&[(0, 0)]);
        assert!(matches!(hausdorff(&s, &set(&[])), Err(Error::EmptyPointSet)));
        assert!(PointSet::new(vec![(1, 1), (1, 1)]).is_err());
    }

    #[test]
    fn transform_of_single_point() {
        let mut m = Mask::filled(3, 4, 0);
        m.set(1, 1, 1);
        let dt = squared_distance_transform(&m).unwrap();
        assert_eq!(dt, vec![2, 1, 2, 5, 1, 0, 1, 4, 2, 1, 2, 5]);
        assert!(squared_distance_transform(&Mask::filled(2, 2, 0)).is_none());
    }

    #[test]
    fn percentile_drops_outliers() {
        let mut pts: Vec<(i64, i64)> = (0..20).map(|i| (0, i)).collect();
        let t = set(&pts);
        pts.push((30, 0));
        let s = set(&pts);
        assert_eq!(hausdorff(&s, &t).unwrap(), 30.0);
        assert_eq!(hausdorff_percentile(&s, &t, 95.0).unwrap(), 0.0);
    }
}
