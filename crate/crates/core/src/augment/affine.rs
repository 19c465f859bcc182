use crate::error::{Error, Result};
use crate::grid::{check_same_extent, Grid, Image, Mask};

/// Row-major 2x3 matrix acting on `(x, y) = (col, row)` coordinates:
/// `x' = m[0][0] x + m[0][1] y + m[0][2]`, `y' = m[1][0] x + m[1][1] y + m[1][2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Default for Affine {
    fn default() -> Self {
        Self::identity()
    }
}

impl Affine {
    pub const fn identity() -> Self {
        Affine {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Affine {
            m: [[sx, 0.0, 0.0], [0.0, sy, 0.0]],
        }
    }

    /// Counter-clockwise on screen for positive angles (y points down).
    pub fn rotation_degrees(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Affine {
            m: [[c, s, 0.0], [-s, c, 0.0]],
        }
    }

    /// Horizontal shear: `x' = x + tan(angle) y`.
    pub fn shear_degrees(deg: f64) -> Self {
        Affine {
            m: [[1.0, deg.to_radians().tan(), 0.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Mirror of the column index on a grid `width` wide.
    pub fn flip_horizontal(width: usize) -> Self {
        Affine {
            m: [[-1.0, 0.0, (width - 1) as f64], [0.0, 1.0, 0.0]],
        }
    }

    pub fn flip_vertical(height: usize) -> Self {
        Affine {
            m: [[1.0, 0.0, 0.0], [0.0, -1.0, (height - 1) as f64]],
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Affine) -> Affine {
        let (a, b) = (&next.m, &self.m);
        let mut m = [[0.0; 3]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            row[0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            row[1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            row[2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        Affine { m }
    }

    /// The same transform with the origin moved to the center of a
    /// `height x width` grid.
    pub fn about_center(&self, height: usize, width: usize) -> Affine {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        Affine::translation(-cx, -cy).then(self).then(&Affine::translation(cx, cy))
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Result<Affine> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::InvalidArgument(format!("affine matrix is singular (det {det:e})")));
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Affine {
            m: [[ia, ib, -(ia * tx + ib * ty)], [ic, id, -(ic * tx + id * ty)]],
        })
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    pub fn is_identity(&self) -> bool {
        *self == Affine::identity()
    }
}

/// Rounds coordinates that are integers up to floating-point noise, so
/// quarter turns and flips sample exactly on the grid.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear sample with zero outside the grid.
pub(crate) fn sample_bilinear(image: &Image, x: f64, y: f64) -> f32 {
    let (x, y) = (snap(x), snap(y));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let v = |r: isize, c: isize| image.get(r, c).unwrap_or(0.0) as f64;
    let mut acc = v(yi, xi) * (1.0 - fx) * (1.0 - fy);
    if fx != 0.0 {
        acc += v(yi, xi + 1) * fx * (1.0 - fy);
    }
    if fy != 0.0 {
        acc += v(yi + 1, xi) * (1.0 - fx) * fy;
        if fx != 0.0 {
            acc += v(yi + 1, xi + 1) * fx * fy;
        }
    }
    acc as f32
}

/// Nearest-neighbor sample with label 0 outside the grid.
pub(crate) fn sample_nearest(mask: &Mask, x: f64, y: f64) -> u8 {
    let (x, y) = (snap(x).round(), snap(y).round());
    if !(x.is_finite() && y.is_finite()) || x.abs() > isize::MAX as f64 / 2.0 || y.abs() > isize::MAX as f64 / 2.0 {
        return 0;
    }
    mask.get(y as isize, x as isize).unwrap_or(0)
}

/// Backward warp: output pixel `(row, col)` reads the input at `source(row, col)`.
pub(crate) fn warp(image: &Image, mask: &Mask, source: impl Fn(usize, usize) -> (f64, f64)) -> (Image, Mask) {
    let (h, w) = image.extent();
    let mut out_img = Grid::filled(h, w, 0.0f32);
    let mut out_mask = Grid::filled(h, w, 0u8);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = source(r, c);
            out_img.set(r, c, sample_bilinear(image, x, y));
            out_mask.set(r, c, sample_nearest(mask, x, y));
        }
    }
    (out_img, out_mask)
}

/// Moves content forward by `matrix`: the output at `p` is the input at
/// `matrix^-1 p`. Image bilinear, mask nearest neighbor, zero outside.
pub fn affine_transform(image: &Image, mask: &Mask, matrix: &Affine) -> Result<(Image, Mask)> {
    check_same_extent("affine_transform", image, mask)?;
    let inv = matrix.inverse()?;
    Ok(warp(image, mask, |r, c| inv.apply(c as f64, r as f64)))
}
