use crate::error::{Error, Result};
use crate::grid::{check_same_extent, Grid, Image, Mask};

/// `(x - mean) / std` with the population standard deviation. A constant
/// slice has no spread to normalize and maps to zeros.
pub fn normalize_slice(raw: &Image) -> Image {
    let n = raw.len() as f64;
    let mean = raw.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = raw
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !std.is_finite() || std <= 0.0 {
        return raw.map(|_| 0.0);
    }
    raw.map(|v| ((v as f64 - mean) / std) as f32)
}

/// True when the raw slice holds no brain signal: its maximum is exactly 0.
pub fn is_empty_slice(raw: &Image) -> bool {
    raw.data().iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) == 0.0
}

/// Merges the tumor sub-region labels 1, 2 and 4 into one foreground class.
pub fn binarize_labels(mask: &Mask) -> Result<Mask> {
    if let Some(&bad) = mask.data().iter().find(|&&v| !matches!(v, 0 | 1 | 2 | 4)) {
        return Err(Error::UnknownLabel(bad));
    }
    Ok(mask.map(|v| u8::from(v != 0)))
}

/// Source coordinate of output index `i` when `n_in` samples are stretched
/// over `n_out`, with the first and last samples pinned to the corners.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 || n_in == 1 {
        return 0.0;
    }
    (i * (n_in - 1)) as f64 / (n_out - 1) as f64
}

pub fn resize_image(image: &Image, height: usize, width: usize) -> Image {
    if image.extent() == (height, width) {
        return image.clone();
    }
    let (h_in, w_in) = image.extent();
    Grid::from_fn(height, width, |r, c| {
        let y = source_coord(r, h_in, height);
        let x = source_coord(c, w_in, width);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h_in - 1), (x0 + 1).min(w_in - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let v = |yy: usize, xx: usize| image.at(yy, xx) as f64;
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

pub fn resize_mask(mask: &Mask, height: usize, width: usize) -> Mask {
    if mask.extent() == (height, width) {
        return mask.clone();
    }
    let (h_in, w_in) = mask.extent();
    Grid::from_fn(height, width, |r, c| {
        let y = source_coord(r, h_in, height).round() as usize;
        let x = source_coord(c, w_in, width).round() as usize;
        mask.at(y.min(h_in - 1), x.min(w_in - 1))
    })
}

/// Rescales an image bilinearly and its mask by nearest neighbor straight
/// to `height x width`, without preserving aspect.
pub fn resize_bilinear(image: &Image, mask: &Mask, height: usize, width: usize) -> Result<(Image, Mask)> {
    check_same_extent("resize", image, mask)?;
    if height == 0 || width == 0 {
        return Err(Error::Geometry {
            op: "resize",
            msg: format!("target extent {height}x{width} must be positive"),
        });
    }
    Ok((resize_image(image, height, width), resize_mask(mask, height, width)))
}

/// One slice ready for training: normalized image, binary mask, equal extents.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    case_id: String,
    slice_index: usize,
    image: Image,
    mask: Mask,
}

impl SliceRecord {
    pub fn new(case_id: impl Into<String>, slice_index: usize, image: Image, mask: Mask) -> Result<Self> {
        check_same_extent("slice_record", &image, &mask)?;
        if let Some(&bad) = mask.data().iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryMask(bad));
        }
        if !image.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("slice image".into()));
        }
        Ok(SliceRecord {
            case_id: case_id.into(),
            slice_index,
            image,
            mask,
        })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn slice_index(&self) -> usize {
        self.slice_index
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn extent(&self) -> (usize, usize) {
        self.image.extent()
    }
}

/// The fixed ingestion order: binarize, drop empty slices, normalize, resize.
/// Returns `None` for an empty slice.
pub fn prepare_slice(
    case_id: &str,
    slice_index: usize,
    raw_image: &Image,
    raw_mask: &Mask,
    extent: (usize, usize),
) -> Result<Option<SliceRecord>> {
    check_same_extent("prepare_slice", raw_image, raw_mask)?;
    let mask = binarize_labels(raw_mask)?;
    if is_empty_slice(raw_image) {
        return Ok(None);
    }
    let image = normalize_slice(raw_image);
    let (image, mask) = resize_bilinear(&image, &mask, extent.0, extent.1)?;
    SliceRecord::new(case_id, slice_index, image, mask).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_two_values() {
        let out = normalize_slice(&Grid::from_vec(1, 2, vec![0.0, 2.0]).unwrap());
        assert_eq!(out.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_slice_normalizes_to_zero() {
        let out = normalize_slice(&Grid::filled(3, 3, 5.5));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_slice_rule() {
        assert!(is_empty_slice(&Grid::filled(4, 4, 0.0)));
        let mut one = Grid::filled(4, 4, 0.0);
        one.set(2, 1, 1e-3);
        assert!(!is_empty_slice(&one));
    }

    #[test]
    fn binarize_mapping() {
        let m = Grid::from_vec(1, 4, vec![0, 1, 2, 4]).unwrap();
        assert_eq!(binarize_labels(&m).unwrap().data(), &[0, 1, 1, 1]);
        let bad = Grid::from_vec(1, 2, vec![0, 3]).unwrap();
        assert!(matches!(binarize_labels(&bad), Err(Error::UnknownLabel(3))));
    }

    #[test]
    fn checkerboard_corners_survive_upsampling() {
        let img = Grid::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mask = Grid::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        let (i, m) = resize_bilinear(&img, &mask, 4, 4).unwrap();
        for (r, c, v) in [(0, 0, 1.0), (0, 3, 0.0), (3, 0, 0.0), (3, 3, 1.0)] {
            assert_eq!(i.at(r, c), v);
            assert_eq!(m.at(r, c), v as u8);
        }
        // One third of the way along the top edge.
        assert!((i.at(0, 1) - 2.0 / 3.0).abs() < 1e-6);
        assert!(m.data().iter().all(|&v| v <= 1));
    }

    #[test]
    fn same_extent_resize_is_identity() {
        let img = Grid::from_fn(5, 7, |r, c| (r * 7 + c) as f32 * 0.37);
        let mask = Grid::from_fn(5, 7, |r, c| ((r + c) % 2) as u8);
        let (i, m) = resize_bilinear(&img, &mask, 5, 7).unwrap();
        assert_eq!(i, img);
        assert_eq!(m, mask);
    }

    #[test]
    fn record_rejects_non_binary_masks() {
        let img = Grid::filled(2, 2, 0.0);
        assert!(matches!(
            SliceRecord::new("a", 0, img.clone(), Grid::filled(2, 2, 2)),
            Err(Error::NonBinaryMask(2))
        ));
        assert!(SliceRecord::new("a", 0, img, Grid::filled(2, 3, 0)).is_err());
    }

    #[test]
    fn pipeline_binarizes_before_filtering() {
        // A bad label is reported even on an empty slice.
        let img = Grid::filled(2, 2, 0.0);
        let mask = Grid::from_vec(2, 2, vec![0, 0, 0, 3]).unwrap();
        assert!(prepare_slice("a", 0, &img, &mask, (2, 2)).is_err());
        let ok = Grid::from_vec(2, 2, vec![0, 4, 0, 0]).unwrap();
        assert!(prepare_slice("a", 0, &img, &ok, (2, 2)).unwrap().is_none());
    }

    #[test]
    fn pipeline_normalizes_before_resizing() {
        let img = Grid::from_vec(1, 2, vec![0.0, 2.0]).unwrap();
        let mask = Grid::from_vec(1, 2, vec![0, 0]).unwrap();
        let rec = prepare_slice("a", 0, &img, &mask, (1, 3)).unwrap().unwrap();
        // Normalized to [-1, 1] first, then interpolated.
        assert_eq!(rec.image().data(), &[-1.0, 0.0, 1.0]);
    }
}
