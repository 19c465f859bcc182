//! DSEG raw slice files.
//!
//! Layout, all little-endian: `b"DSEG"`, `u16` version (1), `u8` dtype
//! (0 = f32, 1 = u8), `u32` height, `u32` width, then the row-major payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

pub const DSEG_MAGIC: &[u8; 4] = b"DSEG";
pub const DSEG_VERSION: u16 = 1;
pub const DSEG_HEADER_LEN: usize = 15;
/// Largest accepted height or width.
pub const MAX_EXTENT: u32 = 1 << 14;

const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

/// Decoded payload of a DSEG file.
#[derive(Debug, Clone, PartialEq)]
pub enum SliceData {
    F32(Image),
    U8(Mask),
}

impl SliceData {
    pub fn extent(&self) -> (usize, usize) {
        match self {
            SliceData::F32(g) => g.extent(),
            SliceData::U8(g) => g.extent(),
        }
    }

    pub fn into_image(self) -> Result<Image> {
        match self {
            SliceData::F32(g) => Ok(g),
            SliceData::U8(_) => Err(Error::InvalidArgument("expected a float32 image, found uint8".into())),
        }
    }

    pub fn into_mask(self) -> Result<Mask> {
        match self {
            SliceData::U8(g) => Ok(g),
            SliceData::F32(_) => Err(Error::InvalidArgument("expected a uint8 mask, found float32".into())),
        }
    }
}

fn header(dtype: u8, height: usize, width: usize, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(DSEG_HEADER_LEN + payload);
    out.extend_from_slice(DSEG_MAGIC);
    out.extend_from_slice(&DSEG_VERSION.to_le_bytes());
    out.push(dtype);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    let mut out = header(DTYPE_F32, image.height(), image.width(), 4 * image.len());
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = header(DTYPE_U8, mask.height(), mask.width(), mask.len());
    out.extend_from_slice(mask.data());
    out
}

pub fn encode_slice(data: &SliceData) -> Vec<u8> {
    match data {
        SliceData::F32(g) => encode_image(g),
        SliceData::U8(g) => encode_mask(g),
    }
}

fn need(bytes: &[u8], needed: usize) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(())
}

pub fn decode_slice(bytes: &[u8]) -> Result<SliceData> {
    need(bytes, DSEG_MAGIC.len())?;
    if &bytes[..4] != DSEG_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(DSEG_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    need(bytes, DSEG_HEADER_LEN)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DSEG_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[6];
    let elem = match dtype {
        DTYPE_F32 => 4,
        DTYPE_U8 => 1,
        other => return Err(Error::UnknownDtype(other)),
    };
    let height = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[11..15].try_into().unwrap());
    if height == 0 || width == 0 {
        return Err(Error::Geometry {
            op: "dseg",
            msg: format!("zero extent {height}x{width}"),
        });
    }
    if height > MAX_EXTENT || width > MAX_EXTENT {
        return Err(Error::ExtentOverflow {
            height: height.into(),
            width: width.into(),
        });
    }
    let (h, w) = (height as usize, width as usize);
    let payload = h * w * elem;
    need(bytes, DSEG_HEADER_LEN + payload)?;
    let extra = bytes.len() - DSEG_HEADER_LEN - payload;
    if extra > 0 {
        return Err(Error::TrailingBytes(extra));
    }
    let body = &bytes[DSEG_HEADER_LEN..];
    Ok(match dtype {
        DTYPE_F32 => {
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            SliceData::F32(Grid::from_vec(h, w, data)?)
        }
        _ => SliceData::U8(Grid::from_vec(h, w, body.to_vec())?),
    })
}

pub fn save_slice(path: &Path, data: &SliceData) -> Result<()> {
    std::fs::write(path, encode_slice(data)).map_err(|e| Error::from(e).at_path(path))
}

pub fn load_slice(path: &Path) -> Result<SliceData> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_slice(&bytes).map_err(|e| e.at_path(path))
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_image(image)).map_err(|e| Error::from(e).at_path(path))
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    std::fs::write(path, encode_mask(mask)).map_err(|e| Error::from(e).at_path(path))
}

pub fn load_image(path: &Path) -> Result<Image> {
    load_slice(path)?.into_image().map_err(|e| e.at_path(path))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    load_slice(path)?.into_mask().map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = encode_mask(&Grid::filled(2, 3, 7));
        assert_eq!(&bytes[..4], b"DSEG");
        assert_eq!(bytes[4..7], [1, 0, 1]);
        assert_eq!(bytes[7..11], [2, 0, 0, 0]);
        assert_eq!(bytes[11..15], [3, 0, 0, 0]);
        assert_eq!(bytes.len(), 15 + 6);
    }

    #[test]
    fn float_payload_is_little_endian() {
        let img = Grid::from_vec(1, 1, vec![1.0f32]).unwrap();
        assert_eq!(encode_image(&img)[15..], [0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn distinct_diagnostics() {
        let good = encode_mask(&Grid::filled(2, 2, 1));
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_slice(&bad_magic), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_slice(&good[..good.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_slice(&good[..10]), Err(Error::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_slice(&long), Err(Error::TrailingBytes(1))));
        let mut huge = good.clone();
        huge[7..11].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_slice(&huge), Err(Error::ExtentOverflow { .. })));
        let mut version = good.clone();
        version[4] = 2;
        assert!(matches!(decode_slice(&version), Err(Error::UnsupportedVersion(2))));
        let mut dtype = good;
        dtype[6] = 9;
        assert!(matches!(decode_slice(&dtype), Err(Error::UnknownDtype(9))));
    }
}
