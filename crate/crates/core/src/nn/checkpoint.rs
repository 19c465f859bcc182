//! `DSEGMDL1` checkpoint format.
//!
//! ```text
//! magic        8 bytes  "DSEGMDL1"
//! config_len   u32 LE
//! config       config_len bytes of UTF-8 JSON (ModelConfig)
//! repeated, once per array in graph order:
//!   count      u32 LE
//!   values     count x f32 LE
//! ```
//!
//! Arrays are each node's trainables (conv weights then bias, batch-norm
//! gamma then beta) followed, for batch norms, by the running mean and
//! variance.

use std::path::Path;

use super::model::{assemble_uninitialized, Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSEGMDL1";

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config())?;
    let arrays = model.graph().state_arrays();
    let floats: usize = arrays.iter().map(|a| a.len()).sum();
    let mut out = Vec::with_capacity(16 + config.len() + 4 * (arrays.len() + floats));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len_u32(config.len())?.to_le_bytes());
    out.extend_from_slice(&config);
    for a in arrays {
        out.extend_from_slice(&len_u32(a.len())?.to_le_bytes());
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("array of {n} values is too large to store")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        found: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
    let mut model = assemble_uninitialized(&config)?;

    let graph = model.graph_mut();
    let expected_arrays = graph.state_arrays().len();
    for (i, dst) in graph.state_arrays_mut().into_iter().enumerate() {
        let count = r.u32()? as usize;
        if count != dst.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint array {i} of {expected_arrays} holds {count} values, the model needs {}",
                dst.len()
            )));
        }
        let raw = r.take(count.checked_mul(4).ok_or(Error::Truncated { needed: usize::MAX, available: 0 })?)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        if dst.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint array {i}")));
        }
    }
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(Error::TrailingBytes(rest));
    }
    for node in model.graph().nodes() {
        if let super::graph::Layer::BatchNorm(s) = &node.layer {
            if s.running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!("{}: negative running variance", node.name)));
            }
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).at_path(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_checkpoint(&bytes).map_err(|e| e.at_path(path))
}
