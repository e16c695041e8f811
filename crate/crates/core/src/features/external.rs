//! Binary exchange format for precomputed feature stacks.
//!
//! Layout: the 8 ASCII bytes `C2FFEAT1`, then `C`, `Hf`, `Wf` as u32
//! little-endian, then `C·Hf·Wf` f32 little-endian values, channel-major.

use std::path::Path;

use super::FeatureStack;
use crate::error::{Error, FeatureFileError, Result};

const MAGIC: &[u8; 8] = b"C2FFEAT1";
const HEADER_LEN: usize = 8 + 3 * 4;

pub fn encode_features(stack: &FeatureStack) -> Result<Vec<u8>> {
    let (c, h, w) = stack.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * stack.data().len());
    out.extend_from_slice(MAGIC);
    for d in [c, h, w] {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (i, &v) in stack.data().iter().enumerate() {
        let v = v as f32;
        if !v.is_finite() {
            return Err(FeatureFileError::NonFinite { index: i }.into());
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureStack, FeatureFileError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FeatureFileError::BadMagic {
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    let mut dims = [0usize; 3];
    for (k, field) in ["C", "Hf", "Wf"].into_iter().enumerate() {
        let off = MAGIC.len() + 4 * k;
        let raw: [u8; 4] = bytes
            .get(off..off + 4)
            .and_then(|s| s.try_into().ok())
            .ok_or(FeatureFileError::TruncatedHeader { field })?;
        dims[k] = u32::from_le_bytes(raw) as usize;
        if dims[k] == 0 {
            return Err(FeatureFileError::ZeroDimension { field });
        }
    }
    let [c, h, w] = dims;
    let expected = c * h * w;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() / 4;
    if found < expected {
        return Err(FeatureFileError::TruncatedPayload { expected, found });
    }
    if payload.len() > 4 * expected {
        return Err(FeatureFileError::TrailingBytes {
            extra: payload.len() - 4 * expected,
        });
    }
    let mut data = Vec::with_capacity(expected);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(FeatureFileError::NonFinite { index });
        }
        data.push(v as f64);
    }
    Ok(FeatureStack {
        channels: c,
        height: h,
        width: w,
        cell_size: 1,
        data,
    })
}

pub fn save_external_features(path: &Path, stack: &FeatureStack) -> Result<()> {
    let bytes = encode_features(stack)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a stack written in the exchange format. The returned stack has
/// `cell_size` 1; use [`FeatureStack::with_cell_size`] to attach the
/// exporter's stride.
pub fn load_external_features(path: &Path) -> Result<FeatureStack> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_features(&bytes)?)
}
