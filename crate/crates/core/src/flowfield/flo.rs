//! Middlebury `.flo`: little-endian `f32` magic 202021.25, `i32` width,
//! `i32` height, then `height * width` interleaved `f32` pairs, row-major.

use std::fs;
use std::path::Path;

use super::{FlowError, FlowField, MAX_DIMENSION};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

pub fn encode_flo(field: &FlowField) -> Result<Vec<u8>, FlowError> {
    field.check_finite()?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, FlowError> {
    if bytes.len() < HEADER_LEN {
        return Err(FlowError::TruncatedFile { expected: HEADER_LEN, found: bytes.len() });
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(FlowError::BadMagic(magic));
    }
    let width = i32::from_le_bytes(word(4)) as i64;
    let height = i32::from_le_bytes(word(8)) as i64;
    let max = MAX_DIMENSION as i64;
    if width <= 0 || height <= 0 || width > max || height > max {
        return Err(FlowError::DimensionOverflow { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let expected = HEADER_LEN + 8 * w * h;
    if bytes.len() < expected {
        return Err(FlowError::TruncatedFile { expected, found: bytes.len() });
    }
    let data = (0..w * h)
        .map(|i| {
            let o = HEADER_LEN + 8 * i;
            [f32::from_le_bytes(word(o)), f32::from_le_bytes(word(o + 4))]
        })
        .collect();
    let field = FlowField::new(w, h, data)?;
    field.check_finite()?;
    Ok(field)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField, FlowError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FlowError::IoFailure { path: path.into(), source })?;
    decode_flo(&bytes)
}

/// Rejects non-finite fields before touching the filesystem.
pub fn write_flo(field: &FlowField, path: impl AsRef<Path>) -> Result<(), FlowError> {
    let path = path.as_ref();
    let bytes = encode_flo(field)?;
    fs::write(path, bytes).map_err(|source| FlowError::IoFailure { path: path.into(), source })
}
