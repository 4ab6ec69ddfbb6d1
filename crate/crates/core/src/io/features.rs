//! Feature matrices on disk: `"FTV1"`, `u32` row count K, `u32` dimension D,
//! then K·D little-endian `f32` values row-major. The file size must be
//! exactly `12 + 4·K·D` bytes.

use std::path::Path;

use super::atomic::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::metrics::FeatureSet;

pub const FEATURE_MAGIC: &[u8; 4] = b"FTV1";

pub fn encode_features(f: &FeatureSet) -> Result<Vec<u8>> {
    let rows = u32::try_from(f.rows()).map_err(|_| Error::Range("too many feature rows".into()))?;
    let dim = u32::try_from(f.dim()).map_err(|_| Error::Range("feature dimension too large".into()))?;
    let mut out = Vec::with_capacity(12 + 4 * f.rows() * f.dim());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in f.to_row_major() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < 12 {
        return Err(Error::parse(bytes.len(), "feature file shorter than its 12-byte header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::parse(0, "bad magic, expected FTV1"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::parse(4, "row count times dimension overflows"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected),
            format!("{rows}x{dim} features need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (i, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::parse(12 + 4 * i, "non-finite feature value"));
        }
        data.push(v as f64);
    }
    FeatureSet::from_row_major(rows, dim, &data)
}

pub fn save_features(f: &FeatureSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_features(f)?)
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    decode_features(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_size() {
        let f = FeatureSet::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 8.0]]).unwrap();
        let b = encode_features(&f).unwrap();
        assert_eq!(b.len(), 12 + 4 * 6);
        assert_eq!(&b[..12], &[b'F', b'T', b'V', b'1', 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(decode_features(&b).unwrap(), f);
    }

    #[test]
    fn size_mismatch_rejected() {
        let f = FeatureSet::from_rows(&[vec![1.0]]).unwrap();
        let mut b = encode_features(&f).unwrap();
        b.push(0);
        assert!(decode_features(&b).is_err());
        assert!(decode_features(&b[..15]).is_err());
        assert!(decode_features(b"FTV").is_err());
    }
}
