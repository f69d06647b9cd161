//! Feature interchange files.
//!
//! ```text
//! "FVEC1"   5 bytes
//! D         u64 LE
//! values    D f64 LE
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EmbeddingError, FeatureVector};

pub const FVEC_MAGIC: &[u8; 5] = b"FVEC1";

pub fn encode_fvec(v: &FeatureVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 8 * v.dim());
    out.extend_from_slice(FVEC_MAGIC);
    out.extend_from_slice(&(v.dim() as u64).to_le_bytes());
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// `path` is only used in error messages.
pub fn decode_fvec(bytes: &[u8], path: &Path) -> Result<FeatureVector, EmbeddingError> {
    let bad = |message: String| EmbeddingError::Format {
        path: path.to_owned(),
        message,
    };
    if bytes.len() < 13 || &bytes[..5] != FVEC_MAGIC {
        return Err(bad("missing FVEC1 header".into()));
    }
    let d = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let body = &bytes[13..];
    if d.checked_mul(8) != Some(body.len() as u64) {
        return Err(bad(format!(
            "header declares {d} values but {} payload bytes follow",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureVector::new(values).map_err(|e| bad(e.to_string()))
}

pub fn write_fvec(v: &FeatureVector, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let path = path.as_ref();
    fs::write(path, encode_fvec(v)).map_err(|source| EmbeddingError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_fvec(path: impl AsRef<Path>) -> Result<FeatureVector, EmbeddingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_fvec(&bytes, path)
}

/// Lowercase hex SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_hash() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_corruption() {
        let v = FeatureVector::new(vec![1.5, -0.25, 1e-300]).unwrap();
        let bytes = encode_fvec(&v);
        assert_eq!(bytes.len(), 13 + 24);
        let p = Path::new("x.fvec");
        assert_eq!(decode_fvec(&bytes, p).unwrap(), v);
        assert!(matches!(
            decode_fvec(&bytes[..bytes.len() - 1], p),
            Err(EmbeddingError::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'G';
        assert!(decode_fvec(&bad, p).is_err());
    }
}
