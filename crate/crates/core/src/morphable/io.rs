//! Binary model format.
//!
//! ```text
//! "MLMM1"            5 bytes
//! N, Ks, Ke          u64 LE each
//! mean               3N f64 LE
//! P_s                3N×Ks f64 LE, column-major
//! P_e                3N×Ke f64 LE, column-major
//! nose_index         u64 LE (u64::MAX when absent)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use super::{MorphableError, MorphableModel};

pub const MODEL_MAGIC: &[u8; 5] = b"MLMM1";

/// Sanity cap on header counts so a corrupt header cannot trigger huge allocations.
const MAX_ENTRIES: u64 = 1 << 32;

pub fn write_model<W: Write>(model: &MorphableModel, mut w: W) -> Result<(), MorphableError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_u64::<LittleEndian>(model.vertex_count() as u64)?;
    w.write_u64::<LittleEndian>(model.shape_components() as u64)?;
    w.write_u64::<LittleEndian>(model.expression_components() as u64)?;
    let values = model
        .mean()
        .iter()
        .chain(model.shape_basis().iter())
        .chain(model.expr_basis().iter());
    for v in values {
        w.write_f64::<LittleEndian>(*v)?;
    }
    w.write_u64::<LittleEndian>(model.nose_index().map_or(u64::MAX, |i| i as u64))?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<MorphableModel, MorphableError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| MorphableError::Format("file too short for magic".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(MorphableError::Format("bad magic, expected MLMM1".into()));
    }
    let mut count = |what: &str| -> Result<u64, MorphableError> {
        r.read_u64::<LittleEndian>()
            .map_err(|_| MorphableError::Format(format!("truncated header at {what}")))
    };
    let (n, ks, ke) = (count("N")?, count("Ks")?, count("Ke")?);
    let rows = n.checked_mul(3).filter(|&x| x <= MAX_ENTRIES);
    let total = rows.and_then(|rows| rows.checked_mul(1 + ks + ke));
    let (Some(rows), Some(_)) = (rows, total.filter(|&t| t <= MAX_ENTRIES)) else {
        return Err(MorphableError::Format(format!(
            "implausible dimensions N={n} Ks={ks} Ke={ke}"
        )));
    };
    let rows = rows as usize;
    let mut read_vec = |len: usize, what: &str| -> Result<Vec<f64>, MorphableError> {
        let mut v = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut v)
            .map_err(|_| MorphableError::Format(format!("truncated {what}")))?;
        Ok(v)
    };
    let mean = DVector::from_vec(read_vec(rows, "mean")?);
    let shape = DMatrix::from_vec(
        rows,
        ks as usize,
        read_vec(rows * ks as usize, "shape basis")?,
    );
    let expr = DMatrix::from_vec(
        rows,
        ke as usize,
        read_vec(rows * ke as usize, "expression basis")?,
    );
    let nose = r
        .read_u64::<LittleEndian>()
        .map_err(|_| MorphableError::Format("truncated nose index".into()))?;
    let nose = (nose != u64::MAX).then_some(nose as usize);
    MorphableModel::new(mean, shape, expr, nose)
}

pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<(), MorphableError> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel, MorphableError> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::make_toy_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = make_toy_model(120, 3, 4, 8);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 5 + 24 + 8 * 360 * 8 + 8);
        assert_eq!(&buf[..5], b"MLMM1");
        assert_eq!(&buf[5..13], &120u64.to_le_bytes());
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let m = make_toy_model(60, 1, 1, 0);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert!(matches!(
            read_model(&buf[..buf.len() - 4]),
            Err(MorphableError::Format(_))
        ));
        buf[0] = b'X';
        assert!(matches!(
            read_model(buf.as_slice()),
            Err(MorphableError::Format(_))
        ));
    }
}
