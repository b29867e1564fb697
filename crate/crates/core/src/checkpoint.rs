//! Binary container for named real arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "DRLCKPT1"
//! count   u32
//! repeated `count` times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims u64 * ndim
//!   values   f64 * prod(dims), row-major
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use crate::numcore::Matrix;

const MAGIC: &[u8; 8] = b"DRLCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn write_arrays<W: Write>(mut w: W, arrays: &[(String, Matrix)]) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, m) in arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads every entry. Arrays of rank 1 load as a single row; rank above 2 is
/// rejected.
pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<(String, Matrix)>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)?;
        let dims: Vec<usize> = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<io::Result<_>>()?;
        let shape = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(CheckpointError::Malformed(format!("{name}: unsupported rank {ndim}"))),
        };
        let mut values = Vec::with_capacity(shape.0 * shape.1);
        for _ in 0..shape.0 * shape.1 {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        out.push((name, Matrix::from_shape_vec(shape, values).unwrap()));
    }
    Ok(out)
}

pub fn save(path: &Path, arrays: &[(String, Matrix)]) -> Result<(), CheckpointError> {
    let f = io::BufWriter::new(std::fs::File::create(path)?);
    write_arrays(f, arrays)
}

pub fn load(path: &Path) -> Result<Vec<(String, Matrix)>, CheckpointError> {
    read_arrays(io::BufReader::new(std::fs::File::open(path)?))
}
