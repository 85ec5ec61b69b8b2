//! Binary tensor archive.
//!
//! Layout, all integers little-endian: magic `SKEX`, `u32` version, `u32`
//! entry count, then per entry a `u32` name length, the UTF-8 name, a `u32`
//! rank, `u64` dimensions and the `f64` data in row-major order.

use std::io::{Read, Write};

use crate::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"SKEX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("malformed entry: {0}")]
    Malformed(String),
    #[error("parameter {0} missing from archive")]
    Missing(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: [usize; 2], found: [usize; 2] },
}

pub fn write_tensors<'a, W: Write>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), CheckpointError> {
    let entries: Vec<_> = entries.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(entries.len()).expect("entry count fits u32").to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&u32::try_from(name.len()).expect("name fits u32").to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(CheckpointError::Malformed(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let rank = read_u32(&mut r)?;
        let dims: Vec<u64> = (0..rank).map(|_| read_u64(&mut r)).collect::<Result<_, _>>()?;
        let (rows, cols) = match dims[..] {
            [] => (1, 1),
            [n] => (1, n as usize),
            [a, b] => (a as usize, b as usize),
            _ => return Err(CheckpointError::Malformed(format!("{name}: rank {rank}"))),
        };
        let n = rows.checked_mul(cols).filter(|&n| n <= 1 << 28).ok_or_else(|| {
            CheckpointError::Malformed(format!("{name}: size {rows}x{cols}"))
        })?;
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    Ok(out)
}

impl ParamStore {
    pub fn save<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        write_tensors(w, self.iter())
    }

    /// Overwrites every parameter from `entries`, matched by name. Extra
    /// entries are ignored.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<(), CheckpointError> {
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.name(id).to_string();
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let expected = self.get(id).shape();
            if t.shape() != expected {
                return Err(CheckpointError::Shape { name, expected, found: t.shape() });
            }
            *self.get_mut(id) = t.clone();
        }
        Ok(())
    }
}
