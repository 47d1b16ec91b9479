//! Flat binary weight container.
//!
//! Layout (all integers little-endian):
//! `b"AEFG"`, `u32` version, `u32` entry count, then per entry a `u32` name
//! length, the UTF-8 name, a `u32` rank, `rank` x `u64` dims and the `f32` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AEFG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(&str, &Tensor<f32>)]) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * tensor.numel());
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| CheckpointError::Format(format!("truncated while reading {what}: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Format("missing magic bytes".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r, "entry count")?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let len = read_u32(&mut r, "name length")? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| CheckpointError::Format(format!("truncated name of entry {i}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Format(format!("entry {i} name is not UTF-8")))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| CheckpointError::Format(format!("truncated dims of {name}")))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|_| CheckpointError::Format(format!("truncated data of {name}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if out.iter().any(|(n, _): &(String, _)| *n == name) {
            return Err(CheckpointError::Format(format!("duplicate entry {name}")));
        }
        out.push((name, tensor));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Format("trailing bytes after last entry".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, entries: &[(&str, &Tensor<f32>)]) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), entries)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
