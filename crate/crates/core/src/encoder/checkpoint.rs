//! Binary checkpoints: `HIERNOTE` magic, a little-endian `u32` format
//! version, a `u64` header length, a JSON header (model kind, config, trained
//! flag, tensor table) and the parameter values as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, TensorInfo};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HIERNOTE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub trained: bool,
    pub tensors: Vec<TensorInfo>,
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, params: &ParamSet) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamSet)> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let total: usize = header.tensors.iter().map(TensorInfo::numel).sum();
    let mut offset = 0;
    for t in &header.tensors {
        if t.offset != offset {
            return Err(Error::Checkpoint(format!("tensor `{}` is not contiguous", t.name)));
        }
        offset += t.numel();
    }
    let mut values = Vec::with_capacity(total);
    let mut buf = [0u8; 8];
    for _ in 0..total {
        r.read_exact(&mut buf).map_err(io)?;
        values.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((header.clone(), ParamSet::from_parts(values, header.tensors)))
}

pub fn save_checkpoint(path: impl AsRef<Path>, header: &CheckpointHeader, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), header, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamSet)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
