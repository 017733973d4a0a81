//! JSON-lines cache of concatenated representations, one patient per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ConcatRepresentation;
use crate::error::{Error, Result};

/// On-disk form of a [`ConcatRepresentation`]: one vector per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheRecord {
    pub patient_id: String,
    pub n: usize,
    pub vectors: Vec<Vec<f64>>,
    pub mask: Vec<u8>,
}

impl From<&ConcatRepresentation> for CacheRecord {
    fn from(rep: &ConcatRepresentation) -> Self {
        let n = rep.n();
        let width = if n == 0 { 0 } else { rep.vector.len() / n };
        CacheRecord {
            patient_id: rep.patient_id.clone(),
            n,
            vectors: rep.vector.chunks(width.max(1)).map(<[f64]>::to_vec).collect(),
            mask: rep.present_mask.clone(),
        }
    }
}

impl TryFrom<CacheRecord> for ConcatRepresentation {
    type Error = Error;

    fn try_from(rec: CacheRecord) -> Result<Self> {
        if rec.vectors.len() != rec.n || rec.mask.len() != rec.n {
            return Err(Error::InvalidCorpus(format!(
                "cache record `{}` declares {} slots but has {} vectors and {} flags",
                rec.patient_id,
                rec.n,
                rec.vectors.len(),
                rec.mask.len()
            )));
        }
        if rec.mask.iter().any(|&m| m > 1) {
            return Err(Error::InvalidCorpus(format!("cache record `{}` has a non-binary mask", rec.patient_id)));
        }
        let width = rec.vectors.first().map_or(0, Vec::len);
        if let Some(bad) = rec.vectors.iter().find(|v| v.len() != width) {
            return Err(Error::WidthMismatch {
                expected: width,
                got: bad.len(),
            });
        }
        Ok(ConcatRepresentation {
            patient_id: rec.patient_id,
            vector: rec.vectors.concat(),
            present_mask: rec.mask,
        })
    }
}

pub fn write_rep_cache(path: impl AsRef<Path>, reps: &[ConcatRepresentation]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rep in reps {
        serde_json::to_writer(&mut out, &CacheRecord::from(rep))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rep_cache(path: impl AsRef<Path>) -> Result<Vec<ConcatRepresentation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            ConcatRepresentation::try_from(rec)
        })
        .collect()
}
