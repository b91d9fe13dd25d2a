//! Binary checkpoint format: fixed magic, format version, one JSON
//! metadata block, then name-sorted parameter records with
//! little-endian f64 payloads. Writing the same model twice produces
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MetricKind;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::training::TrainConfig;
use crate::transfer::{ParameterRegistry, Scope};

pub const MAGIC: &[u8; 8] = b"SEQTAGCP";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any length field; a corrupt file fails cleanly
/// instead of triggering a huge allocation.
const MAX_FIELD_LEN: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub labels: Vec<String>,
    pub metric: MetricKind,
    pub extra_dim: usize,
    /// Present only when the task owns a private word vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_vocab: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingMeta {
    pub direction: String,
    pub pairs: Vec<(String, String)>,
    pub file_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    /// "none", "T-A", "T-B", or "T-C".
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TaskMeta>,
    pub target: TaskMeta,
    pub char_vocab: Vec<String>,
    /// The word vocabulary both tasks share; absent when each task
    /// keeps its own (then see the tasks' `word_vocab`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_word_vocab: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingMeta>,
}

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub scope: Scope,
    pub tensor: Tensor,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub records: Vec<Record>,
}

impl Checkpoint {
    /// Snapshots every registered parameter, name-sorted.
    pub fn from_registry(meta: CheckpointMeta, registry: &ParameterRegistry) -> Checkpoint {
        let records = registry
            .iter()
            .map(|(name, entry)| Record {
                name: name.clone(),
                scope: entry.scope,
                tensor: entry.param.borrow().value.clone(),
            })
            .collect();
        Checkpoint {
            meta: meta.clone(),
            records,
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("metadata does not serialize: {e}")))?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            let name = r.name.as_bytes();
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[r.scope.to_byte()])?;
            let shape = r.tensor.shape();
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in r.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(
                "not a seqtag checkpoint (bad magic)".to_string(),
            ));
        }
        let mut version_bytes = [0u8; 4];
        r.read_exact(&mut version_bytes)?;
        let version = u32::from_le_bytes(version_bytes);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let meta_len = read_len(r, "metadata length")?;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::Checkpoint(format!("metadata does not parse: {e}")))?;

        let count = read_len(r, "record count")?;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_len(r, "record name length")?;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".to_string()))?;
            let mut scope_byte = [0u8; 1];
            r.read_exact(&mut scope_byte)?;
            let scope = Scope::from_byte(scope_byte[0])?;
            let ndim = read_len(r, "record rank")?;
            let mut shape = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = read_len(r, "record dimension")?;
                len = len.saturating_mul(d);
                shape.push(d);
            }
            if (len as u64) > MAX_FIELD_LEN {
                return Err(Error::Checkpoint(format!(
                    "record '{name}' claims an implausible element count"
                )));
            }
            let mut data = vec![0.0f64; len];
            let mut buf = [0u8; 8];
            for slot in &mut data {
                r.read_exact(&mut buf)?;
                *slot = f64::from_le_bytes(buf);
            }
            records.push(Record {
                name,
                scope,
                tensor: Tensor::from_vec(&shape, data)?,
            });
        }
        Ok(Checkpoint { meta, records })
    }

    pub fn read_from(path: &Path) -> Result<Checkpoint> {
        Checkpoint::read(&mut BufReader::new(File::open(path)?))
    }

    /// Copies every record's values into the registry. The model must
    /// expose exactly the checkpoint's parameters with matching scopes
    /// and shapes.
    pub fn restore_into(&self, registry: &ParameterRegistry) -> Result<()> {
        if self.records.len() != registry.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters but the model has {}",
                self.records.len(),
                registry.len()
            )));
        }
        for r in &self.records {
            let entry = registry.get(&r.name).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "checkpoint parameter '{}' does not exist in the model",
                    r.name
                ))
            })?;
            if entry.scope != r.scope {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' is {} in the checkpoint but {} in the model",
                    r.name, r.scope, entry.scope
                )));
            }
            let mut pair = entry.param.borrow_mut();
            if pair.value.shape() != r.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?} in the checkpoint but {:?} in the model",
                    r.name,
                    r.tensor.shape(),
                    pair.value.shape()
                )));
            }
            pair.value = r.tensor.clone();
        }
        Ok(())
    }
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let v = u64::from_le_bytes(buf);
    if v > MAX_FIELD_LEN {
        return Err(Error::Checkpoint(format!("{what} is implausibly large")));
    }
    Ok(v as usize)
}
