//! Binary checkpoints: magic, a length-prefixed JSON header, then raw
//! little-endian `f64` tensor data in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ModelParams, Tensor, TensorId};
use crate::error::{RamError, Result};
use crate::kb::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAMCKPT1";

/// Vocabulary names stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointNames {
    pub entities: Vec<String>,
    pub relations: Vec<(String, usize)>,
    pub roles: Option<Vec<String>>,
}

impl CheckpointNames {
    pub fn from_vocab(v: &Vocabulary) -> Self {
        Self {
            entities: v.entities.names().to_vec(),
            relations: v.relations.names().to_vec(),
            roles: v.roles.as_ref().map(|r| r.names().to_vec()),
        }
    }

    /// Error unless `v` has the same entity and relation vocabulary.
    pub fn check_matches(&self, v: &Vocabulary) -> Result<()> {
        if self.entities.len() != v.n_entities() || self.relations.len() != v.n_relations() {
            return Err(RamError::Data(format!(
                "checkpoint vocabulary ({} entities, {} relations) does not match dataset ({}, {})",
                self.entities.len(),
                self.relations.len(),
                v.n_entities(),
                v.n_relations()
            )));
        }
        if self.entities != v.entities.names() || self.relations != v.relations.names() {
            return Err(RamError::Data(
                "checkpoint vocabulary names differ from the dataset".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub names: Option<CheckpointNames>,
    /// Free-form metadata (training config, epoch, …).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    id: TensorId,
    /// Run-length encoded block lengths: `(count, len)`.
    blocks: Vec<(usize, usize)>,
    frozen: bool,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    layout: Layout,
    names: Option<CheckpointNames>,
    extra: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn run_length(lens: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &l in lens {
        match out.last_mut() {
            Some((n, len)) if *len == l => *n += 1,
            _ => out.push((1, l)),
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    names: Option<&CheckpointNames>,
    extra: serde_json::Value,
) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        layout: params.layout.clone(),
        names: names.cloned(),
        extra,
        tensors: params
            .tensors
            .iter()
            .map(|(&id, t)| TensorEntry {
                id,
                blocks: run_length(&t.block_lens()),
                frozen: t.frozen,
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors.values() {
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| RamError::Checkpoint("file too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(RamError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| RamError::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut tensors = BTreeMap::new();
    let mut buf = [0u8; 8];
    for entry in header.tensors {
        let lens: Vec<usize> = entry
            .blocks
            .iter()
            .flat_map(|&(n, l)| std::iter::repeat_n(l, n))
            .collect();
        let mut t = Tensor::ragged(&lens);
        if t.len() != entry.len {
            return Err(RamError::Checkpoint(format!("tensor {} length mismatch", entry.id)));
        }
        for x in &mut t.data {
            r.read_exact(&mut buf)
                .map_err(|_| RamError::Checkpoint(format!("truncated data in {}", entry.id)))?;
            *x = f64::from_le_bytes(buf);
        }
        t.frozen = entry.frozen;
        tensors.insert(entry.id, t);
    }
    let expected = ModelParams::zeros(header.config.clone(), header.layout.clone())?;
    let shapes_ok = expected.tensors.len() == tensors.len()
        && expected
            .tensors
            .iter()
            .all(|(id, t)| tensors.get(id).is_some_and(|u| u.block_lens() == t.block_lens()));
    if !shapes_ok {
        return Err(RamError::Checkpoint("tensor shapes do not match the config".into()));
    }
    Ok(Checkpoint {
        params: ModelParams {
            config: header.config,
            layout: header.layout,
            tensors,
        },
        names: header.names,
        extra: header.extra,
    })
}
