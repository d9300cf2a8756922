//! Binary checkpoint format.
//!
//! ```text
//! magic (8 bytes) | version (u32 LE) | header length (u64 LE) | header (JSON)
//! | payload (f64 LE) | SHA-256 of everything before it (32 bytes)
//! ```
//!
//! The payload holds, in order, every entity's mean then column-major
//! factor, the same for every relation, then the aggregator parameters.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::gaussian::{AggregatorMode, AggregatorParams, GaussianDensity};
use crate::kg::{KnowledgeGraph, Vocab};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"GAUSSQCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    rank: usize,
    jitter: f64,
    aggregator: AggregatorMode,
    num_entities: usize,
    num_relations: usize,
    num_aggregator_params: usize,
    entity_vocab_sha256: String,
    relation_vocab_sha256: String,
    entities: Vec<String>,
    relations: Vec<String>,
    config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub table: EmbeddingTable,
    pub entities: Vocab,
    pub relations: Vocab,
}

impl Checkpoint {
    /// Fails unless both vocabularies match the graph's exactly.
    pub fn check_graph(&self, kg: &KnowledgeGraph) -> Result<()> {
        if self.entities.fingerprint() != kg.entities().fingerprint() {
            return Err(Error::Mismatch(
                "checkpoint was trained on a different entity vocabulary".into(),
            ));
        }
        if self.relations.fingerprint() != kg.relations().fingerprint() {
            return Err(Error::Mismatch(
                "checkpoint was trained on a different relation vocabulary".into(),
            ));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let t = &checkpoint.table;
    if checkpoint.entities.len() != t.num_entities() || checkpoint.relations.len() != t.num_relations() {
        return Err(Error::Mismatch(
            "vocabulary sizes do not match the embedding table".into(),
        ));
    }
    let header = Header {
        dim: t.dim(),
        rank: t.rank(),
        jitter: t.jitter(),
        aggregator: t.aggregator().mode(),
        num_entities: t.num_entities(),
        num_relations: t.num_relations(),
        num_aggregator_params: t.aggregator().params().len(),
        entity_vocab_sha256: checkpoint.entities.fingerprint(),
        relation_vocab_sha256: checkpoint.relations.fingerprint(),
        entities: checkpoint.entities.names().to_vec(),
        relations: checkpoint.relations.names().to_vec(),
        config: checkpoint.config.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for g in t.entities().iter().chain(t.relations()) {
        for v in g.mean().iter().chain(g.factor().iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in t.aggregator().params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    let fixed = CHECKPOINT_MAGIC.len() + 4 + 8;
    if bytes.len() < fixed + 32 {
        return Err(bad("file is truncated"));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(fixed))
        .filter(|&end| end + 32 <= bytes.len())
        .ok_or_else(|| bad("file is truncated"))?;
    let header: Header = serde_json::from_slice(&bytes[fixed..header_end])
        .map_err(|e| bad(&format!("invalid header: {e}")))?;

    let per_density = header.dim * (1 + header.rank);
    let floats = (header.num_entities + header.num_relations)
        .checked_mul(per_density)
        .and_then(|n| n.checked_add(header.num_aggregator_params))
        .ok_or_else(|| bad("header sizes overflow"))?;
    let expected = floats
        .checked_mul(8)
        .and_then(|n| n.checked_add(header_end + 32))
        .ok_or_else(|| bad("header sizes overflow"))?;
    if bytes.len() < expected {
        return Err(bad("file is truncated"));
    }
    if bytes.len() > expected {
        return Err(bad("trailing bytes after checksum"));
    }
    let body_end = expected - 32;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(bad("checksum mismatch; the file is corrupted"));
    }

    let entities = Vocab::from_names(header.entities).map_err(|e| bad(&e.to_string()))?;
    let relations = Vocab::from_names(header.relations).map_err(|e| bad(&e.to_string()))?;
    if entities.len() != header.num_entities
        || relations.len() != header.num_relations
        || entities.fingerprint() != header.entity_vocab_sha256
        || relations.fingerprint() != header.relation_vocab_sha256
    {
        return Err(bad("vocabulary does not match its recorded hash"));
    }

    let mut values = bytes[header_end..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut density = || -> Result<GaussianDensity> {
        let mean = DVector::from_iterator(header.dim, values.by_ref().take(header.dim));
        let factor = DMatrix::from_iterator(
            header.dim,
            header.rank,
            values.by_ref().take(header.dim * header.rank),
        );
        GaussianDensity::new(mean, factor, header.jitter)
    };
    let ents = (0..header.num_entities)
        .map(|_| density())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| bad(&e.to_string()))?;
    let rels = (0..header.num_relations)
        .map(|_| density())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| bad(&e.to_string()))?;
    let params: Vec<f64> = values.collect();
    let aggregator = AggregatorParams::from_parts(header.aggregator, header.dim, params)
        .map_err(|e| bad(&e.to_string()))?;
    let table = EmbeddingTable::new(ents, rels, aggregator).map_err(|e| bad(&e.to_string()))?;
    Ok(Checkpoint {
        config: header.config,
        table,
        entities,
        relations,
    })
}
