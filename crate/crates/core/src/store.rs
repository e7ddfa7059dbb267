//! On-disk formats: the embedding store / external sidecar (JSON index plus a
//! packed little-endian f32 blob) and projection-head checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encode::{PartEmbedding, ProjectionHead};
use crate::error::{Error, Result};
use crate::mesh::PartId;
use crate::views::ViewRole;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub part_id: PartId,
    pub view: ViewRole,
}

/// Index of an embedding blob: `dim` floats per entry, entries packed in
/// `order`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingIndexFile {
    pub dim: usize,
    pub order: Vec<IndexEntry>,
}

pub fn f32_to_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn le_bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Splits each embedding into one block per role and packs them.
pub fn encode_embedding_store(
    embeddings: &[PartEmbedding],
    roles: &[ViewRole],
) -> Result<(EmbeddingIndexFile, Vec<u8>)> {
    if roles.is_empty() {
        return Err(Error::Config("no views selected".into()));
    }
    let dim = embeddings.first().map_or(0, |e| e.x.len() / roles.len());
    let mut order = Vec::with_capacity(embeddings.len() * roles.len());
    let mut blob = Vec::with_capacity(embeddings.len() * roles.len() * dim * 4);
    for e in embeddings {
        if e.x.len() != dim * roles.len() {
            return Err(Error::Dimension {
                expected: dim * roles.len(),
                actual: e.x.len(),
            });
        }
        for &view in roles {
            order.push(IndexEntry {
                part_id: e.part_id,
                view,
            });
        }
        blob.extend(f32_to_le_bytes(e.x.iter().copied()));
    }
    Ok((EmbeddingIndexFile { dim, order }, blob))
}

/// Reassembles per-part embeddings, concatenating the blocks of `roles` in
/// that order.
pub fn decode_embedding_store(
    index: &EmbeddingIndexFile,
    blob: &[u8],
    roles: &[ViewRole],
) -> Result<BTreeMap<PartId, PartEmbedding>> {
    let expected = index.order.len() * index.dim * 4;
    if blob.len() != expected {
        return Err(Error::Format(format!(
            "blob size mismatch: expected {expected} bytes, found {}",
            blob.len()
        )));
    }
    let values = le_bytes_to_f32(blob);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let entry = &index.order[i / index.dim.max(1)];
        return Err(Error::Data(format!(
            "non-finite value in part {} {} view",
            entry.part_id,
            entry.view.as_str()
        )));
    }

    let mut blocks: BTreeMap<PartId, BTreeMap<ViewRole, &[f32]>> = BTreeMap::new();
    for (i, entry) in index.order.iter().enumerate() {
        let block = &values[i * index.dim..(i + 1) * index.dim];
        let views = blocks.entry(entry.part_id).or_default();
        if views.insert(entry.view, block).is_some() {
            return Err(Error::Format(format!(
                "part {} has the {} view twice",
                entry.part_id,
                entry.view.as_str()
            )));
        }
    }

    let mut out = BTreeMap::new();
    for (part_id, views) in blocks {
        let mut x = Vec::with_capacity(roles.len() * index.dim);
        for role in roles {
            let block = views.get(role).ok_or_else(|| {
                Error::Format(format!("part {part_id} is missing the {} view", role.as_str()))
            })?;
            x.extend_from_slice(block);
        }
        out.insert(part_id, PartEmbedding { part_id, x });
    }
    Ok(out)
}

/// Loads an external sidecar: every part needs isolated, context and full
/// blocks.
pub fn load_external_embeddings(
    index_json: &[u8],
    blob: &[u8],
) -> Result<BTreeMap<PartId, PartEmbedding>> {
    let index: EmbeddingIndexFile = serde_json::from_slice(index_json)?;
    decode_embedding_store(&index, blob, &ViewRole::ALL)
}

pub const INDEX_FILE: &str = "embeddings.json";
pub const BLOB_FILE: &str = "embeddings.bin";

pub fn write_store_files(
    dir: &Path,
    embeddings: &[PartEmbedding],
    roles: &[ViewRole],
) -> Result<()> {
    let (index, blob) = encode_embedding_store(embeddings, roles)?;
    write_file(&dir.join(INDEX_FILE), &serde_json::to_vec_pretty(&index)?)?;
    write_file(&dir.join(BLOB_FILE), &blob)
}

pub fn read_store_files(dir: &Path, roles: &[ViewRole]) -> Result<BTreeMap<PartId, PartEmbedding>> {
    let index: EmbeddingIndexFile = serde_json::from_slice(&read_file(&dir.join(INDEX_FILE))?)?;
    decode_embedding_store(&index, &read_file(&dir.join(BLOB_FILE))?, roles)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub bias: bool,
    pub seed: u64,
    /// Free-form training configuration.
    pub config: serde_json::Value,
}

const CHECKPOINT_FORMAT: &str = "partgroup-head-v1";

/// One JSON header line followed by the f32 parameters (W1, b1, W2, b2,
/// row-major).
pub fn encode_checkpoint(head: &ProjectionHead, seed: u64, config: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        input: head.input_dim(),
        hidden: head.hidden_dim(),
        output: head.output_dim(),
        bias: true,
        seed,
        config,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend(f32_to_le_bytes(head.params().map(|p| p as f32)));
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ProjectionHead)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {}", header.format)));
    }
    let mut head = ProjectionHead::zeros(header.input, header.hidden, header.output);
    let blob = &bytes[split + 1..];
    if blob.len() != head.param_count() * 4 {
        return Err(Error::Format(format!(
            "checkpoint blob size mismatch: expected {} bytes, found {}",
            head.param_count() * 4,
            blob.len()
        )));
    }
    for (p, v) in head.params_mut().zip(le_bytes_to_f32(blob)) {
        if !v.is_finite() {
            return Err(Error::Data("non-finite checkpoint parameter".into()));
        }
        *p = v as f64;
    }
    Ok((header, head))
}

pub fn save_checkpoint(path: &Path, head: &ProjectionHead, seed: u64, config: serde_json::Value) -> Result<()> {
    write_file(path, &encode_checkpoint(head, seed, config)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ProjectionHead)> {
    decode_checkpoint(&read_file(path)?)
}
