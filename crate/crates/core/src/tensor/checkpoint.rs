//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian `u64` giving the header length, a UTF-8
//! JSON header, then every parameter's values as little-endian `f64` in
//! header order. The header is
//! `{"params": [{"name", "shape", "offset"}], "meta": <any JSON>}` where
//! `offset` counts `f64` values from the start of the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(store: &ParamStore, meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, p) in store.iter() {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.len();
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        params: entries,
        meta,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset * 8);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("file shorter than the length prefix"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let data = &bytes[8 + hlen..];
    if !data.len().is_multiple_of(8) {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let floats: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut store = ParamStore::new();
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let vals = floats.get(e.offset..e.offset + n).ok_or_else(|| {
            Error::Checkpoint(format!("parameter `{}` runs past the data section", e.name))
        })?;
        store.add(e.name, Tensor::new(e.shape, vals.to_vec())?)?;
    }
    Ok((store, header.meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(store, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    decode_checkpoint(&fs::read(path)?)
}
