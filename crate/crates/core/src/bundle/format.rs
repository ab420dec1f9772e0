//! Bundle file layout.
//!
//! ```text
//! bytes 0..4     magic "NWB1"
//! bytes 4..12    header length H, u64 little-endian
//! bytes 12..12+H UTF-8 JSON header:
//!                {"tensors":[{name,dtype:"f32",shape,offset,nbytes}...],
//!                 "graph":{...}, "metadata":{...}, "crc32": <u32>}
//! remainder      data section; tensor offsets are relative to its start,
//!                values are little-endian IEEE-754 float32, row-major
//! ```
//!
//! The CRC-32 (IEEE polynomial) covers the data section only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_bundle, ArchGraph, DType, ModelBundle, TensorRecord, KNOWN_KINDS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NWB1";
const PREAMBLE: usize = 12;

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    graph: ArchGraph,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

/// Serialize to the exact on-disk byte layout. Deterministic for a given bundle.
pub fn encode_bundle(bundle: &ModelBundle) -> Vec<u8> {
    let data_len: usize = bundle.tensors.iter().map(TensorRecord::nbytes).sum();
    let mut data = Vec::with_capacity(data_len);
    let mut entries = Vec::with_capacity(bundle.tensors.len());
    for t in &bundle.tensors {
        entries.push(TensorEntry {
            name: t.name.clone(),
            dtype: t.dtype,
            shape: t.shape.clone(),
            offset: data.len() as u64,
            nbytes: t.nbytes() as u64,
        });
        for v in &t.data {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        tensors: entries,
        graph: bundle.graph.clone(),
        metadata: bundle.metadata.clone(),
        crc32: crc32fast::hash(&data),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

/// Parse bytes into a bundle without running structural validation.
pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"NWB1\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Corruption(format!("header length {hlen} exceeds file size {}", bytes.len())))?;
    let text = std::str::from_utf8(&bytes[PREAMBLE..hend]).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("header JSON: {e}")))?;
    check_layer_kinds(&value)?;
    let header: Header = serde_json::from_value(value).map_err(|e| Error::Format(format!("header JSON: {e}")))?;

    let data = &bytes[hend..];
    let crc = crc32fast::hash(data);
    if crc != header.crc32 {
        return Err(Error::Corruption(format!("data checksum {crc:#010x} != header {:#010x}", header.crc32)));
    }
    let declared: u64 = header.tensors.iter().map(|t| t.nbytes).sum();
    if declared != data.len() as u64 {
        return Err(Error::Corruption(format!(
            "header declares {declared} data bytes, data section holds {}",
            data.len()
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let numel: usize = e.shape.iter().product();
        if e.nbytes != numel as u64 * 4 {
            return Err(Error::Corruption(format!(
                "tensor {}: nbytes {} does not match shape {:?}",
                e.name, e.nbytes, e.shape
            )));
        }
        let start = e.offset as usize;
        let end = start
            .checked_add(e.nbytes as usize)
            .filter(|&end| end <= data.len())
            .ok_or_else(|| Error::Corruption(format!("tensor {}: range exceeds data section", e.name)))?;
        let values = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(TensorRecord { name: e.name, dtype: e.dtype, shape: e.shape, data: values });
    }
    Ok(ModelBundle { tensors, graph: header.graph, metadata: header.metadata })
}

fn check_layer_kinds(header: &serde_json::Value) -> Result<()> {
    let layers = header
        .pointer("/graph/layers")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Format("header has no graph.layers array".into()))?;
    for l in layers {
        let kind = l.get("kind").and_then(|k| k.as_str()).unwrap_or("<missing>");
        if !KNOWN_KINDS.contains(&kind) {
            let id = l.get("id").and_then(|v| v.as_str()).unwrap_or("?");
            return Err(Error::Unsupported(format!("layer {id}: unknown layer kind '{kind}'")));
        }
    }
    Ok(())
}

/// Read a bundle file and require it to validate.
pub fn read_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let b = read_bundle_unchecked(path)?;
    let diags = validate_bundle(&b);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    Ok(b)
}

pub fn read_bundle_unchecked(path: impl AsRef<Path>) -> Result<ModelBundle> {
    decode_bundle(&fs::read(path)?)
}

/// Validate, then write. Nothing touches the filesystem if validation fails.
pub fn write_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let diags = validate_bundle(bundle);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    fs::write(path, encode_bundle(bundle))?;
    Ok(())
}
