//! Binary container shared by checkpoints and packed models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"OVSWCKPT" (checkpoint) or b"OVSWPACK" (packed model)
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              { "format_version": 1, ...metadata...,
//!                "tensors": [ { "name", "shape", "dtype", "offset", "nbytes" }, ... ] }
//! payload      raw tensor data in manifest order; `offset` is relative to the
//!              payload start; dtype "f32" / "f64" = IEEE-754 binary32 / binary64,
//!              "u64" = 64-bit words
//! ```

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OVSWCKPT";
pub const PACKED_MAGIC: &[u8; 8] = b"OVSWPACK";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Payload {
    fn dtype(&self) -> &'static str {
        match self {
            Payload::F32(_) => "f32",
            Payload::F64(_) => "f64",
            Payload::U64(_) => "u64",
        }
    }

    pub fn nbytes(&self) -> usize {
        match self {
            Payload::F32(v) => v.len() * 4,
            Payload::F64(v) => v.len() * 8,
            Payload::U64(v) => v.len() * 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn f32(name: impl Into<String>, shape: &[usize], data: &[f32]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            payload: Payload::F32(data.to_vec()),
        }
    }

    pub fn f64(name: impl Into<String>, shape: &[usize], data: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            payload: Payload::F64(data.to_vec()),
        }
    }

    pub fn u64(name: impl Into<String>, shape: &[usize], words: &[u64]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            payload: Payload::U64(words.to_vec()),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.payload {
            Payload::F32(v) => Ok(v),
            _ => Err(Error::Format(format!("tensor {} is not f32", self.name))),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.payload {
            Payload::F64(v) => Ok(v),
            _ => Err(Error::Format(format!("tensor {} is not f64", self.name))),
        }
    }

    pub fn as_u64(&self) -> Result<&[u64]> {
        match &self.payload {
            Payload::U64(v) => Ok(v),
            _ => Err(Error::Format(format!("tensor {} is not u64", self.name))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

/// Serializes `meta` (a JSON object) and `records` into one container.
pub fn write_container(magic: &[u8; 8], meta: Value, records: &[Record]) -> Result<Vec<u8>> {
    let mut header = match meta {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        _ => return Err(Error::Format("container metadata must be a JSON object".into())),
    };
    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(records.len());
    for r in records {
        let nbytes = r.payload.nbytes() as u64;
        manifest.push(ManifestEntry {
            name: r.name.clone(),
            shape: r.shape.clone(),
            dtype: r.payload.dtype().into(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    header.insert("format_version".into(), Value::from(FORMAT_VERSION));
    header.insert("tensors".into(), serde_json::to_value(&manifest)?);
    let header = serde_json::to_vec(&Value::Object(header))?;

    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for r in records {
        match &r.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

/// Parses a container, returning its metadata object (including `format_version`
/// and `tensors`) and the records in manifest order.
pub fn read_container(magic: &[u8; 8], bytes: &[u8]) -> Result<(Map<String, Value>, Vec<Record>)> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("container truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&bytes[..8])
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
    let header: Map<String, Value> = serde_json::from_slice(&bytes[16..payload_start])?;
    let version = header.get("format_version").and_then(Value::as_u64);
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Format(format!(
            "unsupported format_version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let manifest: Vec<ManifestEntry> = serde_json::from_value(
        header
            .get("tensors")
            .cloned()
            .ok_or_else(|| Error::Format("missing tensor manifest".into()))?,
    )?;
    let payload = &bytes[payload_start..];
    let mut records = Vec::with_capacity(manifest.len());
    for e in manifest {
        let start = e.offset as usize;
        let end = start
            .checked_add(e.nbytes as usize)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| Error::Format(format!("tensor {} runs past end of payload", e.name)))?;
        let raw = &payload[start..end];
        let numel: usize = e.shape.iter().product();
        let payload = match e.dtype.as_str() {
            "f32" => Payload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            "f64" => Payload::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            "u64" => Payload::U64(
                raw.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            other => return Err(Error::Format(format!("unknown dtype {other} for {}", e.name))),
        };
        let count = match &payload {
            Payload::F32(v) => Some(v.len()),
            Payload::F64(v) => Some(v.len()),
            Payload::U64(_) => None,
        };
        if let Some(len) = count {
            if len != numel {
                return Err(Error::Format(format!(
                    "tensor {} has {} values for shape {:?}",
                    e.name,
                    len,
                    e.shape
                )));
            }
        }
        records.push(Record {
            name: e.name,
            shape: e.shape,
            payload,
        });
    }
    Ok((header, records))
}

/// Looks up a record by name.
pub fn find<'a>(records: &'a [Record], name: &str) -> Result<&'a Record> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
}
