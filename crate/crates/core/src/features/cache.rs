//! Binary feature cache.
//!
//! ```text
//! magic    8 bytes   "USFEAT01"
//! hlen     u32 LE    length of the header
//! header   hlen      UTF-8 JSON {extractor_id, dim, rows: [VariantKey, ...]}
//! records  rows·dim  f32 LE, one record per header row, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"USFEAT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantKey {
    pub lesion_id: String,
    pub scan_index: usize,
    pub threshold_db: f64,
    pub margin_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    extractor_id: String,
    dim: usize,
    rows: Vec<VariantKey>,
}

/// Feature rows keyed by variant. Values are stored as `f32`, so a table
/// read back from disk is identical to the one that was written.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub extractor_id: String,
    pub dim: usize,
    pub keys: Vec<VariantKey>,
    values: Vec<f32>,
}

impl FeatureTable {
    pub fn new(extractor_id: impl Into<String>, dim: usize) -> Self {
        FeatureTable {
            extractor_id: extractor_id.into(),
            dim,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn push(&mut self, key: VariantKey, features: &FeatureVector) -> Result<()> {
        if features.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: features.dim(),
            });
        }
        self.keys.push(key);
        self.values.extend(features.values.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&VariantKey, &[f32])> {
        self.keys.iter().zip(self.values.chunks_exact(self.dim.max(1)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            extractor_id: self.extractor_id.clone(),
            dim: self.dim,
            rows: self.keys.clone(),
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("feature cache: {m}"));
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
        let body = &bytes[header_end..];
        if body.len() != header.rows.len() * header.dim * 4 {
            return Err(bad("record block does not match header"));
        }
        Ok(FeatureTable {
            extractor_id: header.extractor_id,
            dim: header.dim,
            keys: header.rows,
            values: body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::data::manifest::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&super::read_bytes(path.as_ref())?)
    }
}
