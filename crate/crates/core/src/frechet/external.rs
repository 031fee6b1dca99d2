//! Precomputed per-patch features produced by an external tool.
//!
//! Binary file, little-endian:
//!
//! ```text
//! b"CCAF" | u32 version (=1) | u32 d | u64 rows | rows × d × f32
//! ```
//!
//! The companion index is CSV with header `scene_id,row_start,row_end`
//! (half-open row range per scene).

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use super::features::{FeatureError, FeatureVector};

pub const MAGIC: &[u8; 4] = b"CCAF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum ExternalFeatureError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature file does not start with CCAF magic")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("feature file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("feature index line {line}: {reason}")]
    BadIndex { line: u64, reason: String },
    #[error("index range {start}..{end} for `{scene_id}` exceeds {rows} rows")]
    RangeOutOfBounds {
        scene_id: String,
        start: u64,
        end: u64,
        rows: u64,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    dim: usize,
    rows: u64,
    values: Vec<f32>,
    index: BTreeMap<String, Range<u64>>,
}

impl ExternalFeatures {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn extractor_id(&self) -> String {
        format!("external-v{VERSION}-d{}", self.dim)
    }

    pub fn contains(&self, scene_id: &str) -> bool {
        self.index.contains_key(scene_id)
    }

    /// Rows belonging to `scene_id`, widened to f64.
    pub fn features_for(&self, scene_id: &str) -> Option<Result<Vec<FeatureVector>, FeatureError>> {
        let range = self.index.get(scene_id)?;
        let d = self.dim;
        Some(
            (range.start..range.end)
                .map(|r| {
                    let start = r as usize * d;
                    FeatureVector::new(self.values[start..start + d].iter().map(|&v| v as f64).collect())
                })
                .collect(),
        )
    }

    pub fn load(features: &Path, index: &Path) -> Result<Self, ExternalFeatureError> {
        let (dim, values) = decode_feature_file(&std::fs::read(features)?)?;
        let index = parse_index(&std::fs::read_to_string(index)?)?;
        Self::from_parts(dim, values, index)
    }

    pub fn from_parts(
        dim: usize,
        values: Vec<f32>,
        index: BTreeMap<String, Range<u64>>,
    ) -> Result<Self, ExternalFeatureError> {
        let rows = values.len().checked_div(dim).unwrap_or(0) as u64;
        for (scene_id, r) in &index {
            if r.start > r.end || r.end > rows {
                return Err(ExternalFeatureError::RangeOutOfBounds {
                    scene_id: scene_id.clone(),
                    start: r.start,
                    end: r.end,
                    rows,
                });
            }
        }
        Ok(Self {
            dim,
            rows,
            values,
            index,
        })
    }
}

/// Returns `(d, row-major values)`.
pub fn decode_feature_file(bytes: &[u8]) -> Result<(usize, Vec<f32>), ExternalFeatureError> {
    if bytes.len() < HEADER_LEN {
        return Err(ExternalFeatureError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(ExternalFeatureError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ExternalFeatureError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = HEADER_LEN as u64 + rows * dim as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(ExternalFeatureError::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, values))
}

pub fn encode_feature_file(dim: usize, rows: &[Vec<f32>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + rows.len() * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for row in rows {
        assert_eq!(row.len(), dim, "feature row has the wrong dimension");
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn parse_index(text: &str) -> Result<BTreeMap<String, Range<u64>>, ExternalFeatureError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let bad = |line: u64, reason: String| ExternalFeatureError::BadIndex { line, reason };
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().ne(["scene_id", "row_start", "row_end"]) {
        return Err(bad(1, "expected header `scene_id,row_start,row_end`".into()));
    }
    let mut index = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<u64, ExternalFeatureError> {
            row.get(i)
                .unwrap_or_default()
                .parse()
                .map_err(|e| bad(line, format!("column {i}: {e}")))
        };
        let scene_id = row.get(0).unwrap_or_default().to_string();
        let range = num(1)?..num(2)?;
        if index.insert(scene_id.clone(), range).is_some() {
            return Err(bad(line, format!("duplicate scene `{scene_id}`")));
        }
    }
    Ok(index)
}

pub fn index_to_csv(index: &BTreeMap<String, Range<u64>>) -> String {
    let mut out = String::from("scene_id,row_start,row_end\n");
    for (id, r) in index {
        out.push_str(&format!("{id},{},{}\n", r.start, r.end));
    }
    out
}
