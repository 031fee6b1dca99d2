//! Min-over-outputs evaluation metric.
//!
//! For each reference `y_j` the distance to the closest model output `f(x)_i`
//! is taken, and the per-reference minima are summed. Outputs and references
//! are grouped by a query key (e.g. one location queried at several dates);
//! the minimum runs inside a group and the total sums across groups.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RealImage;
use crate::rasterio::{read_real_image, CodecError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("sample value {value} outside [0, 1] in `{id}`")]
    OutOfRange { id: String, value: f64 },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("mapping file line {line}: {reason}")]
    BadMapping { line: u64, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot load `{path}`: {source}")]
    Load { path: PathBuf, source: CodecError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceNorm {
    #[default]
    MeanAbs,
    MeanSq,
}

impl std::str::FromStr for DistanceNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "meanabs" => Ok(DistanceNorm::MeanAbs),
            "meansq" => Ok(DistanceNorm::MeanSq),
            other => Err(format!("unknown norm `{other}` (expected meanabs or meansq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: RealImage,
}

impl LabeledImage {
    pub fn new(id: impl Into<String>, image: RealImage) -> Self {
        Self { id: id.into(), image }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_key: Option<String>,
    pub reference_id: String,
    pub best_output_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub norm: DistanceNorm,
    pub total: f64,
    pub per_reference: Vec<ReferenceMatch>,
    /// Mean absolute error of each reference against its best output.
    pub mean_mae: f64,
    /// Mean sharpness of all outputs.
    pub sharpness: f64,
}

fn check_range(img: &LabeledImage) -> Result<(), EvalError> {
    match img.image.samples().find(|v| !(0.0..=1.0).contains(v)) {
        Some(value) => Err(EvalError::OutOfRange { id: img.id.clone(), value }),
        None => Ok(()),
    }
}

/// Mean of `|a − b|` (or `(a − b)²`) over all samples, in storage order.
pub fn pairwise_distance(output: &RealImage, reference: &RealImage, norm: DistanceNorm) -> Result<f64, EvalError> {
    if !output.same_shape(reference) {
        return Err(EvalError::DimensionMismatch(format!(
            "{}×{}×{} vs {}×{}×{}",
            output.width(),
            output.height(),
            output.channels(),
            reference.width(),
            reference.height(),
            reference.channels()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in output.samples().zip(reference.samples()) {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(EvalError::OutOfRange {
                id: String::new(),
                value: if (0.0..=1.0).contains(&a) { b } else { a },
            });
        }
        let d = a - b;
        sum += match norm {
            DistanceNorm::MeanAbs => d.abs(),
            DistanceNorm::MeanSq => d * d,
        };
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean forward-difference gradient magnitude `|dx| + |dy|` over all channels;
/// differences on the last column/row are zero.
pub fn sharpness(image: &RealImage) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let n = w * h * image.channels();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for plane in image.planes() {
        let d = plane.data();
        for y in 0..h {
            for x in 0..w {
                let v = d[y * w + x];
                if x + 1 < w {
                    total += (d[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    total += (d[(y + 1) * w + x] - v).abs();
                }
            }
        }
    }
    total / n as f64
}

/// Core evaluation for one group; the distance matrix is filled in parallel
/// and reduced sequentially (ties keep the lowest output index).
fn eval_group(
    query_key: Option<&str>,
    outputs: &[LabeledImage],
    references: &[LabeledImage],
    norm: DistanceNorm,
) -> Result<(Vec<ReferenceMatch>, Vec<f64>), EvalError> {
    if outputs.is_empty() {
        return Err(EvalError::EmptySet("output"));
    }
    if references.is_empty() {
        return Err(EvalError::EmptySet("reference"));
    }
    outputs.iter().chain(references).try_for_each(check_range)?;
    let cells: Vec<(usize, usize)> = (0..references.len())
        .flat_map(|j| (0..outputs.len()).map(move |i| (j, i)))
        .collect();
    let distances = cells
        .par_iter()
        .map(|&(j, i)| pairwise_distance(&outputs[i].image, &references[j].image, norm))
        .collect::<Result<Vec<f64>, _>>()?;

    let mut matches = Vec::with_capacity(references.len());
    let mut maes = Vec::with_capacity(references.len());
    for (j, reference) in references.iter().enumerate() {
        let row = &distances[j * outputs.len()..(j + 1) * outputs.len()];
        let mut best = 0;
        for i in 1..row.len() {
            if row[i] < row[best] {
                best = i;
            }
        }
        maes.push(match norm {
            DistanceNorm::MeanAbs => row[best],
            DistanceNorm::MeanSq => pairwise_distance(&outputs[best].image, &reference.image, DistanceNorm::MeanAbs)?,
        });
        matches.push(ReferenceMatch {
            query_key: query_key.map(str::to_string),
            reference_id: reference.id.clone(),
            best_output_id: outputs[best].id.clone(),
            distance: row[best],
        });
    }
    Ok((matches, maes))
}

fn finish(norm: DistanceNorm, per_reference: Vec<ReferenceMatch>, maes: Vec<f64>, outputs: &[&LabeledImage]) -> EvalReport {
    let total = per_reference.iter().map(|m| m.distance).sum();
    let mean_mae = maes.iter().sum::<f64>() / maes.len() as f64;
    let sharp = outputs.iter().map(|o| sharpness(&o.image)).sum::<f64>() / outputs.len() as f64;
    EvalReport {
        norm,
        total,
        per_reference,
        mean_mae,
        sharpness: sharp,
    }
}

/// Single-group evaluation: every reference against every output.
pub fn eval_set(outputs: &[LabeledImage], references: &[LabeledImage], norm: DistanceNorm) -> Result<EvalReport, EvalError> {
    let (matches, maes) = eval_group(None, outputs, references, norm)?;
    Ok(finish(norm, matches, maes, &outputs.iter().collect::<Vec<_>>()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalGroup {
    pub outputs: Vec<LabeledImage>,
    pub references: Vec<LabeledImage>,
}

/// Evaluates each query group separately and sums the totals; groups are
/// visited in key order.
pub fn eval_grouped(groups: &BTreeMap<String, EvalGroup>, norm: DistanceNorm) -> Result<EvalReport, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::EmptySet("query group"));
    }
    let mut matches = Vec::new();
    let mut maes = Vec::new();
    for (key, group) in groups {
        let (m, e) = eval_group(Some(key), &group.outputs, &group.references, norm)?;
        matches.extend(m);
        maes.extend(e);
    }
    let outputs: Vec<&LabeledImage> = groups.values().flat_map(|g| &g.outputs).collect();
    Ok(finish(norm, matches, maes, &outputs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Output,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingEntry {
    pub query_key: String,
    pub role: Role,
    pub path: PathBuf,
}

/// Mapping CSV with header `query_key,role,path`; `role` is `output` or `reference`.
pub fn parse_mapping(text: &str) -> Result<Vec<MappingEntry>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let bad = |line: u64, reason: String| EvalError::BadMapping { line, reason };
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().ne(["query_key", "role", "path"]) {
        return Err(bad(1, "expected header `query_key,role,path`".into()));
    }
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let role = match row.get(1).unwrap_or_default() {
            "output" => Role::Output,
            "reference" => Role::Reference,
            other => return Err(bad(line, format!("unknown role `{other}`"))),
        };
        let path = row.get(2).unwrap_or_default();
        if path.is_empty() {
            return Err(bad(line, "empty path".into()));
        }
        entries.push(MappingEntry {
            query_key: row.get(0).unwrap_or_default().to_string(),
            role,
            path: path.into(),
        });
    }
    Ok(entries)
}

pub fn mapping_to_csv(entries: &[MappingEntry]) -> String {
    let mut out = String::from("query_key,role,path\n");
    for e in entries {
        let role = match e.role {
            Role::Output => "output",
            Role::Reference => "reference",
        };
        out.push_str(&format!("{},{},{}\n", e.query_key, role, e.path.display()));
    }
    out
}

/// Loads the images named in a mapping file. Output paths resolve against
/// `outputs_dir`, reference paths against `references_dir`; image ids are the
/// mapping paths as written.
pub fn load_groups(
    entries: &[MappingEntry],
    outputs_dir: &Path,
    references_dir: &Path,
) -> Result<BTreeMap<String, EvalGroup>, EvalError> {
    let loaded: Vec<(usize, LabeledImage)> = entries
        .par_iter()
        .enumerate()
        .map(|(idx, e)| {
            let root = match e.role {
                Role::Output => outputs_dir,
                Role::Reference => references_dir,
            };
            let path = root.join(&e.path);
            let image = read_real_image(&path).map_err(|source| EvalError::Load { path, source })?;
            Ok((idx, LabeledImage::new(e.path.display().to_string(), image)))
        })
        .collect::<Result<_, EvalError>>()?;
    let mut groups: BTreeMap<String, EvalGroup> = BTreeMap::new();
    for (idx, image) in loaded {
        let e = &entries[idx];
        let group = groups.entry(e.query_key.clone()).or_default();
        match e.role {
            Role::Output => group.outputs.push(image),
            Role::Reference => group.references.push(image),
        }
    }
    Ok(groups)
}
