//! Scene catalog: one CSV row per acquisition.
//!
//! ```text
//! scene_id,sensor,tile_id,date,path,bands
//! S2_T01_0001,EO,T01,2020-01-15,tiles/S2_T01_0001.tif,B4;B3;B2;QA60
//! S1_T01_0001,SAR,T01,2020-01-10,tiles/S1_T01_0001.tif,VV;VH
//! ```
//!
//! Relative paths resolve against the catalog's directory. Band labels
//! starting with `QA` mark quality-assurance bands, which only EO scenes may
//! carry.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CATALOG_HEADER: [&str; 6] = ["scene_id", "sensor", "tile_id", "date", "path", "bands"];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("I/O error reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog at line {line}: {reason}")]
    MalformedCatalog { line: u64, reason: String },
    #[error("duplicate scene_id `{0}`")]
    DuplicateSceneId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sensor {
    #[serde(rename = "SAR")]
    Sar,
    #[serde(rename = "EO")]
    Eo,
}

impl Sensor {
    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::Sar => "SAR",
            Sensor::Eo => "EO",
        }
    }
}

impl std::str::FromStr for Sensor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SAR" => Ok(Sensor::Sar),
            "EO" => Ok(Sensor::Eo),
            other => Err(format!("unknown sensor `{other}`")),
        }
    }
}

pub fn is_qa_band(label: &str) -> bool {
    label.starts_with("QA")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub sensor: Sensor,
    pub tile_id: String,
    pub date: NaiveDate,
    pub path: PathBuf,
    pub bands: Vec<String>,
}

impl SceneRecord {
    pub fn qa_band(&self) -> Option<&str> {
        self.bands.iter().map(String::as_str).find(|b| is_qa_band(b))
    }

    /// Bands other than QA bands, in file order.
    pub fn spectral_bands(&self) -> Vec<&str> {
        self.bands.iter().map(String::as_str).filter(|b| !is_qa_band(b)).collect()
    }

    fn sort_key(&self) -> (&str, NaiveDate, &str) {
        (&self.tile_id, self.date, &self.scene_id)
    }
}

/// Orders records by (tile_id, date, scene_id).
pub fn sort_records(records: &mut [SceneRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn parse_catalog(text: &str, root: &Path) -> Result<Vec<SceneRecord>, CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let malformed = |line: u64, reason: String| CatalogError::MalformedCatalog { line, reason };

    let header = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if header.iter().ne(CATALOG_HEADER.iter().copied()) {
        return Err(malformed(1, format!("expected header `{}`", CATALOG_HEADER.join(","))));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or_default();

        let scene_id = field(0).to_string();
        if scene_id.is_empty() {
            return Err(malformed(line, "empty scene_id".into()));
        }
        let sensor: Sensor = field(1).parse().map_err(|e| malformed(line, e))?;
        let tile_id = field(2).to_string();
        if tile_id.is_empty() {
            return Err(malformed(line, "empty tile_id".into()));
        }
        let date = NaiveDate::parse_from_str(field(3), "%Y-%m-%d")
            .map_err(|e| malformed(line, format!("bad date `{}`: {e}", field(3))))?;
        if field(4).is_empty() {
            return Err(malformed(line, "empty path".into()));
        }
        let bands: Vec<String> = field(5)
            .split(';')
            .map(|b| b.trim().to_string())
            .filter(|b| !b.is_empty())
            .collect();
        if bands.is_empty() {
            return Err(malformed(line, "no band labels".into()));
        }
        if sensor == Sensor::Sar && bands.iter().any(|b| is_qa_band(b)) {
            return Err(malformed(line, "SAR scenes cannot carry a QA band".into()));
        }
        if !seen.insert(scene_id.clone()) {
            return Err(CatalogError::DuplicateSceneId(scene_id));
        }
        records.push(SceneRecord {
            scene_id,
            sensor,
            tile_id,
            date,
            path: root.join(field(4)),
            bands,
        });
    }
    sort_records(&mut records);
    Ok(records)
}

pub fn load_catalog(path: &Path) -> Result<Vec<SceneRecord>, CatalogError> {
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().unwrap_or_else(|| Path::new(""));
    parse_catalog(&text, root)
}

/// Serializes records in catalog format, writing `path` verbatim.
pub fn catalog_to_csv(records: &[SceneRecord]) -> String {
    let mut out = CATALOG_HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scene_id,
            r.sensor.as_str(),
            r.tile_id,
            r.date.format("%Y-%m-%d"),
            r.path.display(),
            r.bands.join(";")
        ));
    }
    out
}
