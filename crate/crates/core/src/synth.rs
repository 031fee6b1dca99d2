//! Deterministic labelled synthetic corpora.
//!
//! EO tiles are 16-bit `B2;B3;B4;QA60` rasters drawn from six classes, each
//! built to land on one side of the default thresholds with at least a 10%
//! guard margin:
//!
//! | class          | expected outcome           | construction                                   |
//! |----------------|----------------------------|------------------------------------------------|
//! | `clean`        | kept                       | two-palette field mosaic, raw ≤ 3723, V ≥ 41   |
//! | `qa_cloud`     | stage 1, QA cloud          | smooth gray veil, QA bit 10 over a blob region |
//! | `bright_cloud` | stage 1, pixel threshold   | mosaic with blobs of raw ≥ 4506                |
//! | `night`        | stage 2, night             | V uniform in the night range (≤ 27)            |
//! | `nodata`       | stage 2, no-data           | ≥ 11% zero columns, bright valid part          |
//! | `haze`         | stage 3, Fréchet score     | smooth gray veil without QA flags              |
//!
//! The first `cloud_subset_count` `qa_cloud` scenes form the cloud reference
//! set. SAR scenes are 16-bit `VV;VH` speckle rasters with impulse outliers,
//! acquired every 12 days on each grid cell.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with `seed`.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{catalog_to_csv, SceneRecord, Sensor};
use crate::filters::{Rule, Stage, DEFAULT_RGB_SCALE};
use crate::raster::{BitDepth, ImageTile};
use crate::rasterio::{encode_tiff, CodecError, TiffCompression};

pub const PRNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";
pub const EO_BANDS: [&str; 4] = ["B2", "B3", "B4", "QA60"];
pub const SAR_BANDS: [&str; 2] = ["VV", "VH"];
const QA_OPAQUE: u16 = 1 << 10;
const SAR_REVISIT_DAYS: i64 = 12;

/// Default thresholds the generator is built against, with the 10% guard.
const ALPHA_GUARDED: f64 = 4096.0 * 1.1;
const BRIGHT_RATIO_GUARDED: f64 = 0.01 * 1.1;
const NIGHT_V_GUARDED: f64 = 30.0 * 0.9;
const DAY_V_GUARDED: f64 = 30.0 * 1.1;
const NODATA_V_GUARDED: f64 = 10.0 * 1.1;
const NODATA_RATIO_GUARDED: f64 = 0.10 * 1.1;
const CLEAN_RAW_MAX: u16 = (4096.0 / 1.1) as u16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("cannot parse synth spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EoClass {
    Clean,
    QaCloud,
    BrightCloud,
    Night,
    Nodata,
    Haze,
}

impl EoClass {
    pub const ALL: [EoClass; 6] = [
        EoClass::Clean,
        EoClass::QaCloud,
        EoClass::BrightCloud,
        EoClass::Night,
        EoClass::Nodata,
        EoClass::Haze,
    ];

    pub fn expected_rule(self) -> Option<Rule> {
        match self {
            EoClass::Clean => None,
            EoClass::QaCloud => Some(Rule::QaCloud),
            EoClass::BrightCloud => Some(Rule::PixelThreshold),
            EoClass::Night => Some(Rule::Night),
            EoClass::Nodata => Some(Rule::NoData),
            EoClass::Haze => Some(Rule::FrechetScore),
        }
    }

    pub fn expected_stage(self) -> Stage {
        self.expected_rule().map_or(Stage::None, Rule::stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassCounts {
    pub clean: usize,
    pub qa_cloud: usize,
    pub bright_cloud: usize,
    pub night: usize,
    pub nodata: usize,
    pub haze: usize,
}

impl Default for ClassCounts {
    fn default() -> Self {
        Self {
            clean: 400,
            qa_cloud: 150,
            bright_cloud: 150,
            night: 100,
            nodata: 100,
            haze: 100,
        }
    }
}

impl ClassCounts {
    pub fn get(&self, class: EoClass) -> usize {
        match class {
            EoClass::Clean => self.clean,
            EoClass::QaCloud => self.qa_cloud,
            EoClass::BrightCloud => self.bright_cloud,
            EoClass::Night => self.night,
            EoClass::Nodata => self.nodata,
            EoClass::Haze => self.haze,
        }
    }

    pub fn total(&self) -> usize {
        EoClass::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

/// Class parameters; ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassParams {
    /// Raw value range of bright cloud blobs.
    pub cloud_raw: [u16; 2],
    /// Fraction of pixels covered by bright cloud blobs.
    pub cloud_fraction: [f64; 2],
    /// Fraction of pixels carrying the QA opaque-cloud bit.
    pub qa_cloud_fraction: [f64; 2],
    /// V range (0–255 scale) of night tiles.
    pub night_v: [u8; 2],
    /// Fraction of zeroed columns in no-data tiles.
    pub nodata_fraction: [f64; 2],
    /// Minimum V of the valid part of no-data tiles.
    pub nodata_valid_v_min: u8,
    /// Base raw range of clean field palettes.
    pub clean_raw: [u16; 2],
    /// Gray level range of veil tiles (haze and QA cloud).
    pub veil_raw: [u16; 2],
}

impl Default for ClassParams {
    fn default() -> Self {
        Self {
            cloud_raw: [4600, 9000],
            cloud_fraction: [0.05, 0.5],
            qa_cloud_fraction: [0.2, 0.6],
            night_v: [0, 25],
            nodata_fraction: [0.2, 0.4],
            nodata_valid_v_min: 80,
            clean_raw: [1700, 3600],
            veil_raw: [3000, 3600],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub tile_size: u32,
    pub grid_cells: usize,
    pub sar_per_cell: usize,
    pub cloud_subset_count: usize,
    pub start_date: NaiveDate,
    /// Span of EO acquisition dates, in days from `start_date`.
    pub date_span_days: i64,
    pub counts: ClassCounts,
    pub params: ClassParams,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            tile_size: 256,
            grid_cells: 10,
            sar_per_cell: 30,
            cloud_subset_count: 50,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            date_span_days: 330,
            counts: ClassCounts::default(),
            params: ClassParams::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

/// Largest raw value whose 8-bit rendering stays ≤ `v`.
fn raw_for_v_max(v: u8) -> u16 {
    (((v as f64 + 0.5) * DEFAULT_RGB_SCALE).ceil() - 1.0) as u16
}

/// Smallest raw value whose 8-bit rendering is ≥ `v`.
fn raw_for_v_min(v: u8) -> u16 {
    ((v as f64 - 0.5) * DEFAULT_RGB_SCALE).ceil() as u16
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Checks that every class lands on its side of the default thresholds
    /// with the guard margin.
    pub fn validate(&self) -> Result<(), SynthError> {
        let p = &self.params;
        let ordered = |name: &str, lo: f64, hi: f64| {
            if lo <= hi {
                Ok(())
            } else {
                Err(invalid(format!("{name}: lower bound exceeds upper bound")))
            }
        };
        ordered("cloud_raw", p.cloud_raw[0] as f64, p.cloud_raw[1] as f64)?;
        ordered("cloud_fraction", p.cloud_fraction[0], p.cloud_fraction[1])?;
        ordered("qa_cloud_fraction", p.qa_cloud_fraction[0], p.qa_cloud_fraction[1])?;
        ordered("night_v", p.night_v[0] as f64, p.night_v[1] as f64)?;
        ordered("nodata_fraction", p.nodata_fraction[0], p.nodata_fraction[1])?;
        ordered("clean_raw", p.clean_raw[0] as f64, p.clean_raw[1] as f64)?;
        ordered("veil_raw", p.veil_raw[0] as f64, p.veil_raw[1] as f64)?;

        if self.tile_size < 64 {
            return Err(invalid("tile_size must be at least 64"));
        }
        if (p.cloud_raw[0] as f64) < ALPHA_GUARDED {
            return Err(invalid(format!("cloud_raw must start at or above {ALPHA_GUARDED}")));
        }
        if p.cloud_fraction[0] < BRIGHT_RATIO_GUARDED || p.cloud_fraction[1] > 0.9 {
            return Err(invalid(format!("cloud_fraction must lie in [{BRIGHT_RATIO_GUARDED}, 0.9]")));
        }
        if p.qa_cloud_fraction[0] <= 0.0 || p.qa_cloud_fraction[1] > 1.0 {
            return Err(invalid("qa_cloud_fraction must lie in (0, 1]"));
        }
        if p.night_v[1] as f64 > NIGHT_V_GUARDED {
            return Err(invalid(format!("night_v must stay at or below {NIGHT_V_GUARDED}")));
        }
        if p.nodata_fraction[0] < NODATA_RATIO_GUARDED {
            return Err(invalid(format!("nodata_fraction must start at or above {NODATA_RATIO_GUARDED}")));
        }
        if (1.0 - p.nodata_fraction[1]) * (p.nodata_valid_v_min as f64) < DAY_V_GUARDED {
            return Err(invalid("no-data tiles would be dark enough to trip the night rule"));
        }
        for (name, range) in [("clean_raw", p.clean_raw), ("veil_raw", p.veil_raw)] {
            if range[1] > CLEAN_RAW_MAX {
                return Err(invalid(format!("{name} must stay at or below {CLEAN_RAW_MAX}")));
            }
            if (range[0] as f64 / DEFAULT_RGB_SCALE) < DAY_V_GUARDED.max(NODATA_V_GUARDED) + 8.0 {
                return Err(invalid(format!("{name} is too dark for a daytime tile")));
            }
        }
        if self.cloud_subset_count == 0 || self.cloud_subset_count > self.counts.qa_cloud {
            return Err(invalid("cloud_subset_count must be between 1 and counts.qa_cloud"));
        }
        if self.grid_cells == 0 {
            return Err(invalid("grid_cells must be positive"));
        }
        if self.date_span_days < 0 {
            return Err(invalid("date_span_days must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub scene_id: String,
    pub class: EoClass,
    pub expected_stage: Stage,
    pub expected_rule: Option<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFile {
    pub prng: String,
    pub seed: u64,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub catalog: PathBuf,
    pub labels: PathBuf,
    pub cloud_subset: PathBuf,
    pub config: PathBuf,
    pub eo_scenes: usize,
    pub sar_scenes: usize,
}

fn uniform_u16(rng: &mut ChaCha8Rng, range: [u16; 2]) -> u16 {
    rng.random_range(range[0]..=range[1])
}

fn uniform_f64(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

fn eo_tile(size: u32, bands: [Vec<u16>; 3], qa: Vec<u16>) -> ImageTile {
    let [b2, b3, b4] = bands;
    let mut pixels = b2;
    pixels.extend(b3);
    pixels.extend(b4);
    pixels.extend(qa);
    let labels = EO_BANDS.iter().map(|s| s.to_string()).collect();
    ImageTile::new(size, size, BitDepth::Sixteen, labels, pixels).expect("painter keeps tile shape")
}

/// Two-palette mosaic of 16-pixel fields plus small pixel noise; every raw
/// value stays inside `clean_raw`.
fn paint_mosaic(rng: &mut ChaCha8Rng, size: u32, clean_raw: [u16; 2]) -> [Vec<u16>; 3] {
    const FIELD: u32 = 16;
    const NOISE: i32 = 60;
    let (lo, hi) = (clean_raw[0] as i32 + NOISE, clean_raw[1] as i32 - NOISE);
    let span = (hi - lo) as f64;
    // Palette A: vegetation-like (green dominant); palette B: brighter soil.
    let base = |rng: &mut ChaCha8Rng, lo_f: f64, hi_f: f64| lo + (span * rng.random_range(lo_f..hi_f)) as i32;
    let a = [base(rng, 0.08, 0.11), base(rng, 0.38, 0.41), base(rng, 0.13, 0.16)];
    let b = [base(rng, 0.73, 0.76), base(rng, 0.63, 0.66), base(rng, 0.53, 0.56)];
    let cells = size.div_ceil(FIELD) as usize;
    let choice: Vec<bool> = (0..cells * cells).map(|_| rng.random_bool(0.5)).collect();
    let n = (size * size) as usize;
    let mut out = [vec![0u16; n], vec![0u16; n], vec![0u16; n]];
    for y in 0..size {
        for x in 0..size {
            let cell = (y / FIELD) as usize * cells + (x / FIELD) as usize;
            let palette = if choice[cell] { &b } else { &a };
            let i = (y * size + x) as usize;
            // Band order B2 (blue), B3 (green), B4 (red).
            for (band, &level) in out.iter_mut().zip([palette[2], palette[1], palette[0]].iter()) {
                let v = level + rng.random_range(-NOISE..=NOISE);
                band[i] = v.clamp(clean_raw[0] as i32, clean_raw[1] as i32) as u16;
            }
        }
    }
    out
}

/// Smooth gray veil: a low-frequency wave around a gray level.
fn paint_veil(rng: &mut ChaCha8Rng, size: u32, veil_raw: [u16; 2]) -> [Vec<u16>; 3] {
    const AMPLITUDE: f64 = 60.0;
    let lo = veil_raw[0] as f64 + AMPLITUDE + 10.0;
    let hi = (veil_raw[1] as f64 - AMPLITUDE - 10.0).max(lo);
    let level = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let freq = std::f64::consts::TAU / size as f64;
    let n = (size * size) as usize;
    let mut plane = vec![0u16; n];
    for y in 0..size {
        for x in 0..size {
            let wave = AMPLITUDE * ((x as f64 * freq + phase).sin() * 0.6 + (y as f64 * freq * 0.5 + phase).cos() * 0.4);
            let v = level + wave + rng.random_range(-10.0..=10.0);
            plane[(y * size + x) as usize] = v.round().clamp(veil_raw[0] as f64, veil_raw[1] as f64) as u16;
        }
    }
    [plane.clone(), plane.clone(), plane]
}

/// Union of random discs covering about `fraction` of the tile; returns the
/// row-major membership mask with exactly `round(fraction·n)` members.
fn blob_mask(rng: &mut ChaCha8Rng, size: u32, fraction: f64) -> Vec<bool> {
    let n = (size * size) as usize;
    let target = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut score = vec![f64::INFINITY; n];
    let blobs = rng.random_range(2..=5);
    let centers: Vec<(f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(0.6..1.4),
            )
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let i = (y * size + x) as usize;
            for &(cx, cy, w) in &centers {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() * w;
                score[i] = score[i].min(d);
            }
        }
    }
    // Rank pixels by distance to the nearest blob center; ties by index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..target] {
        mask[i] = true;
    }
    mask
}

pub fn paint_eo(class: EoClass, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> ImageTile {
    let size = spec.tile_size;
    let p = &spec.params;
    let n = (size * size) as usize;
    let clear_qa = vec![0u16; n];
    match class {
        EoClass::Clean => eo_tile(size, paint_mosaic(rng, size, p.clean_raw), clear_qa),
        EoClass::Haze => eo_tile(size, paint_veil(rng, size, p.veil_raw), clear_qa),
        EoClass::QaCloud => {
            let bands = paint_veil(rng, size, p.veil_raw);
            let fraction = uniform_f64(rng, p.qa_cloud_fraction);
            let mask = blob_mask(rng, size, fraction);
            let qa = mask.iter().map(|&m| if m { QA_OPAQUE } else { 0 }).collect();
            eo_tile(size, bands, qa)
        }
        EoClass::BrightCloud => {
            let mut bands = paint_mosaic(rng, size, p.clean_raw);
            let fraction = uniform_f64(rng, p.cloud_fraction);
            let mask = blob_mask(rng, size, fraction);
            for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                let v = uniform_u16(rng, p.cloud_raw);
                for band in bands.iter_mut() {
                    band[i] = v;
                }
            }
            eo_tile(size, bands, clear_qa)
        }
        EoClass::Night => {
            let lo = if p.night_v[0] == 0 { 0 } else { raw_for_v_min(p.night_v[0]) };
            let hi = raw_for_v_max(p.night_v[1]);
            let mut bands = [vec![0u16; n], vec![0u16; n], vec![0u16; n]];
            for band in bands.iter_mut() {
                for v in band.iter_mut() {
                    *v = rng.random_range(lo..=hi);
                }
            }
            eo_tile(size, bands, clear_qa)
        }
        EoClass::Nodata => {
            let fraction = uniform_f64(rng, p.nodata_fraction);
            let zero_cols = ((fraction * size as f64).round() as u32).clamp(1, size - 1);
            let start = rng.random_range(0..=size - zero_cols);
            let lo = raw_for_v_min(p.nodata_valid_v_min);
            let hi = CLEAN_RAW_MAX;
            let mut bands = [vec![0u16; n], vec![0u16; n], vec![0u16; n]];
            for y in 0..size {
                for x in 0..size {
                    let i = (y * size + x) as usize;
                    let blank = (start..start + zero_cols).contains(&x);
                    for band in bands.iter_mut() {
                        band[i] = if blank { 0 } else { rng.random_range(lo..=hi) };
                    }
                }
            }
            eo_tile(size, bands, clear_qa)
        }
    }
}

/// Dual-polarization speckle: gamma-like multiplicative noise on a per-scene
/// backscatter level, with sparse saturated impulses.
pub fn paint_sar(size: u32, rng: &mut ChaCha8Rng) -> ImageTile {
    let n = (size * size) as usize;
    let vv_level = rng.random_range(800.0..2000.0);
    let vh_level = vv_level * rng.random_range(0.2..0.4);
    let mut pixels = vec![0u16; 2 * n];
    for i in 0..n {
        // Mean of four exponentials: 4-look speckle.
        let speckle = |rng: &mut ChaCha8Rng| {
            (0..4).map(|_| -(1.0 - rng.random::<f64>()).ln()).sum::<f64>() / 4.0
        };
        let impulse = rng.random_bool(0.002);
        pixels[i] = if impulse { 60000 } else { (vv_level * speckle(rng)).min(50000.0) as u16 };
        pixels[n + i] = if impulse { 60000 } else { (vh_level * speckle(rng)).min(50000.0) as u16 };
    }
    let labels = SAR_BANDS.iter().map(|s| s.to_string()).collect();
    ImageTile::new(size, size, BitDepth::Sixteen, labels, pixels).expect("painter keeps tile shape")
}

fn pipeline_toml() -> String {
    "[io]\ncatalog = \"catalog.csv\"\ncloud_subset = \"cloud_subset.txt\"\n\n\
     [rgb]\nbands = [\"B4\", \"B3\", \"B2\"]\n\n\
     [bridge]\ncommand = \"cp {in_dir}/* {out_dir}/\"\n"
        .to_string()
}

/// Writes `catalog.csv`, `tiles/`, `labels.json`, `cloud_subset.txt` and a
/// `pipeline.toml` using the defaults into `out`. Output bytes depend only on
/// the spec.
pub fn generate(spec: &SynthSpec, out: &Path) -> Result<Generated, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tiles = out.join("tiles");
    std::fs::create_dir_all(&tiles)?;

    let mut classes: Vec<EoClass> = EoClass::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, spec.counts.get(c)))
        .collect();
    classes.shuffle(&mut rng);

    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut cloud_subset = Vec::new();
    let cells: Vec<String> = (0..spec.grid_cells).map(|c| format!("T{c:02}")).collect();
    for (i, &class) in classes.iter().enumerate() {
        let scene_id = format!("eo_{i:05}");
        let tile_id = cells[rng.random_range(0..cells.len())].clone();
        let date = spec.start_date + Duration::days(rng.random_range(0..=spec.date_span_days));
        let tile = paint_eo(class, spec, &mut rng);
        let rel = PathBuf::from("tiles").join(format!("{scene_id}.tif"));
        std::fs::write(out.join(&rel), encode_tiff(&tile, TiffCompression::Deflate)?)?;
        if class == EoClass::QaCloud && cloud_subset.len() < spec.cloud_subset_count {
            cloud_subset.push(scene_id.clone());
        }
        records.push(SceneRecord {
            scene_id: scene_id.clone(),
            sensor: Sensor::Eo,
            tile_id,
            date,
            path: rel,
            bands: EO_BANDS.iter().map(|s| s.to_string()).collect(),
        });
        labels.push(Label {
            scene_id,
            class,
            expected_stage: class.expected_stage(),
            expected_rule: class.expected_rule(),
        });
    }

    let mut sar_count = 0;
    for tile_id in &cells {
        let phase = rng.random_range(0..SAR_REVISIT_DAYS);
        for k in 0..spec.sar_per_cell {
            let scene_id = format!("sar_{tile_id}_{k:03}");
            let date = spec.start_date + Duration::days(phase + k as i64 * SAR_REVISIT_DAYS - 30);
            let tile = paint_sar(spec.tile_size, &mut rng);
            let rel = PathBuf::from("tiles").join(format!("{scene_id}.tif"));
            std::fs::write(out.join(&rel), encode_tiff(&tile, TiffCompression::Deflate)?)?;
            records.push(SceneRecord {
                scene_id,
                sensor: Sensor::Sar,
                tile_id: tile_id.clone(),
                date,
                path: rel,
                bands: SAR_BANDS.iter().map(|s| s.to_string()).collect(),
            });
            sar_count += 1;
        }
    }

    let generated = Generated {
        catalog: out.join("catalog.csv"),
        labels: out.join("labels.json"),
        cloud_subset: out.join("cloud_subset.txt"),
        config: out.join("pipeline.toml"),
        eo_scenes: labels.len(),
        sar_scenes: sar_count,
    };
    crate::catalog::sort_records(&mut records);
    std::fs::write(&generated.catalog, catalog_to_csv(&records))?;
    let label_file = LabelFile {
        prng: PRNG_NAME.into(),
        seed: spec.seed,
        labels,
    };
    let json = serde_json::to_string_pretty(&label_file).expect("labels serialize");
    std::fs::write(&generated.labels, json + "\n")?;
    std::fs::write(&generated.cloud_subset, cloud_subset.join("\n") + "\n")?;
    std::fs::write(&generated.config, pipeline_toml())?;
    Ok(generated)
}

pub fn read_labels(path: &Path) -> Result<LabelFile, SynthError> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| invalid(format!("bad label file: {e}")))
}
