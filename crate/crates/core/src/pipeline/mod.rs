//! End-to-end orchestration through on-disk manifests.
//!
//! Stages run in a fixed order and talk only through JSON manifests in the
//! output directory:
//!
//! | stage       | reads                         | writes                                    |
//! |-------------|-------------------------------|-------------------------------------------|
//! | `ingest`    | catalog                       | `ingest.json`                             |
//! | `filter`    | `ingest.json`                 | `filter.json`                             |
//! | `score`     | `ingest.json`, `filter.json`  | `score.json`, `score_report.json`         |
//! | `pair`      | `ingest.json`, `filter.json`, `score.json` | `pairs.json`, `pairs.csv`    |
//! | `prep`      | `ingest.json`, `pairs.json`   | `prep.json`, `prep/`                      |
//! | `translate` | `prep.json`                   | `bridge.json`, `bridge/`                  |
//! | `eval`      | `pairs.json`, `prep.json`, `bridge.json` | `eval.json`                    |
//!
//! Every stage also writes `reports/<stage>.json`. All files are written to a
//! temporary file and renamed into place. Manifests carry the config
//! fingerprint and hold no timing, so reruns produce identical bytes; timing
//! lives only in the stage reports.

pub mod bridge;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{load_catalog, SceneRecord, Sensor};
use crate::config::{BridgeFormat, ConfigError, PipelineConfig};
use crate::digest::sha256_hex;
use crate::eval::{eval_grouped, EvalGroup, EvalReport, LabeledImage};
use crate::filters::{stage1_filter, stage2_filter, to_rgb8, FilterVerdict, Rule};
use crate::frechet::external::ExternalFeatures;
use crate::frechet::features::HANDCRAFTED_EXTRACTOR_ID;
use crate::frechet::threshold::Extractor;
use crate::frechet::{
    handcrafted_patch_features, patch_accumulator, stage3_filter, stage3_threshold, FeatureVector, FrechetReference,
    ScoreSet, StatsAccumulator, Threshold,
};
use crate::pairing::{build_pairs, PairManifest, StageCounts, StageTally};
use crate::raster::{decode_qa_mask, ImageTile, RealImage};
use crate::rasterio::{encode_float_tiff, encode_png, load_tile, read_real_image};
use crate::sar::{prepare_sar, preview_rgb8};

use bridge::{bridge_translate, BridgeError, BridgeInput, BridgeItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Ingest,
    Filter,
    Score,
    Pair,
    Prep,
    Translate,
    Eval,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 7] = [
        PipelineStage::Ingest,
        PipelineStage::Filter,
        PipelineStage::Score,
        PipelineStage::Pair,
        PipelineStage::Prep,
        PipelineStage::Translate,
        PipelineStage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::Ingest => "ingest",
            PipelineStage::Filter => "filter",
            PipelineStage::Score => "score",
            PipelineStage::Pair => "pair",
            PipelineStage::Prep => "prep",
            PipelineStage::Translate => "translate",
            PipelineStage::Eval => "eval",
        }
    }

    /// The manifest whose presence marks the stage complete.
    pub fn manifest(self) -> &'static str {
        match self {
            PipelineStage::Ingest => "ingest.json",
            PipelineStage::Filter => "filter.json",
            PipelineStage::Score => "score.json",
            PipelineStage::Pair => "pairs.json",
            PipelineStage::Prep => "prep.json",
            PipelineStage::Translate => "bridge.json",
            PipelineStage::Eval => "eval.json",
        }
    }
}

impl std::fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PipelineStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = match s {
            "stage1" | "stage2" => "filter",
            "stage3" => "score",
            other => other,
        };
        PipelineStage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` needs `{}`, which is missing; run the upstream stage first", path.display())]
    MissingUpstreamManifest { stage: PipelineStage, path: PathBuf },
    #[error("`{}` was produced under config {found}, current config is {expected}", path.display())]
    StaleManifest { path: PathBuf, expected: String, found: String },
    #[error("stage `{stage}` failed on `{scene_id}`: {message}")]
    StageFailure { stage: PipelineStage, scene_id: String, message: String },
    #[error("I/O error on `{}`: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

impl PipelineError {
    /// 2 config error, 3 data error, 4 external command failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Bridge(BridgeError::BadTemplate) => 2,
            PipelineError::Bridge(_) => 4,
            _ => 3,
        }
    }
}

fn failure(stage: PipelineStage, scene_id: &str, e: impl ToString) -> PipelineError {
    PipelineError::StageFailure {
        stage,
        scene_id: scene_id.to_string(),
        message: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("manifest serializes");
    s.push('\n');
    s.into_bytes()
}

/// Per-stage counts and timing, written to `reports/<stage>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: PipelineStage,
    pub input: usize,
    pub kept: usize,
    pub dropped: BTreeMap<Rule, usize>,
    pub wall_time_s: f64,
    pub throughput_per_s: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub config_fingerprint: String,
    pub eo_count: usize,
    pub sar_count: usize,
    pub records: Vec<SceneRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub config_fingerprint: String,
    pub stage1: StageTally,
    pub stage2: StageTally,
    /// One verdict per EO scene, in catalog order.
    pub verdicts: Vec<FilterVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub scenes: Vec<String>,
    pub patches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreManifest {
    pub config_fingerprint: String,
    pub extractor_id: String,
    pub reference: ReferenceSummary,
    /// Absent when no scene survived stages 1 and 2.
    pub threshold: Option<Threshold>,
    pub stage3: StageTally,
    pub verdicts: Vec<FilterVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReportEntry {
    pub scene_id: String,
    pub score: f64,
    pub kept: bool,
    pub f_th_literal: f64,
    pub f_th_interp: f64,
    pub extractor_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepItem {
    pub scene_id: String,
    pub sensor: Sensor,
    /// 32-bit float TIFF, relative to the output directory (SAR only).
    pub tiff: Option<PathBuf>,
    /// 8-bit PNG, relative to the output directory.
    pub png: PathBuf,
    pub tiff_sha256: Option<String>,
    pub png_sha256: String,
    pub degenerate_planes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepManifest {
    pub config_fingerprint: String,
    /// Normalized SAR inputs, then EO references, each in scene-id order.
    pub items: Vec<PrepItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeManifest {
    pub config_fingerprint: String,
    pub command_template: String,
    pub input_format: BridgeFormat,
    /// Paths relative to `bridge/`.
    pub items: Vec<BridgeItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub config_fingerprint: String,
    pub report: EvalReport,
}

fn tally(verdicts: &[FilterVerdict]) -> StageTally {
    let mut t = StageTally {
        input: verdicts.len(),
        ..StageTally::default()
    };
    for v in verdicts {
        match v.rule {
            None => t.kept += 1,
            Some(rule) => *t.dropped.entry(rule).or_default() += 1,
        }
    }
    t
}

/// Cloud subset list: one scene id per line, `#` comments and blanks ignored.
pub fn parse_scene_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Inclusive stage range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRange {
    pub from: PipelineStage,
    pub to: PipelineStage,
}

impl StageRange {
    pub fn single(stage: PipelineStage) -> Self {
        Self { from: stage, to: stage }
    }

    pub fn stages(&self) -> impl Iterator<Item = PipelineStage> + '_ {
        PipelineStage::ALL.into_iter().filter(|s| (self.from..=self.to).contains(s))
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    fingerprint: String,
    out: PathBuf,
    pool: rayon::ThreadPool,
    workers: usize,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build()
            .map_err(|e| ConfigError::Invalid(format!("cannot start worker pool: {e}")))?;
        let workers = pool.current_num_threads();
        Ok(Self {
            fingerprint: cfg.fingerprint(),
            cfg,
            out: out.into(),
            pool,
            workers,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out.join(name)
    }

    fn read_upstream<T: DeserializeOwned>(&self, stage: PipelineStage, upstream: PipelineStage) -> Result<T, PipelineError> {
        let path = self.path(upstream.manifest());
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(PipelineError::MissingUpstreamManifest { stage, path })
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| failure(stage, upstream.manifest(), e))?;
        let found = value.get("config_fingerprint").and_then(|v| v.as_str()).unwrap_or_default();
        if found != self.fingerprint {
            return Err(PipelineError::StaleManifest {
                path,
                expected: self.fingerprint.clone(),
                found: found.to_string(),
            });
        }
        serde_json::from_value(value).map_err(|e| failure(stage, upstream.manifest(), e))
    }

    /// True when the stage manifest exists and matches the current config.
    pub fn is_complete(&self, stage: PipelineStage) -> bool {
        let Ok(text) = std::fs::read_to_string(self.path(stage.manifest())) else {
            return false;
        };
        serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get("config_fingerprint").and_then(|f| f.as_str()).map(|f| f == self.fingerprint))
            .unwrap_or(false)
    }

    fn finish_stage(
        &self,
        stage: PipelineStage,
        started: Instant,
        input: usize,
        kept: usize,
        dropped: BTreeMap<Rule, usize>,
    ) -> Result<StageReport, PipelineError> {
        let wall = started.elapsed().as_secs_f64();
        let report = StageReport {
            stage,
            input,
            kept,
            dropped,
            wall_time_s: wall,
            throughput_per_s: if wall > 0.0 { input as f64 / wall } else { 0.0 },
            workers: self.workers,
        };
        write_atomic(&self.path(format!("reports/{}.json", stage.name())), &to_json(&report))?;
        tracing::info!(stage = stage.name(), input, kept, wall_s = wall, "stage complete");
        Ok(report)
    }

    pub fn run_stage(&self, stage: PipelineStage) -> Result<StageReport, PipelineError> {
        tracing::info!(stage = stage.name(), workers = self.workers, "stage start");
        match stage {
            PipelineStage::Ingest => self.ingest(),
            PipelineStage::Filter => self.filter(),
            PipelineStage::Score => self.score(),
            PipelineStage::Pair => self.pair(),
            PipelineStage::Prep => self.prep(),
            PipelineStage::Translate => self.translate(),
            PipelineStage::Eval => self.eval(),
        }
    }

    /// Runs the range in order. With `resume`, stages whose manifest already
    /// matches the config are skipped.
    pub fn run(&self, range: StageRange, resume: bool) -> Result<Vec<StageReport>, PipelineError> {
        let mut reports = Vec::new();
        for stage in range.stages() {
            if resume && self.is_complete(stage) {
                tracing::info!(stage = stage.name(), "already complete, skipping");
                continue;
            }
            reports.push(self.run_stage(stage)?);
        }
        Ok(reports)
    }

    fn ingest(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Ingest;
        let catalog = self
            .cfg
            .io
            .catalog
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("io.catalog is required".into()))?;
        let records = load_catalog(catalog).map_err(|e| failure(stage, &catalog.display().to_string(), e))?;
        let eo_count = records.iter().filter(|r| r.sensor == Sensor::Eo).count();
        let manifest = IngestManifest {
            config_fingerprint: self.fingerprint.clone(),
            eo_count,
            sar_count: records.len() - eo_count,
            records,
        };
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        let n = manifest.records.len();
        self.finish_stage(stage, started, n, n, BTreeMap::new())
    }

    fn load(&self, stage: PipelineStage, record: &SceneRecord) -> Result<ImageTile, PipelineError> {
        load_tile(record).map_err(|e| failure(stage, &record.scene_id, e))
    }

    fn rgb8(&self, stage: PipelineStage, record: &SceneRecord, tile: &ImageTile) -> Result<ImageTile, PipelineError> {
        to_rgb8(tile, &self.cfg.rgb.bands, self.cfg.rgb.scale).map_err(|e| failure(stage, &record.scene_id, e))
    }

    fn filter_one(&self, record: &SceneRecord) -> Result<FilterVerdict, PipelineError> {
        let stage = PipelineStage::Filter;
        let fail = |e: &dyn std::fmt::Display| failure(stage, &record.scene_id, e);
        let tile = self.load(stage, record)?;
        let spectral = tile.select_bands(&record.spectral_bands()).map_err(|e| fail(&e))?;
        let qa = match record.qa_band() {
            Some(label) => {
                let band = tile.select_bands(&[label]).map_err(|e| fail(&e))?;
                Some(decode_qa_mask(&band, &self.cfg.qa.cloud_bits).map_err(|e| fail(&e))?)
            }
            None => None,
        };
        let v1 = stage1_filter(&record.scene_id, &spectral, qa.as_ref(), &self.cfg.stage1).map_err(|e| fail(&e))?;
        if !v1.kept {
            return Ok(v1);
        }
        let rgb = self.rgb8(stage, record, &tile)?;
        stage2_filter(&record.scene_id, &rgb, &self.cfg.stage2).map_err(|e| fail(&e))
    }

    fn filter(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Filter;
        let ingest: IngestManifest = self.read_upstream(stage, PipelineStage::Ingest)?;
        let eo: Vec<&SceneRecord> = ingest.records.iter().filter(|r| r.sensor == Sensor::Eo).collect();
        let verdicts = self
            .pool
            .install(|| eo.par_iter().map(|r| self.filter_one(r)).collect::<Result<Vec<_>, _>>())?;

        let stage1 = tally(
            &verdicts
                .iter()
                .map(|v| match v.rule {
                    Some(r) if r.stage() == crate::filters::Stage::Stage1 => v.clone(),
                    _ => FilterVerdict::kept(v.scene_id.clone(), 0.0),
                })
                .collect::<Vec<_>>(),
        );
        let stage2 = tally(
            &verdicts
                .iter()
                .filter(|v| v.rule.is_none_or(|r| r.stage() != crate::filters::Stage::Stage1))
                .cloned()
                .collect::<Vec<_>>(),
        );
        let manifest = FilterManifest {
            config_fingerprint: self.fingerprint.clone(),
            stage1,
            stage2,
            verdicts,
        };
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        let mut dropped = manifest.stage1.dropped.clone();
        dropped.extend(manifest.stage2.dropped.iter().map(|(k, v)| (*k, *v)));
        self.finish_stage(stage, started, eo.len(), manifest.stage2.kept, dropped)
    }

    fn patch_features(
        &self,
        record: &SceneRecord,
        external: Option<&ExternalFeatures>,
    ) -> Result<Vec<FeatureVector>, PipelineError> {
        let stage = PipelineStage::Score;
        match external {
            Some(ext) => ext
                .features_for(&record.scene_id)
                .ok_or_else(|| failure(stage, &record.scene_id, "scene missing from external feature index"))?
                .map_err(|e| failure(stage, &record.scene_id, e)),
            None => {
                let tile = self.load(stage, record)?;
                let rgb = self.rgb8(stage, record, &tile)?;
                handcrafted_patch_features(&rgb, self.cfg.stage3.patch_size).map_err(|e| failure(stage, &record.scene_id, e))
            }
        }
    }

    fn accumulator(
        &self,
        record: &SceneRecord,
        external: Option<&ExternalFeatures>,
        dim: usize,
    ) -> Result<StatsAccumulator, PipelineError> {
        let features = self.patch_features(record, external)?;
        if features.is_empty() {
            return Err(failure(PipelineStage::Score, &record.scene_id, "no patch features"));
        }
        patch_accumulator(&features, dim).map_err(|e| failure(PipelineStage::Score, &record.scene_id, e))
    }

    fn score(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Score;
        let ingest: IngestManifest = self.read_upstream(stage, PipelineStage::Ingest)?;
        let filter: FilterManifest = self.read_upstream(stage, PipelineStage::Filter)?;
        let by_id: BTreeMap<&str, &SceneRecord> = ingest.records.iter().map(|r| (r.scene_id.as_str(), r)).collect();

        let external = match self.cfg.stage3.extractor {
            Extractor::ExternalFeatures => {
                let (f, i) = (
                    self.cfg.stage3.external_features.as_ref().expect("validated"),
                    self.cfg.stage3.external_index.as_ref().expect("validated"),
                );
                Some(ExternalFeatures::load(f, i).map_err(|e| failure(stage, &f.display().to_string(), e))?)
            }
            Extractor::Handcrafted => None,
        };
        let (dim, extractor_id) = match &external {
            Some(ext) => (ext.dim(), ext.extractor_id()),
            None => (crate::frechet::features::HANDCRAFTED_DIM, HANDCRAFTED_EXTRACTOR_ID.to_string()),
        };

        let subset_path = self
            .cfg
            .io
            .cloud_subset
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("io.cloud_subset is required for stage 3".into()))?;
        let subset = parse_scene_list(&std::fs::read_to_string(subset_path).map_err(io_err(subset_path))?);
        let subset_records = subset
            .iter()
            .map(|id| match by_id.get(id.as_str()) {
                Some(r) if r.sensor == Sensor::Eo => Ok(*r),
                _ => Err(failure(stage, id, "cloud subset scene is not an EO scene of the catalog")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if subset_records.is_empty() {
            return Err(ConfigError::Invalid("cloud subset is empty".into()).into());
        }

        let survivors: Vec<&SceneRecord> = filter
            .verdicts
            .iter()
            .filter(|v| v.kept)
            .map(|v| by_id[v.scene_id.as_str()])
            .collect();

        let (reference, scored) = self.pool.install(|| {
            let partials = subset_records
                .par_iter()
                .map(|r| self.accumulator(r, external.as_ref(), dim))
                .collect::<Result<Vec<_>, _>>()?;
            let mut pooled = StatsAccumulator::new(dim);
            for p in &partials {
                pooled.merge(p).map_err(|e| failure(stage, "cloud subset", e))?;
            }
            let stats = pooled.finish().map_err(|e| failure(stage, "cloud subset", e))?;
            let reference = FrechetReference::new(stats, self.cfg.stage3.epsilon_reg)
                .map_err(|e| failure(stage, "cloud subset", e))?;
            let scored = survivors
                .par_iter()
                .map(|r| {
                    let stats = self
                        .accumulator(r, external.as_ref(), dim)?
                        .finish()
                        .map_err(|e| failure(stage, &r.scene_id, e))?;
                    let score = reference.distance(&stats).map_err(|e| failure(stage, &r.scene_id, e))?;
                    Ok((r.scene_id.clone(), score))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok::<_, PipelineError>((reference, scored))
        })?;

        let mut scores = ScoreSet::new();
        for (id, s) in &scored {
            scores.insert(id.clone(), *s).map_err(|e| failure(stage, id, e))?;
        }
        let threshold = if scores.is_empty() {
            None
        } else {
            Some(stage3_threshold(&scores, &self.cfg.stage3).map_err(|e| failure(stage, "score set", e))?)
        };
        let verdicts: Vec<FilterVerdict> = scored
            .iter()
            .map(|(id, s)| stage3_filter(id, *s, threshold.map_or(0.0, |t| t.selected)))
            .collect();
        let report: Vec<ScoreReportEntry> = verdicts
            .iter()
            .map(|v| ScoreReportEntry {
                scene_id: v.scene_id.clone(),
                score: v.statistic,
                kept: v.kept,
                f_th_literal: threshold.map_or(0.0, |t| t.literal),
                f_th_interp: threshold.map_or(0.0, |t| t.interpolation),
                extractor_id: extractor_id.clone(),
            })
            .collect();
        let manifest = ScoreManifest {
            config_fingerprint: self.fingerprint.clone(),
            extractor_id,
            reference: ReferenceSummary {
                scenes: subset,
                patches: reference.stats().n,
            },
            threshold,
            stage3: tally(&verdicts),
            verdicts,
        };
        write_atomic(&self.path("score_report.json"), &to_json(&report))?;
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        self.finish_stage(stage, started, manifest.stage3.input, manifest.stage3.kept, manifest.stage3.dropped.clone())
    }

    fn pair(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Pair;
        let ingest: IngestManifest = self.read_upstream(stage, PipelineStage::Ingest)?;
        let filter: FilterManifest = self.read_upstream(stage, PipelineStage::Filter)?;
        let score: ScoreManifest = self.read_upstream(stage, PipelineStage::Score)?;
        let clean: BTreeSet<&str> = score.verdicts.iter().filter(|v| v.kept).map(|v| v.scene_id.as_str()).collect();
        let clean_eo: Vec<SceneRecord> = ingest
            .records
            .iter()
            .filter(|r| r.sensor == Sensor::Eo && clean.contains(r.scene_id.as_str()))
            .cloned()
            .collect();
        let sar: Vec<SceneRecord> = ingest.records.iter().filter(|r| r.sensor == Sensor::Sar).cloned().collect();
        let pairs = self
            .pool
            .install(|| build_pairs(&clean_eo, &sar, self.cfg.pair.window_days, self.cfg.pair.max_pairs_per_eo))
            .map_err(|e| failure(stage, "catalog", e))?;
        let manifest = PairManifest {
            config_fingerprint: self.fingerprint.clone(),
            stage_counts: StageCounts {
                input_eo: ingest.eo_count,
                stage1: filter.stage1,
                stage2: filter.stage2,
                stage3: score.stage3,
                clean_eo: clean_eo.len(),
            },
            pairs,
        };
        debug_assert!(manifest.stage_counts.reconciles());
        write_atomic(&self.path("pairs.csv"), manifest.to_csv().as_bytes())?;
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        self.finish_stage(stage, started, clean_eo.len(), manifest.pairs.len(), BTreeMap::new())
    }

    fn prep_sar(&self, record: &SceneRecord) -> Result<(PrepItem, Vec<u8>, Vec<u8>), PipelineError> {
        let stage = PipelineStage::Prep;
        let tile = self.load(stage, record)?;
        let normalized = prepare_sar(&tile, &self.cfg.sar, &self.cfg.norm).map_err(|e| failure(stage, &record.scene_id, e))?;
        if !normalized.degenerate_planes.is_empty() {
            tracing::warn!(scene = %record.scene_id, planes = ?normalized.degenerate_planes, "degenerate SAR planes mapped to 0");
        }
        let tiff = encode_float_tiff(&normalized.image).map_err(|e| failure(stage, &record.scene_id, e))?;
        let preview = preview_rgb8(&normalized.image).map_err(|e| failure(stage, &record.scene_id, e))?;
        let png = encode_png(&preview).map_err(|e| failure(stage, &record.scene_id, e))?;
        let item = PrepItem {
            scene_id: record.scene_id.clone(),
            sensor: Sensor::Sar,
            tiff: Some(PathBuf::from(format!("prep/sar/{}.tif", record.scene_id))),
            png: PathBuf::from(format!("prep/sar/{}.png", record.scene_id)),
            tiff_sha256: Some(sha256_hex(&tiff)),
            png_sha256: sha256_hex(&png),
            degenerate_planes: normalized.degenerate_planes,
        };
        Ok((item, tiff, png))
    }

    fn prep_eo(&self, record: &SceneRecord) -> Result<(PrepItem, Vec<u8>), PipelineError> {
        let stage = PipelineStage::Prep;
        let tile = self.load(stage, record)?;
        let rgb = self.rgb8(stage, record, &tile)?;
        let png = encode_png(&rgb).map_err(|e| failure(stage, &record.scene_id, e))?;
        let item = PrepItem {
            scene_id: record.scene_id.clone(),
            sensor: Sensor::Eo,
            tiff: None,
            png: PathBuf::from(format!("prep/eo/{}.png", record.scene_id)),
            tiff_sha256: None,
            png_sha256: sha256_hex(&png),
            degenerate_planes: Vec::new(),
        };
        Ok((item, png))
    }

    fn prep(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Prep;
        let ingest: IngestManifest = self.read_upstream(stage, PipelineStage::Ingest)?;
        let pairs: PairManifest = self.read_upstream(stage, PipelineStage::Pair)?;
        let by_id: BTreeMap<&str, &SceneRecord> = ingest.records.iter().map(|r| (r.scene_id.as_str(), r)).collect();
        let sar_ids: BTreeSet<&str> = pairs.pairs.iter().map(|p| p.sar_scene_id.as_str()).collect();
        let eo_ids: BTreeSet<&str> = pairs.pairs.iter().map(|p| p.eo_scene_id.as_str()).collect();
        let lookup = |id: &str| by_id.get(id).copied().ok_or_else(|| failure(stage, id, "scene not in ingest manifest"));
        let sar: Vec<&SceneRecord> = sar_ids.iter().map(|id| lookup(id)).collect::<Result<_, _>>()?;
        let eo: Vec<&SceneRecord> = eo_ids.iter().map(|id| lookup(id)).collect::<Result<_, _>>()?;

        let items = self.pool.install(|| {
            let mut items = sar
                .par_iter()
                .map(|r| {
                    let (item, tiff, png) = self.prep_sar(r)?;
                    write_atomic(&self.path(item.tiff.as_ref().expect("SAR items carry a TIFF")), &tiff)?;
                    write_atomic(&self.path(&item.png), &png)?;
                    Ok(item)
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            items.extend(
                eo.par_iter()
                    .map(|r| {
                        let (item, png) = self.prep_eo(r)?;
                        write_atomic(&self.path(&item.png), &png)?;
                        Ok(item)
                    })
                    .collect::<Result<Vec<_>, PipelineError>>()?,
            );
            Ok::<_, PipelineError>(items)
        })?;
        let manifest = PrepManifest {
            config_fingerprint: self.fingerprint.clone(),
            items,
        };
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        let n = manifest.items.len();
        self.finish_stage(stage, started, n, n, BTreeMap::new())
    }

    fn translate(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Translate;
        let template = self
            .cfg
            .bridge
            .command
            .clone()
            .ok_or_else(|| ConfigError::Invalid("bridge.command is required for translate".into()))?;
        let prep: PrepManifest = self.read_upstream(stage, PipelineStage::Prep)?;
        let format = self.cfg.bridge.input_format;
        let inputs: Vec<BridgeInput> = prep
            .items
            .iter()
            .filter(|i| i.sensor == Sensor::Sar)
            .map(|i| BridgeInput {
                scene_id: i.scene_id.clone(),
                source: self.path(match format {
                    BridgeFormat::Png => &i.png,
                    BridgeFormat::Tiff => i.tiff.as_ref().expect("SAR items carry a TIFF"),
                }),
            })
            .collect();
        let outcome = bridge_translate(&inputs, &template, &self.path("bridge"), format.extension())?;
        let log = format!(
            "command: {}\n--- stdout ---\n{}\n--- stderr ---\n{}\n",
            outcome.command, outcome.stdout, outcome.stderr
        );
        write_atomic(&self.path("bridge/log.txt"), log.as_bytes())?;
        let manifest = BridgeManifest {
            config_fingerprint: self.fingerprint.clone(),
            command_template: template,
            input_format: format,
            items: outcome.items,
        };
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        let n = manifest.items.len();
        self.finish_stage(stage, started, n, n, BTreeMap::new())
    }

    /// Model outputs in [0, 1]: PNGs are divided by their bit-depth maximum,
    /// float TIFFs follow the [−1, 1] input convention and are mapped back.
    fn load_output(&self, path: &Path, format: BridgeFormat) -> Result<RealImage, PipelineError> {
        let stage = PipelineStage::Eval;
        let image = read_real_image(path).map_err(|e| failure(stage, &path.display().to_string(), e))?;
        Ok(match format {
            BridgeFormat::Png => image,
            BridgeFormat::Tiff => RealImage::new(
                image
                    .into_planes()
                    .into_iter()
                    .map(|p| p.map(|x| ((x + 1.0) / 2.0).clamp(0.0, 1.0)))
                    .collect(),
            )
            .expect("planes keep their shape"),
        })
    }

    fn eval(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let stage = PipelineStage::Eval;
        let pairs: PairManifest = self.read_upstream(stage, PipelineStage::Pair)?;
        let prep: PrepManifest = self.read_upstream(stage, PipelineStage::Prep)?;
        let bridge: BridgeManifest = self.read_upstream(stage, PipelineStage::Translate)?;
        let outputs: BTreeMap<&str, &BridgeItem> = bridge.items.iter().map(|i| (i.scene_id.as_str(), i)).collect();
        let references: BTreeMap<&str, &PrepItem> = prep
            .items
            .iter()
            .filter(|i| i.sensor == Sensor::Eo)
            .map(|i| (i.scene_id.as_str(), i))
            .collect();

        let mut wanted: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for p in &pairs.pairs {
            wanted.entry(&p.eo_scene_id).or_default().push(&p.sar_scene_id);
        }
        let groups = self.pool.install(|| {
            wanted
                .par_iter()
                .map(|(eo, sars)| {
                    let reference = references.get(eo).ok_or_else(|| failure(stage, eo, "no prepared reference"))?;
                    let reference = read_real_image(&self.path(&reference.png)).map_err(|e| failure(stage, eo, e))?;
                    let outs = sars
                        .iter()
                        .map(|sar| {
                            let item = outputs.get(sar).ok_or_else(|| failure(stage, sar, "no bridge output"))?;
                            let image = self.load_output(&self.path("bridge").join(&item.output), bridge.input_format)?;
                            Ok(LabeledImage::new(*sar, image))
                        })
                        .collect::<Result<Vec<_>, PipelineError>>()?;
                    Ok((
                        eo.to_string(),
                        EvalGroup {
                            outputs: outs,
                            references: vec![LabeledImage::new(*eo, reference)],
                        },
                    ))
                })
                .collect::<Result<BTreeMap<_, _>, PipelineError>>()
        })?;
        let report = if groups.is_empty() {
            None
        } else {
            Some(self.pool.install(|| eval_grouped(&groups, self.cfg.eval.norm)).map_err(|e| failure(stage, "eval", e))?)
        };
        let Some(report) = report else {
            return Err(failure(stage, "pairs", "no pairs to evaluate"));
        };
        let manifest = EvalManifest {
            config_fingerprint: self.fingerprint.clone(),
            report,
        };
        write_atomic(&self.path(stage.manifest()), &to_json(&manifest))?;
        let n = manifest.report.per_reference.len();
        self.finish_stage(stage, started, n, n, BTreeMap::new())
    }
}

/// Reads every `reports/<stage>.json` present under `out`, in stage order.
pub fn read_reports(out: &Path) -> Result<Vec<StageReport>, PipelineError> {
    let mut reports = Vec::new();
    for stage in PipelineStage::ALL {
        let path = out.join(format!("reports/{}.json", stage.name()));
        match std::fs::read_to_string(&path) {
            Ok(text) => reports.push(serde_json::from_str(&text).map_err(|e| failure(stage, "report", e))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&path)(e)),
        }
    }
    Ok(reports)
}
