//! Pipeline configuration.
//!
//! A TOML document with one table per concern. Every table rejects unknown
//! keys so that a misspelt threshold is an error rather than a silent default.
//!
//! ```toml
//! [io]
//! catalog = "catalog.csv"          # relative to this file
//! cloud_subset = "cloud_subset.txt"
//!
//! [qa]
//! cloud_bits = [10, 11]
//!
//! [stage1]
//! alpha = 4096
//! bright_pixel_ratio = 0.01
//! qa_cloud_ratio = 0.0
//!
//! [stage2]
//! brightness_threshold = 30.0
//! nodata_value_threshold = 10
//! nodata_ratio = 0.1
//!
//! [rgb]
//! bands = ["B4", "B3", "B2"]
//! scale = 39.21568627
//!
//! [stage3]
//! beta = 0.4
//! threshold_form = "literal_eq1"   # or "interpolation"
//! patch_size = 64
//! extractor = "handcrafted"        # or "external_features"
//! epsilon_reg = 1e-6
//!
//! [sar]
//! recipe = "vv_vh_avg"             # or "custom: vv; vh; vv - vh"
//! median_k = 3
//!
//! [norm]
//! variant = "dataset1_minmax"      # or "dataset2_tanh"
//! minmax_mode = "per_image"        # or "global_from_config"
//!
//! [pair]
//! window_days = 30
//! # max_pairs_per_eo = 2
//!
//! [bridge]
//! command = "cp {in_dir}/* {out_dir}/"
//! input_format = "png"             # or "tiff"
//!
//! [eval]
//! norm = "meanabs"
//!
//! [run]
//! workers = 4                      # 0 = all cores
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::eval::DistanceNorm;
use crate::filters::{Stage1Config, Stage2Config, DEFAULT_RGB_SCALE};
use crate::frechet::Stage3Config;
use crate::pairing::DEFAULT_WINDOW_DAYS;
use crate::raster::DEFAULT_CLOUD_BITS;
use crate::sar::{NormalizationSpec, SarConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub catalog: Option<PathBuf>,
    /// Scene ids of the cloud reference set, one per line.
    pub cloud_subset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub cloud_bits: Vec<u8>,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            cloud_bits: DEFAULT_CLOUD_BITS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgbConfig {
    pub bands: [String; 3],
    pub scale: f64,
}

impl Default for RgbConfig {
    fn default() -> Self {
        Self {
            bands: ["B4".into(), "B3".into(), "B2".into()],
            scale: DEFAULT_RGB_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub window_days: i64,
    pub max_pairs_per_eo: Option<usize>,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            window_days: DEFAULT_WINDOW_DAYS,
            max_pairs_per_eo: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeFormat {
    #[default]
    Png,
    Tiff,
}

impl BridgeFormat {
    pub fn extension(self) -> &'static str {
        match self {
            BridgeFormat::Png => "png",
            BridgeFormat::Tiff => "tif",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Shell command template with `{in_dir}` and `{out_dir}` placeholders.
    pub command: Option<String>,
    pub input_format: BridgeFormat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub norm: DistanceNorm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub io: IoConfig,
    pub qa: QaConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub rgb: RgbConfig,
    pub stage3: Stage3Config,
    pub sar: SarConfig,
    pub norm: NormalizationSpec,
    pub pair: PairConfig,
    pub bridge: BridgeConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

fn invalid(e: impl ToString) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl PipelineConfig {
    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
        Self::from_toml_str(&text, &base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.io.catalog,
            &mut self.io.cloud_subset,
            &mut self.stage3.external_features,
            &mut self.stage3.external_index,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.stage1.validate().map_err(invalid)?;
        self.stage2.validate().map_err(invalid)?;
        self.stage3.validate().map_err(invalid)?;
        self.norm.validate().map_err(invalid)?;
        if let Some(&bit) = self.qa.cloud_bits.iter().find(|&&b| b > 15) {
            return Err(invalid(format!("qa.cloud_bits: bit {bit} exceeds 15")));
        }
        if !(self.rgb.scale > 0.0 && self.rgb.scale.is_finite()) {
            return Err(invalid("rgb.scale must be positive"));
        }
        if self.sar.median_k < 3 || self.sar.median_k.is_multiple_of(2) {
            return Err(invalid(format!("sar.median_k = {} must be odd and at least 3", self.sar.median_k)));
        }
        if self.pair.window_days < 0 {
            return Err(invalid("pair.window_days must be non-negative"));
        }
        if let Some(cmd) = &self.bridge.command {
            if !cmd.contains("{in_dir}") || !cmd.contains("{out_dir}") {
                return Err(invalid("bridge.command needs both {in_dir} and {out_dir} placeholders"));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Canonical `section.key = value` lines, sorted, excluding settings that
    /// cannot change any result (`run.workers`).
    pub fn canonical_lines(&self) -> Vec<String> {
        let value = serde_json::to_value(self).expect("config serializes to JSON");
        let mut flat = BTreeMap::new();
        flatten("", &value, &mut flat);
        flat.remove("run.workers");
        flat.into_iter().map(|(k, v)| format!("{k} = {v}")).collect()
    }

    /// SHA-256 over the canonical lines.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.canonical_lines().join("\n").as_bytes())
    }
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}
