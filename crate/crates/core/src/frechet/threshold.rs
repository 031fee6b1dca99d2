//! Score set, threshold and the stage-3 verdict.
//!
//! The threshold is written `(min(S) + max(S) − min(S)) · β`, which reduces
//! to `max(S) · β` ([`ThresholdForm::LiteralEq1`]). The interpolating reading
//! `min(S) + (max(S) − min(S)) · β` is available as
//! [`ThresholdForm::Interpolation`]; reports always carry both values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{FilterVerdict, Rule};

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("score set is empty")]
    EmptyScoreSet,
    #[error("score for `{0}` is negative or non-finite")]
    InvalidScore(String),
    #[error("invalid stage-3 configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdForm {
    #[default]
    LiteralEq1,
    Interpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    #[default]
    Handcrafted,
    ExternalFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage3Config {
    pub beta: f64,
    pub threshold_form: ThresholdForm,
    pub patch_size: u32,
    pub extractor: Extractor,
    pub epsilon_reg: f64,
    /// Binary feature file, required with `extractor = "external_features"`.
    pub external_features: Option<PathBuf>,
    /// Row-range index for `external_features`.
    pub external_index: Option<PathBuf>,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            beta: 0.4,
            threshold_form: ThresholdForm::LiteralEq1,
            patch_size: 64,
            extractor: Extractor::Handcrafted,
            epsilon_reg: 1e-6,
            external_features: None,
            external_index: None,
        }
    }
}

impl Stage3Config {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(ThresholdError::InvalidConfig(format!("stage3.beta = {} is outside [0, 1]", self.beta)));
        }
        if !(self.epsilon_reg >= 0.0 && self.epsilon_reg.is_finite()) {
            return Err(ThresholdError::InvalidConfig("stage3.epsilon_reg must be a finite non-negative number".into()));
        }
        if self.extractor == Extractor::ExternalFeatures
            && (self.external_features.is_none() || self.external_index.is_none())
        {
            return Err(ThresholdError::InvalidConfig(
                "external_features extractor needs stage3.external_features and stage3.external_index".into(),
            ));
        }
        Ok(())
    }
}

/// Per-scene scores of the stage-2 survivors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    scores: BTreeMap<String, f64>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scene_id: impl Into<String>, score: f64) -> Result<(), ThresholdError> {
        let scene_id = scene_id.into();
        if !(score.is_finite() && score >= 0.0) {
            return Err(ThresholdError::InvalidScore(scene_id));
        }
        self.scores.insert(scene_id, score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, scene_id: &str) -> Option<f64> {
        self.scores.get(scene_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn min(&self) -> Option<f64> {
        self.scores.values().copied().reduce(f64::min)
    }

    pub fn max(&self) -> Option<f64> {
        self.scores.values().copied().reduce(f64::max)
    }
}

impl FromIterator<(String, f64)> for ScoreSet {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        Self {
            scores: iter.into_iter().collect(),
        }
    }
}

/// Threshold value under one form.
pub fn threshold_value(scores: &ScoreSet, beta: f64, form: ThresholdForm) -> Result<f64, ThresholdError> {
    let (min, max) = scores.min().zip(scores.max()).ok_or(ThresholdError::EmptyScoreSet)?;
    Ok(match form {
        ThresholdForm::LiteralEq1 => (min + max - min) * beta,
        ThresholdForm::Interpolation => min + (max - min) * beta,
    })
}

/// Both threshold readings plus the one selected by the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub literal: f64,
    pub interpolation: f64,
    pub selected: f64,
}

pub fn stage3_threshold(scores: &ScoreSet, cfg: &Stage3Config) -> Result<Threshold, ThresholdError> {
    let literal = threshold_value(scores, cfg.beta, ThresholdForm::LiteralEq1)?;
    let interpolation = threshold_value(scores, cfg.beta, ThresholdForm::Interpolation)?;
    let selected = match cfg.threshold_form {
        ThresholdForm::LiteralEq1 => literal,
        ThresholdForm::Interpolation => interpolation,
    };
    Ok(Threshold {
        literal,
        interpolation,
        selected,
    })
}

/// Rejects when `score < f_th` (strict).
pub fn stage3_filter(scene_id: &str, score: f64, f_th: f64) -> FilterVerdict {
    if score < f_th {
        FilterVerdict::rejected(scene_id, Rule::FrechetScore, score)
    } else {
        FilterVerdict::kept(scene_id, score)
    }
}
