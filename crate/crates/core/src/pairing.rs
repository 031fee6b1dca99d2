//! SAR–EO pair construction.
//!
//! Each clean EO scene pairs with every SAR scene of the same tile whose date
//! lies within `±window_days` (inclusive), optionally capped to the nearest
//! `max_pairs_per_eo` acquisitions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{SceneRecord, Sensor};
use crate::filters::Rule;

pub const DEFAULT_WINDOW_DAYS: i64 = 30;

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("window_days must be non-negative, got {0}")]
    NegativeWindow(i64),
    #[error("scene `{0}` passed as {1} but its sensor is {2}")]
    WrongSensor(String, &'static str, &'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(rename = "eo")]
    pub eo_scene_id: String,
    #[serde(rename = "sar")]
    pub sar_scene_id: String,
    #[serde(rename = "tile")]
    pub tile_id: String,
    /// SAR date minus EO date, in days.
    pub day_offset: i64,
}

/// Kept/dropped tallies of one filter stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTally {
    pub input: usize,
    pub kept: usize,
    pub dropped: BTreeMap<Rule, usize>,
}

impl StageTally {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input_eo: usize,
    pub stage1: StageTally,
    pub stage2: StageTally,
    pub stage3: StageTally,
    pub clean_eo: usize,
}

impl StageCounts {
    /// `input_eo = clean_eo + Σ dropped` and each stage feeds the next.
    pub fn reconciles(&self) -> bool {
        let stages = [&self.stage1, &self.stage2, &self.stage3];
        stages.iter().all(|s| s.input == s.kept + s.dropped_total())
            && self.stage1.input == self.input_eo
            && self.stage2.input == self.stage1.kept
            && self.stage3.input == self.stage2.kept
            && self.clean_eo == self.stage3.kept
            && self.input_eo == self.clean_eo + stages.iter().map(|s| s.dropped_total()).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub config_fingerprint: String,
    pub stage_counts: StageCounts,
    pub pairs: Vec<PairRecord>,
}

impl PairManifest {
    /// Flat CSV: `eo,sar,tile,day_offset`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eo,sar,tile,day_offset\n");
        for p in &self.pairs {
            out.push_str(&format!("{},{},{},{}\n", p.eo_scene_id, p.sar_scene_id, p.tile_id, p.day_offset));
        }
        out
    }
}

fn check_sensor(records: &[SceneRecord], expected: Sensor) -> Result<(), PairingError> {
    match records.iter().find(|r| r.sensor != expected) {
        Some(r) => Err(PairingError::WrongSensor(r.scene_id.clone(), expected.as_str(), r.sensor.as_str())),
        None => Ok(()),
    }
}

fn pairs_for_tile(
    eo: &[&SceneRecord],
    sar: &[&SceneRecord],
    window_days: i64,
    cap: Option<usize>,
) -> Vec<(chrono::NaiveDate, String, PairRecord)> {
    let mut out = Vec::new();
    for e in eo {
        let mut matches: Vec<(&SceneRecord, i64)> = sar
            .iter()
            .map(|s| (*s, (s.date - e.date).num_days()))
            .filter(|(_, d)| d.abs() <= window_days)
            .collect();
        if let Some(cap) = cap {
            matches.sort_by(|(a, da), (b, db)| {
                da.abs()
                    .cmp(&db.abs())
                    .then(a.date.cmp(&b.date))
                    .then(a.scene_id.cmp(&b.scene_id))
            });
            matches.truncate(cap);
        }
        out.extend(matches.into_iter().map(|(s, d)| {
            (
                e.date,
                e.scene_id.clone(),
                PairRecord {
                    eo_scene_id: e.scene_id.clone(),
                    sar_scene_id: s.scene_id.clone(),
                    tile_id: e.tile_id.clone(),
                    day_offset: d,
                },
            )
        }));
    }
    out
}

/// Pairs ordered by (tile_id, EO date, EO scene, |day_offset|, SAR scene).
/// Tile groups are matched in parallel; the result does not depend on input
/// order or thread count.
pub fn build_pairs(
    clean_eo: &[SceneRecord],
    sar: &[SceneRecord],
    window_days: i64,
    max_pairs_per_eo: Option<usize>,
) -> Result<Vec<PairRecord>, PairingError> {
    if window_days < 0 {
        return Err(PairingError::NegativeWindow(window_days));
    }
    check_sensor(clean_eo, Sensor::Eo)?;
    check_sensor(sar, Sensor::Sar)?;

    let mut groups: BTreeMap<&str, (Vec<&SceneRecord>, Vec<&SceneRecord>)> = BTreeMap::new();
    for e in clean_eo {
        groups.entry(&e.tile_id).or_default().0.push(e);
    }
    for s in sar {
        if let Some(g) = groups.get_mut(s.tile_id.as_str()) {
            g.1.push(s);
        }
    }
    let mut keyed: Vec<_> = groups
        .into_par_iter()
        .flat_map_iter(|(_, (eo, sar))| pairs_for_tile(&eo, &sar, window_days, max_pairs_per_eo))
        .collect();
    keyed.sort_by(|(da, ea, a), (db, eb, b)| {
        a.tile_id
            .cmp(&b.tile_id)
            .then(da.cmp(db))
            .then(ea.cmp(eb))
            .then(a.day_offset.abs().cmp(&b.day_offset.abs()))
            .then(a.sar_scene_id.cmp(&b.sar_scene_id))
    });
    Ok(keyed.into_iter().map(|(_, _, p)| p).collect())
}
