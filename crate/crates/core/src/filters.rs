//! Pixel-level cleaning stages.
//!
//! Stage 1 rejects cloudy tiles from the QA60 mask, then from the share of
//! pixels brighter than `alpha` in the raw 16-bit bands. Stage 2 works on an
//! 8-bit RGB rendering and rejects night scenes (low mean HSV value) and
//! no-data scenes (too many near-black pixels). Rule order inside each stage
//! is fixed: QA before pixel threshold, night before no-data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BitDepth, ImageTile, QaMask, RasterError};

/// Sentinel-2 reflectance 10000 maps to 255.
pub const DEFAULT_RGB_SCALE: f64 = 10000.0 / 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("QA mask is {qa_w}×{qa_h} but the tile is {tile_w}×{tile_h}")]
    DimensionMismatch {
        qa_w: u32,
        qa_h: u32,
        tile_w: u32,
        tile_h: u32,
    },
    #[error("expected an 8-bit 3-band RGB tile, got {bands} bands at {bits} bits")]
    WrongBandLayout { bands: usize, bits: u8 },
    #[error("missing band: {0}")]
    MissingBand(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl From<RasterError> for FilterError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::MissingBand(b) => FilterError::MissingBand(b),
            other => FilterError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    Stage3,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    QaCloud,
    PixelThreshold,
    Night,
    NoData,
    FrechetScore,
}

impl Rule {
    pub fn stage(self) -> Stage {
        match self {
            Rule::QaCloud | Rule::PixelThreshold => Stage::Stage1,
            Rule::Night | Rule::NoData => Stage::Stage2,
            Rule::FrechetScore => Stage::Stage3,
        }
    }
}

/// Outcome of one filter stage for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub scene_id: String,
    pub kept: bool,
    pub stage: Stage,
    pub rule: Option<Rule>,
    /// Statistic of the rule that fired, or of the last rule checked when kept.
    pub statistic: f64,
}

impl FilterVerdict {
    pub fn kept(scene_id: impl Into<String>, statistic: f64) -> Self {
        Self {
            scene_id: scene_id.into(),
            kept: true,
            stage: Stage::None,
            rule: None,
            statistic,
        }
    }

    pub fn rejected(scene_id: impl Into<String>, rule: Rule, statistic: f64) -> Self {
        Self {
            scene_id: scene_id.into(),
            kept: false,
            stage: rule.stage(),
            rule: Some(rule),
            statistic,
        }
    }
}

fn check_ratio(name: &str, v: f64) -> Result<(), FilterError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(FilterError::InvalidConfig(format!("{name} = {v} is outside [0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    /// Raw 16-bit pixel threshold.
    pub alpha: u16,
    pub bright_pixel_ratio: f64,
    pub qa_cloud_ratio: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            alpha: 4096,
            bright_pixel_ratio: 0.01,
            qa_cloud_ratio: 0.0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<(), FilterError> {
        check_ratio("stage1.bright_pixel_ratio", self.bright_pixel_ratio)?;
        check_ratio("stage1.qa_cloud_ratio", self.qa_cloud_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    /// Mean-V threshold on the 0–255 scale.
    pub brightness_threshold: f64,
    /// V below this counts as no-data.
    pub nodata_value_threshold: u8,
    pub nodata_ratio: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            brightness_threshold: 30.0,
            nodata_value_threshold: 10,
            nodata_ratio: 0.10,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(0.0..=255.0).contains(&self.brightness_threshold) {
            return Err(FilterError::InvalidConfig(format!(
                "stage2.brightness_threshold = {} is outside [0, 255]",
                self.brightness_threshold
            )));
        }
        check_ratio("stage2.nodata_ratio", self.nodata_ratio)
    }
}

/// Stage 1: QA60 cloud share, then share of pixels with any band above `alpha`.
pub fn stage1_filter(
    scene_id: &str,
    tile: &ImageTile,
    qa: Option<&QaMask>,
    cfg: &Stage1Config,
) -> Result<FilterVerdict, FilterError> {
    if let Some(qa) = qa {
        if qa.width() != tile.width() || qa.height() != tile.height() {
            return Err(FilterError::DimensionMismatch {
                qa_w: qa.width(),
                qa_h: qa.height(),
                tile_w: tile.width(),
                tile_h: tile.height(),
            });
        }
        let fraction = qa.cloud_fraction();
        if fraction > cfg.qa_cloud_ratio {
            return Ok(FilterVerdict::rejected(scene_id, Rule::QaCloud, fraction));
        }
    }

    let n = tile.pixel_count();
    let mut bright = vec![false; n];
    for b in 0..tile.bands() {
        for (flag, &v) in bright.iter_mut().zip(tile.band(b)) {
            *flag |= v > cfg.alpha;
        }
    }
    let count = bright.iter().filter(|&&f| f).count();
    let fraction = if n == 0 { 0.0 } else { count as f64 / n as f64 };
    if fraction > cfg.bright_pixel_ratio {
        Ok(FilterVerdict::rejected(scene_id, Rule::PixelThreshold, fraction))
    } else {
        Ok(FilterVerdict::kept(scene_id, fraction))
    }
}

/// Renders three named bands to 8 bits: `clamp(round(raw / scale), 0, 255)`.
pub fn to_rgb8<S: AsRef<str>>(tile: &ImageTile, rgb_bands: &[S; 3], scale: f64) -> Result<ImageTile, FilterError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(FilterError::InvalidConfig(format!("rgb.scale = {scale} must be positive")));
    }
    let mut pixels = Vec::with_capacity(tile.pixel_count() * 3);
    for label in rgb_bands {
        let band = tile.band_by_label(label.as_ref())?;
        pixels.extend(band.iter().map(|&v| (v as f64 / scale).round().clamp(0.0, 255.0) as u16));
    }
    let labels = ["R", "G", "B"].iter().map(|s| s.to_string()).collect();
    Ok(ImageTile::new(tile.width(), tile.height(), BitDepth::Eight, labels, pixels)?)
}

pub(crate) fn check_rgb8(rgb: &ImageTile) -> Result<(), FilterError> {
    if rgb.bands() != 3 || rgb.bit_depth() != BitDepth::Eight {
        return Err(FilterError::WrongBandLayout {
            bands: rgb.bands(),
            bits: rgb.bit_depth().bits(),
        });
    }
    Ok(())
}

/// HSV value channel, `max(R, G, B)` per pixel.
pub fn hsv_value(rgb: &ImageTile) -> Result<Vec<u8>, FilterError> {
    check_rgb8(rgb)?;
    let (r, g, b) = (rgb.band(0), rgb.band(1), rgb.band(2));
    Ok(r.iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| r.max(g).max(b) as u8)
        .collect())
}

/// Stage 2: night (mean V below threshold), then no-data (share of V below
/// the no-data value above the ratio).
pub fn stage2_filter(scene_id: &str, rgb: &ImageTile, cfg: &Stage2Config) -> Result<FilterVerdict, FilterError> {
    let v = hsv_value(rgb)?;
    let n = v.len() as u64;
    if n == 0 {
        return Ok(FilterVerdict::rejected(scene_id, Rule::NoData, 1.0));
    }
    // Integer sum; the comparison sum < threshold * n avoids a rounded mean.
    let sum: u64 = v.iter().map(|&x| x as u64).sum();
    let mean = sum as f64 / n as f64;
    if (sum as f64) < cfg.brightness_threshold * n as f64 {
        return Ok(FilterVerdict::rejected(scene_id, Rule::Night, mean));
    }
    let dark = v.iter().filter(|&&x| x < cfg.nodata_value_threshold).count() as u64;
    let fraction = dark as f64 / n as f64;
    if fraction > cfg.nodata_ratio {
        Ok(FilterVerdict::rejected(scene_id, Rule::NoData, fraction))
    } else {
        Ok(FilterVerdict::kept(scene_id, fraction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::decode_qa_mask;
    use proptest::prelude::*;

    fn eo(width: u32, height: u32, value: u16) -> ImageTile {
        let labels: Vec<String> = ["B4", "B3", "B2"].iter().map(|s| s.to_string()).collect();
        let n = (width * height) as usize * 3;
        ImageTile::new(width, height, BitDepth::Sixteen, labels, vec![value; n]).unwrap()
    }

    fn rgb(pixels: &[(u8, u8, u8)], width: u32) -> ImageTile {
        let height = pixels.len() as u32 / width;
        let mut data = Vec::new();
        for c in 0..3 {
            data.extend(pixels.iter().map(|p| [p.0, p.1, p.2][c] as u16));
        }
        let labels = ["R", "G", "B"].iter().map(|s| s.to_string()).collect();
        ImageTile::new(width, height, BitDepth::Eight, labels, data).unwrap()
    }

    #[test]
    fn all_zero_tile_kept() {
        let v = stage1_filter("s", &eo(8, 8, 0), None, &Stage1Config::default()).unwrap();
        assert_eq!(v, FilterVerdict::kept("s", 0.0));
    }

    #[test]
    fn saturated_tile_rejected_by_pixel_threshold() {
        let v = stage1_filter("s", &eo(8, 8, 5000), None, &Stage1Config::default()).unwrap();
        assert_eq!(v, FilterVerdict::rejected("s", Rule::PixelThreshold, 1.0));
        assert_eq!(v.stage, Stage::Stage1);
    }

    #[test]
    fn qa_checked_before_pixels() {
        let mut flags = vec![0u16; 100];
        for f in flags.iter_mut().take(5) {
            *f = 1 << 10;
        }
        let qa_tile = ImageTile::new(10, 10, BitDepth::Sixteen, vec!["QA60".into()], flags).unwrap();
        let qa = decode_qa_mask(&qa_tile, &[10, 11]).unwrap();
        let v = stage1_filter("s", &eo(10, 10, 5000), Some(&qa), &Stage1Config::default()).unwrap();
        assert_eq!(v.rule, Some(Rule::QaCloud));
        assert!((v.statistic - 0.05).abs() < 1e-15);
    }

    #[test]
    fn qa_dimension_mismatch() {
        let qa_tile = ImageTile::new(4, 4, BitDepth::Sixteen, vec!["QA60".into()], vec![0; 16]).unwrap();
        let qa = decode_qa_mask(&qa_tile, &[10]).unwrap();
        let err = stage1_filter("s", &eo(8, 8, 0), Some(&qa), &Stage1Config::default()).unwrap_err();
        assert!(matches!(err, FilterError::DimensionMismatch { .. }));
    }

    #[test]
    fn bright_ratio_counts_pixels_not_samples() {
        // 1 of 100 pixels bright in two bands: 1% is not above 1%.
        let mut tile = eo(10, 10, 100).into_pixels();
        tile[0] = 5000;
        tile[100] = 5000;
        let labels = ["B4", "B3", "B2"].iter().map(|s| s.to_string()).collect();
        let tile = ImageTile::new(10, 10, BitDepth::Sixteen, labels, tile).unwrap();
        let v = stage1_filter("s", &tile, None, &Stage1Config::default()).unwrap();
        assert!(v.kept);
        assert_eq!(v.statistic, 0.01);
        let strict = Stage1Config { bright_pixel_ratio: 0.0, ..Default::default() };
        assert!(!stage1_filter("s", &tile, None, &strict).unwrap().kept);
    }

    #[test]
    fn rgb8_rounding_and_clamp() {
        let labels: Vec<String> = ["B4", "B3", "B2"].iter().map(|s| s.to_string()).collect();
        let tile = ImageTile::new(3, 1, BitDepth::Sixteen, labels, vec![0, 10000, 3921, 0, 0, 0, 0, 0, 0]).unwrap();
        let out = to_rgb8(&tile, &["B4", "B3", "B2"], 39.2157).unwrap();
        assert_eq!(out.band(0), &[0, 255, 100]);
        assert_eq!(out.bit_depth(), BitDepth::Eight);
        assert!(matches!(to_rgb8(&tile, &["B4", "B8", "B2"], 1.0), Err(FilterError::MissingBand(_))));
        assert!(matches!(to_rgb8(&tile, &["B4", "B3", "B2"], 0.0), Err(FilterError::InvalidConfig(_))));
    }

    #[test]
    fn constant_dim_rgb_is_night() {
        let v = stage2_filter("s", &rgb(&[(10, 20, 25); 16], 4), &Stage2Config::default()).unwrap();
        assert_eq!(v, FilterVerdict::rejected("s", Rule::Night, 25.0));
    }

    #[test]
    fn all_zero_is_night_before_nodata() {
        let v = stage2_filter("s", &rgb(&[(0, 0, 0); 16], 4), &Stage2Config::default()).unwrap();
        assert_eq!(v.rule, Some(Rule::Night));
    }

    #[test]
    fn fifteen_percent_dark_is_nodata() {
        let mut px = vec![(200u8, 100u8, 50u8); 100];
        for p in px.iter_mut().take(15) {
            *p = (5, 0, 0);
        }
        let v = stage2_filter("s", &rgb(&px, 10), &Stage2Config::default()).unwrap();
        assert_eq!(v.rule, Some(Rule::NoData));
        assert!((v.statistic - 0.15).abs() < 1e-15);
        // mean V = 0.85·200 + 0.15·5
        let values = hsv_value(&rgb(&px, 10)).unwrap();
        let mean = values.iter().map(|&x| x as f64).sum::<f64>() / 100.0;
        assert_eq!(mean, 170.75);
    }

    #[test]
    fn stage2_rejects_wrong_layout() {
        assert!(matches!(
            stage2_filter("s", &eo(2, 2, 0), &Stage2Config::default()),
            Err(FilterError::WrongBandLayout { bands: 3, bits: 16 })
        ));
    }

    #[test]
    fn brightness_boundary_is_strict() {
        // mean exactly 30 is not night
        let v = stage2_filter("s", &rgb(&[(30, 0, 0); 4], 2), &Stage2Config::default()).unwrap();
        assert!(v.kept);
    }

    proptest! {
        #[test]
        fn mean_v_matches_naive_loop(px in proptest::collection::vec(any::<(u8, u8, u8)>(), 1..200), thr in 0u8..=255) {
            let tile = rgb(&px, px.len() as u32);
            let cfg = Stage2Config { brightness_threshold: thr as f64, nodata_ratio: 1.0, ..Default::default() };
            let verdict = stage2_filter("s", &tile, &cfg).unwrap();
            let mut sum = 0u64;
            for &(r, g, b) in &px {
                sum += r.max(g).max(b) as u64;
            }
            let night = sum < thr as u64 * px.len() as u64;
            prop_assert_eq!(verdict.rule == Some(Rule::Night), night);
        }

        #[test]
        fn lowering_alpha_keeps_rejections(values in proptest::collection::vec(0u16..9000, 12), a in 0u16..9000, b in 0u16..9000) {
            let labels: Vec<String> = ["B4", "B3", "B2"].iter().map(|s| s.to_string()).collect();
            let tile = ImageTile::new(2, 2, BitDepth::Sixteen, labels, values).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            let at_hi = stage1_filter("s", &tile, None, &Stage1Config { alpha: hi, ..Default::default() }).unwrap();
            let at_lo = stage1_filter("s", &tile, None, &Stage1Config { alpha: lo, ..Default::default() }).unwrap();
            prop_assert!(at_hi.kept || !at_lo.kept);
        }

        #[test]
        fn raising_brightness_keeps_night_rejections(px in proptest::collection::vec(any::<(u8, u8, u8)>(), 1..50), a in 0.0f64..255.0, b in 0.0f64..255.0) {
            let tile = rgb(&px, px.len() as u32);
            let (lo, hi) = (a.min(b), a.max(b));
            let night_lo = stage2_filter("s", &tile, &Stage2Config { brightness_threshold: lo, ..Default::default() }).unwrap();
            let night_hi = stage2_filter("s", &tile, &Stage2Config { brightness_threshold: hi, ..Default::default() }).unwrap();
            prop_assert!(night_lo.rule != Some(Rule::Night) || night_hi.rule == Some(Rule::Night));
        }
    }
}
