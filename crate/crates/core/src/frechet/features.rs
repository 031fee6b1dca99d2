//! Frozen handcrafted patch descriptor.
//!
//! Layout of the 24 entries (channel order R, G, B; V = max(R, G, B)):
//!
//! | index  | content                                                      |
//! |--------|--------------------------------------------------------------|
//! | 0..3   | channel mean                                                 |
//! | 3..6   | channel standard deviation (population)                      |
//! | 6..18  | 4-bin histogram fractions, bins of width 64, channel-major   |
//! | 18..21 | mean forward-difference gradient magnitude `|dx| + |dy|`     |
//! | 21     | mean V                                                       |
//! | 22     | V variance (population)                                      |
//! | 23     | fraction of pixels with V > 200                              |
//!
//! Forward differences are zero on the last column/row (edge replication).
//! Any change to this layout must bump [`HANDCRAFTED_EXTRACTOR_ID`].

use thiserror::Error;

use crate::filters::{check_rgb8, FilterError};
use crate::raster::ImageTile;

pub const HANDCRAFTED_DIM: usize = 24;
pub const HANDCRAFTED_EXTRACTOR_ID: &str = "handcrafted-v1-d24";
pub const MIN_PATCH_SIZE: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Layout(#[from] FilterError),
    #[error("patch size {patch} exceeds tile dimensions {width}×{height}")]
    PatchTooLarge { patch: u32, width: u32, height: u32 },
    #[error("patch size {0} is below the minimum of {MIN_PATCH_SIZE}")]
    PatchTooSmall(u32),
    #[error("feature vector contains a non-finite entry")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(FeatureError::NonFinite)
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Mean and population variance from exact integer moments.
fn moments(values: impl Iterator<Item = u64>) -> (f64, f64) {
    let (mut n, mut sum, mut sumsq) = (0u128, 0u128, 0u128);
    for v in values {
        n += 1;
        sum += v as u128;
        sumsq += (v * v) as u128;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum as f64 / n as f64;
    let var = (n * sumsq - sum * sum) as f64 / (n * n) as f64;
    (mean, var)
}

fn mean_gradient(band: &[u16], width: usize, height: usize) -> f64 {
    let mut total = 0u64;
    for y in 0..height {
        let row = &band[y * width..(y + 1) * width];
        for x in 0..width {
            let v = row[x] as i32;
            if x + 1 < width {
                total += (row[x + 1] as i32 - v).unsigned_abs() as u64;
            }
            if y + 1 < height {
                total += (band[(y + 1) * width + x] as i32 - v).unsigned_abs() as u64;
            }
        }
    }
    total as f64 / (width * height) as f64
}

pub fn extract_features_handcrafted(rgb: &ImageTile) -> Result<FeatureVector, FeatureError> {
    check_rgb8(rgb)?;
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = (w * h) as f64;
    let mut f = vec![0.0; HANDCRAFTED_DIM];

    for c in 0..3 {
        let band = rgb.band(c);
        let (mean, var) = moments(band.iter().map(|&v| v as u64));
        f[c] = mean;
        f[3 + c] = var.sqrt();
        let mut bins = [0u64; 4];
        for &v in band {
            bins[(v as usize / 64).min(3)] += 1;
        }
        for (b, &count) in bins.iter().enumerate() {
            f[6 + 4 * c + b] = count as f64 / n;
        }
        f[18 + c] = mean_gradient(band, w, h);
    }

    let (r, g, b) = (rgb.band(0), rgb.band(1), rgb.band(2));
    let v = || r.iter().zip(g).zip(b).map(|((&r, &g), &b)| r.max(g).max(b) as u64);
    let (v_mean, v_var) = moments(v());
    f[21] = v_mean;
    f[22] = v_var;
    f[23] = v().filter(|&x| x > 200).count() as f64 / n;

    FeatureVector::new(f)
}

/// Non-overlapping `patch_size`² windows in row-major order; partial edge
/// patches are dropped.
pub fn tile_patches(tile: &ImageTile, patch_size: u32) -> Result<Vec<ImageTile>, FeatureError> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(FeatureError::PatchTooSmall(patch_size));
    }
    if patch_size > tile.width() || patch_size > tile.height() {
        return Err(FeatureError::PatchTooLarge {
            patch: patch_size,
            width: tile.width(),
            height: tile.height(),
        });
    }
    let (cols, rows) = (tile.width() / patch_size, tile.height() / patch_size);
    let mut patches = Vec::with_capacity((cols * rows) as usize);
    for py in 0..rows {
        for px in 0..cols {
            patches.push(tile.window(px * patch_size, py * patch_size, patch_size, patch_size));
        }
    }
    Ok(patches)
}
