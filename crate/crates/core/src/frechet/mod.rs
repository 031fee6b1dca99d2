//! Stage 3: Fréchet-distance scoring against a cloud reference set.
//!
//! Each EO tile is split into patches; patch descriptors form the tile's
//! feature distribution, summarized as a Gaussian. The cloud reference set
//! pools the patches of all its tiles. A tile's score is the Fréchet distance
//! between its Gaussian and the reference Gaussian, so low scores mean
//! "looks like cloud".

pub mod distance;
pub mod external;
pub mod features;
pub mod sqrtm;
pub mod stats;
pub mod threshold;

pub use distance::{frechet_distance, FrechetError, FrechetReference};
pub use features::{extract_features_handcrafted, tile_patches, FeatureError, FeatureVector};
pub use sqrtm::sqrtm_spd;
pub use stats::{accumulate_stats, GaussianStats, StatsAccumulator, StatsError};
pub use threshold::{stage3_filter, stage3_threshold, ScoreSet, Stage3Config, Threshold, ThresholdForm};

use crate::raster::ImageTile;

/// Patch descriptors of one 8-bit RGB tile under the handcrafted extractor.
pub fn handcrafted_patch_features(rgb: &ImageTile, patch_size: u32) -> Result<Vec<FeatureVector>, FeatureError> {
    tile_patches(rgb, patch_size)?
        .iter()
        .map(extract_features_handcrafted)
        .collect()
}

/// Accumulator over a set of patch descriptors.
pub fn patch_accumulator(features: &[FeatureVector], dim: usize) -> Result<StatsAccumulator, StatsError> {
    let mut acc = StatsAccumulator::new(dim);
    for f in features {
        acc.push(f.values())?;
    }
    Ok(acc)
}
