//! Dataset curation and evaluation toolkit for SAR-to-EO image translation.
//!
//! The crate is organised the way the data flows:
//!
//! - [`catalog`] and [`raster`] load scene catalogs, tiles and QA60 cloud masks.
//! - [`filters`] holds the pixel-level cleaning stages (cloud, night, no-data).
//! - [`frechet`] scores surviving tiles by Fréchet distance to a cloud reference
//!   set and applies the score threshold.
//! - [`sar`] builds 3-channel SAR composites, median-blurs and normalizes them.
//! - [`pairing`] matches clean EO tiles with SAR acquisitions in a day window.
//! - [`eval`] implements the min-over-outputs evaluation metric.
//! - [`synth`] generates labelled synthetic corpora for end-to-end testing.
//! - [`config`] and [`pipeline`] orchestrate everything through on-disk manifests.

pub mod catalog;
pub mod config;
pub mod eval;
pub mod filters;
pub mod frechet;
pub mod pairing;
pub mod pipeline;
pub mod raster;
pub mod rasterio;
pub mod sar;
pub mod synth;

mod digest;

pub use catalog::{load_catalog, SceneRecord, Sensor};
pub use config::PipelineConfig;
pub use filters::{FilterVerdict, Rule, Stage};
pub use raster::{BitDepth, ImageTile, Plane, QaMask, RealImage};
