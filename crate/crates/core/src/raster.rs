//! In-memory raster types shared by every stage.
//!
//! [`ImageTile`] keeps pixels as integers at their native bit depth, stored
//! band-sequential (one full `width × height` plane per band, row-major within
//! the plane). Stages that need real values convert explicitly into
//! [`RealImage`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard Sentinel-2 QA60 bits: 10 = opaque cloud, 11 = cirrus.
pub const DEFAULT_CLOUD_BITS: [u8; 2] = [10, 11];

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("pixel buffer has {actual} samples, expected {expected}")]
    InvalidShape { expected: usize, actual: usize },
    #[error("pixel value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u16, bits: u8 },
    #[error("band `{0}` not present in tile")]
    MissingBand(String),
    #[error("expected a single-band raster, got {0} bands")]
    NotSingleBand(usize),
    #[error("cloud bit index {0} is outside a 16-bit flag word")]
    InvalidCloudBit(u8),
    #[error("dimension mismatch: {0}×{1} vs {2}×{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("planes must be non-empty and equally sized")]
    RaggedPlanes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

/// Decoded integer raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTile {
    width: u32,
    height: u32,
    bit_depth: BitDepth,
    band_labels: Vec<String>,
    pixels: Vec<u16>,
}

impl ImageTile {
    pub fn new(
        width: u32,
        height: u32,
        bit_depth: BitDepth,
        band_labels: Vec<String>,
        pixels: Vec<u16>,
    ) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * band_labels.len();
        if pixels.len() != expected {
            return Err(RasterError::InvalidShape {
                expected,
                actual: pixels.len(),
            });
        }
        let max = bit_depth.max_value();
        if let Some(&value) = pixels.iter().find(|&&v| v > max) {
            return Err(RasterError::ValueOutOfRange {
                value,
                bits: bit_depth.bits(),
            });
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            band_labels,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.band_labels.len()
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn band_labels(&self) -> &[String] {
        &self.band_labels
    }

    /// Band-sequential pixel buffer.
    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    /// Pixels per band.
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn band(&self, index: usize) -> &[u16] {
        let n = self.pixel_count();
        &self.pixels[index * n..(index + 1) * n]
    }

    pub fn band_index(&self, label: &str) -> Option<usize> {
        self.band_labels.iter().position(|l| l == label)
    }

    pub fn band_by_label(&self, label: &str) -> Result<&[u16], RasterError> {
        self.band_index(label)
            .map(|i| self.band(i))
            .ok_or_else(|| RasterError::MissingBand(label.to_string()))
    }

    /// New tile holding only the named bands, in the given order.
    pub fn select_bands<S: AsRef<str>>(&self, labels: &[S]) -> Result<ImageTile, RasterError> {
        let mut pixels = Vec::with_capacity(self.pixel_count() * labels.len());
        for label in labels {
            pixels.extend_from_slice(self.band_by_label(label.as_ref())?);
        }
        Ok(ImageTile {
            width: self.width,
            height: self.height,
            bit_depth: self.bit_depth,
            band_labels: labels.iter().map(|l| l.as_ref().to_string()).collect(),
            pixels,
        })
    }

    /// Rectangular window; caller guarantees it lies inside the tile.
    pub fn window(&self, x0: u32, y0: u32, width: u32, height: u32) -> ImageTile {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut pixels = Vec::with_capacity(width as usize * height as usize * self.bands());
        for b in 0..self.bands() {
            let band = self.band(b);
            for y in y0..y0 + height {
                let start = y as usize * self.width as usize + x0 as usize;
                pixels.extend_from_slice(&band[start..start + width as usize]);
            }
        }
        ImageTile {
            width,
            height,
            bit_depth: self.bit_depth,
            band_labels: self.band_labels.clone(),
            pixels,
        }
    }

    /// Converts to real planes, dividing every sample by `divisor`.
    pub fn to_real(&self, divisor: f64) -> RealImage {
        let planes = (0..self.bands())
            .map(|b| Plane {
                width: self.width,
                height: self.height,
                data: self.band(b).iter().map(|&v| v as f64 / divisor).collect(),
            })
            .collect();
        RealImage {
            width: self.width,
            height: self.height,
            planes,
        }
    }
}

/// Single real-valued raster plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::InvalidShape {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Multi-channel real image, one [`Plane`] per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    width: u32,
    height: u32,
    planes: Vec<Plane>,
}

impl RealImage {
    pub fn new(planes: Vec<Plane>) -> Result<Self, RasterError> {
        let first = planes.first().ok_or(RasterError::RaggedPlanes)?;
        if planes.iter().any(|p| !p.same_shape(first)) {
            return Err(RasterError::RaggedPlanes);
        }
        Ok(Self {
            width: first.width,
            height: first.height,
            planes,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    /// All samples, channel after channel.
    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.planes.iter().flat_map(|p| p.data.iter().copied())
    }

    pub fn same_shape(&self, other: &RealImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels() == other.channels()
    }
}

/// Per-pixel QA flag words with a configured set of cloud bits.
#[derive(Debug, Clone, PartialEq)]
pub struct QaMask {
    width: u32,
    height: u32,
    flags: Vec<u16>,
    cloud_mask: u16,
}

impl QaMask {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn flags(&self) -> &[u16] {
        &self.flags
    }

    pub fn cloud_flagged(&self, index: usize) -> bool {
        self.flags[index] & self.cloud_mask != 0
    }

    pub fn cloud_flagged_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f & self.cloud_mask != 0).count()
    }

    pub fn cloud_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            return 0.0;
        }
        self.cloud_flagged_count() as f64 / self.flags.len() as f64
    }
}

/// Wraps a single-band QA raster; a pixel is cloudy when any of `cloud_bits` is set.
pub fn decode_qa_mask(tile: &ImageTile, cloud_bits: &[u8]) -> Result<QaMask, RasterError> {
    if tile.bands() != 1 {
        return Err(RasterError::NotSingleBand(tile.bands()));
    }
    let mut cloud_mask = 0u16;
    for &bit in cloud_bits {
        if bit >= 16 {
            return Err(RasterError::InvalidCloudBit(bit));
        }
        cloud_mask |= 1 << bit;
    }
    Ok(QaMask {
        width: tile.width,
        height: tile.height,
        flags: tile.band(0).to_vec(),
        cloud_mask,
    })
}
