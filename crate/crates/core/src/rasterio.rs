//! PNG and TIFF codecs for [`ImageTile`] and [`RealImage`].
//!
//! Supported on read: PNG with 1–4 channels at 8 or 16 bits, TIFF (chunky,
//! uncompressed/deflate/LZW) with any band count at 8 or 16 bits, and 32-bit
//! float TIFF for real-valued images.

use std::io::{BufReader, Cursor};
use std::path::Path;

use thiserror::Error;
use tiff::decoder::{Decoder as TiffDecoder, DecodingResult};
use tiff::encoder::colortype::{Gray16, Gray32Float, Gray8};
use tiff::encoder::{Compression, DeflateLevel, TiffEncoder};
use tiff::tags::ExtraSamples;
use tiff::ColorType as TiffColor;

use crate::catalog::SceneRecord;
use crate::raster::{BitDepth, ImageTile, Plane, RasterError, RealImage};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("unsupported raster: {0}")]
    Unsupported(String),
    #[error("file has {found} bands but the record declares {declared}")]
    BandCountMismatch { declared: usize, found: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

impl From<png::DecodingError> for CodecError {
    fn from(e: png::DecodingError) -> Self {
        CodecError::Decode(e.to_string())
    }
}

impl From<tiff::TiffError> for CodecError {
    fn from(e: tiff::TiffError) -> Self {
        CodecError::Decode(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiffCompression {
    #[default]
    None,
    Deflate,
}

/// Integer raster straight off disk, band-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRaster {
    pub width: u32,
    pub height: u32,
    pub bands: usize,
    pub bit_depth: BitDepth,
    pub pixels: Vec<u16>,
}

enum Samples {
    Int(RawRaster),
    Float {
        width: u32,
        height: u32,
        bands: usize,
        data: Vec<f32>,
    },
}

fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
}

fn is_tiff(bytes: &[u8]) -> bool {
    bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*")
}

fn deinterleave<T: Copy>(interleaved: &[T], bands: usize) -> Vec<T> {
    if bands == 1 {
        return interleaved.to_vec();
    }
    let n = interleaved.len() / bands;
    let mut out = Vec::with_capacity(interleaved.len());
    for b in 0..bands {
        out.extend((0..n).map(|i| interleaved[i * bands + b]));
    }
    out
}

fn interleave<T: Copy>(planar: &[T], bands: usize) -> Vec<T> {
    if bands == 1 {
        return planar.to_vec();
    }
    let n = planar.len() / bands;
    let mut out = Vec::with_capacity(planar.len());
    for i in 0..n {
        out.extend((0..bands).map(|b| planar[b * n + i]));
    }
    out
}

fn decode_png(bytes: &[u8]) -> Result<RawRaster, CodecError> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CodecError::Decode("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let bands = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(CodecError::Unsupported("indexed PNG".into())),
    };
    let (bit_depth, samples): (BitDepth, Vec<u16>) = match info.bit_depth {
        png::BitDepth::Eight => (BitDepth::Eight, buf.iter().map(|&v| v as u16).collect()),
        png::BitDepth::Sixteen => (
            BitDepth::Sixteen,
            buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        ),
        other => return Err(CodecError::Unsupported(format!("PNG bit depth {other:?}"))),
    };
    let expected = info.width as usize * info.height as usize * bands;
    if samples.len() != expected {
        return Err(CodecError::Decode("PNG frame size mismatch".into()));
    }
    Ok(RawRaster {
        width: info.width,
        height: info.height,
        bands,
        bit_depth,
        pixels: deinterleave(&samples, bands),
    })
}

fn decode_tiff(bytes: &[u8]) -> Result<Samples, CodecError> {
    let mut decoder = TiffDecoder::new(Cursor::new(bytes))?;
    let (width, height) = decoder.dimensions()?;
    let bands = match decoder.colortype()? {
        TiffColor::Gray(_) => 1,
        TiffColor::GrayA(_) => 2,
        TiffColor::RGB(_) => 3,
        TiffColor::RGBA(_) => 4,
        TiffColor::Multiband { num_samples, .. } => num_samples as usize,
        other => return Err(CodecError::Unsupported(format!("TIFF color type {other:?}"))),
    };
    let expected = width as usize * height as usize * bands;
    let check = |len: usize| {
        if len == expected {
            Ok(())
        } else {
            Err(CodecError::Decode(format!("TIFF has {len} samples, expected {expected}")))
        }
    };
    Ok(match decoder.read_image()? {
        DecodingResult::U8(v) => {
            check(v.len())?;
            let interleaved: Vec<u16> = v.into_iter().map(u16::from).collect();
            Samples::Int(RawRaster {
                width,
                height,
                bands,
                bit_depth: BitDepth::Eight,
                pixels: deinterleave(&interleaved, bands),
            })
        }
        DecodingResult::U16(v) => {
            check(v.len())?;
            Samples::Int(RawRaster {
                width,
                height,
                bands,
                bit_depth: BitDepth::Sixteen,
                pixels: deinterleave(&v, bands),
            })
        }
        DecodingResult::F32(v) => {
            check(v.len())?;
            Samples::Float {
                width,
                height,
                bands,
                data: deinterleave(&v, bands),
            }
        }
        _ => return Err(CodecError::Unsupported("TIFF sample format".into())),
    })
}

fn decode_any(bytes: &[u8]) -> Result<Samples, CodecError> {
    if is_png(bytes) {
        decode_png(bytes).map(Samples::Int)
    } else if is_tiff(bytes) {
        decode_tiff(bytes)
    } else {
        Err(CodecError::Decode("neither PNG nor TIFF signature".into()))
    }
}

/// Decodes an 8/16-bit integer raster.
pub fn decode_raster(bytes: &[u8]) -> Result<RawRaster, CodecError> {
    match decode_any(bytes)? {
        Samples::Int(raw) => Ok(raw),
        Samples::Float { .. } => Err(CodecError::Unsupported("float raster where integers expected".into())),
    }
}

pub fn read_raster(path: &Path) -> Result<RawRaster, CodecError> {
    decode_raster(&std::fs::read(path)?)
}

/// Loads the raster behind a catalog record and attaches its band labels.
pub fn load_tile(record: &SceneRecord) -> Result<ImageTile, CodecError> {
    let raw = read_raster(&record.path)?;
    if raw.bands != record.bands.len() {
        return Err(CodecError::BandCountMismatch {
            declared: record.bands.len(),
            found: raw.bands,
        });
    }
    Ok(ImageTile::new(
        raw.width,
        raw.height,
        raw.bit_depth,
        record.bands.clone(),
        raw.pixels,
    )?)
}

/// Reads any supported raster as real planes scaled into the unit range:
/// integer samples are divided by the bit-depth maximum, float samples are
/// returned as stored.
pub fn read_real_image(path: &Path) -> Result<RealImage, CodecError> {
    let bytes = std::fs::read(path)?;
    let (width, height, bands, data): (u32, u32, usize, Vec<f64>) = match decode_any(&bytes)? {
        Samples::Int(raw) => {
            let max = raw.bit_depth.max_value() as f64;
            (
                raw.width,
                raw.height,
                raw.bands,
                raw.pixels.iter().map(|&v| v as f64 / max).collect(),
            )
        }
        Samples::Float {
            width,
            height,
            bands,
            data,
        } => (width, height, bands, data.into_iter().map(f64::from).collect()),
    };
    let n = width as usize * height as usize;
    let planes = (0..bands)
        .map(|b| Plane::new(width, height, data[b * n..(b + 1) * n].to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RealImage::new(planes)?)
}

pub fn encode_png(tile: &ImageTile) -> Result<Vec<u8>, CodecError> {
    let color = match tile.bands() {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        n => return Err(CodecError::Unsupported(format!("PNG cannot hold {n} bands"))),
    };
    let interleaved = interleave(tile.pixels(), tile.bands());
    let data: Vec<u8> = match tile.bit_depth() {
        BitDepth::Eight => interleaved.iter().map(|&v| v as u8).collect(),
        BitDepth::Sixteen => interleaved.iter().flat_map(|v| v.to_be_bytes()).collect(),
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, tile.width(), tile.height());
        encoder.set_color(color);
        encoder.set_depth(match tile.bit_depth() {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = encoder
            .write_header()
            .map_err(|e| CodecError::Encode(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| CodecError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| CodecError::Encode(e.to_string()))?;
    }
    Ok(out)
}

fn tiff_encoder(
    out: &mut Cursor<Vec<u8>>,
    compression: TiffCompression,
) -> Result<TiffEncoder<&mut Cursor<Vec<u8>>>, CodecError> {
    let encoder = TiffEncoder::new(out).map_err(|e| CodecError::Encode(e.to_string()))?;
    Ok(match compression {
        TiffCompression::None => encoder,
        TiffCompression::Deflate => encoder.with_compression(Compression::Deflate(DeflateLevel::Fast)),
    })
}

macro_rules! write_multiband {
    ($encoder:expr, $color:ty, $width:expr, $height:expr, $bands:expr, $data:expr) => {{
        let mut image = $encoder
            .new_image::<$color>($width, $height)
            .map_err(|e| CodecError::Encode(e.to_string()))?;
        if $bands > 1 {
            image
                .extra_samples(&vec![ExtraSamples::Unspecified; $bands - 1])
                .map_err(|e| CodecError::Encode(e.to_string()))?;
        }
        image.write_data($data).map_err(|e| CodecError::Encode(e.to_string()))?;
    }};
}

/// Chunky (pixel-interleaved) TIFF with one sample per band.
pub fn encode_tiff(tile: &ImageTile, compression: TiffCompression) -> Result<Vec<u8>, CodecError> {
    let mut out = Cursor::new(Vec::new());
    {
        let mut encoder = tiff_encoder(&mut out, compression)?;
        let interleaved = interleave(tile.pixels(), tile.bands());
        match tile.bit_depth() {
            BitDepth::Eight => {
                let data: Vec<u8> = interleaved.iter().map(|&v| v as u8).collect();
                write_multiband!(encoder, Gray8, tile.width(), tile.height(), tile.bands(), &data);
            }
            BitDepth::Sixteen => {
                write_multiband!(encoder, Gray16, tile.width(), tile.height(), tile.bands(), &interleaved);
            }
        }
    }
    Ok(out.into_inner())
}

/// 32-bit float TIFF, one sample per plane.
pub fn encode_float_tiff(image: &RealImage) -> Result<Vec<u8>, CodecError> {
    let planar: Vec<f32> = image.samples().map(|v| v as f32).collect();
    let data = interleave(&planar, image.channels());
    let mut out = Cursor::new(Vec::new());
    {
        let mut encoder = tiff_encoder(&mut out, TiffCompression::None)?;
        write_multiband!(encoder, Gray32Float, image.width(), image.height(), image.channels(), &data);
    }
    Ok(out.into_inner())
}
