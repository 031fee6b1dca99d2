//! SAR preprocessing: 3-channel composites, median blur, normalization.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BitDepth, ImageTile, Plane, RasterError, RealImage};

/// Largest f64 strictly below 1; tanh outputs are clamped to ±this so the
/// open interval survives rounding for large arguments.
pub const TANH_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;
const TANH_DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SarError {
    #[error("plane dimensions differ: {0}×{1} vs {2}×{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("non-finite value in SAR input or composite")]
    NonFinite,
    #[error("median kernel size {0} must be odd and at least 3")]
    EvenKernel(u32),
    #[error("plane {width}×{height} is smaller than the {k}×{k} kernel")]
    PlaneTooSmall { width: u32, height: u32, k: u32 },
    #[error("invalid normalization: {0}")]
    InvalidSpec(String),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

// ---------------------------------------------------------------------------
// Composite recipes

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Vv,
    Vh,
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self, vv: f64, vh: f64) -> f64 {
        match self {
            Expr::Num(n) => *n,
            Expr::Vv => vv,
            Expr::Vh => vh,
            Expr::Neg(e) => -e.eval(vv, vh),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(vv, vh), b.eval(vv, vh));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    _ => a / b,
                }
            }
        }
    }
}

struct ExprParser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> ExprParser<'a> {
    fn parse(src: &'a str) -> Result<Expr, SarError> {
        let mut p = ExprParser { src, pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("trailing input"));
        }
        Ok(e)
    }

    fn error(&self, what: &str) -> SarError {
        SarError::InvalidRecipe(format!("{what} at offset {} in `{}`", self.pos, self.src))
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expr(&mut self) -> Result<Expr, SarError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, SarError> {
        let mut lhs = self.factor()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, SarError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let rest = &self.src[self.pos..];
                let len = rest
                    .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E'))
                    .unwrap_or(rest.len());
                let n = rest[..len].parse().map_err(|_| self.error("bad number"))?;
                self.pos += len;
                Ok(Expr::Num(n))
            }
            Some(_) => {
                let rest = &self.src[self.pos..];
                let len = rest
                    .find(|c: char| !c.is_ascii_alphanumeric())
                    .unwrap_or(rest.len());
                let e = match rest[..len].to_ascii_lowercase().as_str() {
                    "vv" => Expr::Vv,
                    "vh" => Expr::Vh,
                    _ => return Err(self.error("unknown identifier")),
                };
                self.pos += len;
                Ok(e)
            }
            None => Err(self.error("unexpected end of expression")),
        }
    }
}

/// How the three composite channels are derived from VV and VH.
///
/// Textual form: `vv_vh_avg`, or `custom: <expr>; <expr>; <expr>` where each
/// expression uses `vv`, `vh`, numbers, `+ - * /` and parentheses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Recipe {
    #[default]
    VvVhAvg,
    Custom(String, Box<[ExprHandle; 3]>),
}

/// Parsed recipe channel expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprHandle(Expr);

impl std::str::FromStr for Recipe {
    type Err = SarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "vv_vh_avg" {
            return Ok(Recipe::VvVhAvg);
        }
        let body = s
            .strip_prefix("custom:")
            .ok_or_else(|| SarError::InvalidRecipe(format!("unknown recipe `{s}`")))?;
        let parts: Vec<&str> = body.split(';').collect();
        if parts.len() != 3 {
            return Err(SarError::InvalidRecipe(format!(
                "custom recipe needs 3 `;`-separated expressions, got {}",
                parts.len()
            )));
        }
        let exprs = [
            ExprHandle(ExprParser::parse(parts[0].trim())?),
            ExprHandle(ExprParser::parse(parts[1].trim())?),
            ExprHandle(ExprParser::parse(parts[2].trim())?),
        ];
        Ok(Recipe::Custom(s.to_string(), Box::new(exprs)))
    }
}

impl TryFrom<String> for Recipe {
    type Error = SarError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Recipe> for String {
    fn from(r: Recipe) -> Self {
        r.to_string()
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::VvVhAvg => f.write_str("vv_vh_avg"),
            Recipe::Custom(src, _) => f.write_str(src),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarComposite {
    pub recipe: Recipe,
    pub channels: [Plane; 3],
}

impl SarComposite {
    pub fn into_image(self) -> RealImage {
        RealImage::new(self.channels.into()).expect("composite planes share one shape")
    }
}

fn check_finite(plane: &Plane) -> Result<(), SarError> {
    if plane.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SarError::NonFinite)
    }
}

pub fn synthesize_3ch(vv: &Plane, vh: &Plane, recipe: &Recipe) -> Result<SarComposite, SarError> {
    if !vv.same_shape(vh) {
        return Err(SarError::DimensionMismatch(vv.width(), vv.height(), vh.width(), vh.height()));
    }
    check_finite(vv)?;
    check_finite(vh)?;
    let channels = match recipe {
        Recipe::VvVhAvg => {
            let avg = vv.data().iter().zip(vh.data()).map(|(a, b)| (a + b) / 2.0).collect();
            [vv.clone(), vh.clone(), Plane::new(vv.width(), vv.height(), avg)?]
        }
        Recipe::Custom(_, exprs) => {
            let make = |e: &ExprHandle| -> Result<Plane, SarError> {
                let data: Vec<f64> = vv.data().iter().zip(vh.data()).map(|(&a, &b)| e.0.eval(a, b)).collect();
                let plane = Plane::new(vv.width(), vv.height(), data)?;
                check_finite(&plane)?;
                Ok(plane)
            };
            [make(&exprs[0])?, make(&exprs[1])?, make(&exprs[2])?]
        }
    };
    Ok(SarComposite {
        recipe: recipe.clone(),
        channels,
    })
}

// ---------------------------------------------------------------------------
// Median blur

/// k×k median filter with edge replication; rows are processed in parallel.
pub fn median_blur(plane: &Plane, k: u32) -> Result<Plane, SarError> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(SarError::EvenKernel(k));
    }
    let (w, h) = (plane.width(), plane.height());
    if w < k || h < k {
        return Err(SarError::PlaneTooSmall { width: w, height: h, k });
    }
    let r = (k / 2) as i64;
    let (wi, hi) = (w as i64, h as i64);
    let src = plane.data();
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        let mut window = Vec::with_capacity((k * k) as usize);
        for (x, px) in row.iter_mut().enumerate() {
            window.clear();
            for dy in -r..=r {
                let yy = (y as i64 + dy).clamp(0, hi - 1) as usize;
                for dx in -r..=r {
                    let xx = (x as i64 + dx).clamp(0, wi - 1) as usize;
                    window.push(src[yy * w as usize + xx]);
                }
            }
            let mid = window.len() / 2;
            *px = *window.select_nth_unstable_by(mid, f64::total_cmp).1;
        }
    });
    Ok(Plane::new(w, h, out)?)
}

// ---------------------------------------------------------------------------
// Normalization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormVariant {
    /// Min-max to [0, 1], then to [−1, 1].
    #[default]
    Dataset1Minmax,
    /// Robust standardization (median/MAD) then tanh.
    Dataset2Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinmaxMode {
    #[default]
    PerImage,
    GlobalFromConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSpec {
    pub variant: NormVariant,
    pub tanh_scale: f64,
    pub minmax_mode: MinmaxMode,
    pub global_min: Option<f64>,
    pub global_max: Option<f64>,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            variant: NormVariant::Dataset1Minmax,
            tanh_scale: 1.0,
            minmax_mode: MinmaxMode::PerImage,
            global_min: None,
            global_max: None,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<(), SarError> {
        if !(self.tanh_scale > 0.0 && self.tanh_scale.is_finite()) {
            return Err(SarError::InvalidSpec("norm.tanh_scale must be positive".into()));
        }
        if self.variant == NormVariant::Dataset1Minmax && self.minmax_mode == MinmaxMode::GlobalFromConfig {
            match (self.global_min, self.global_max) {
                (Some(lo), Some(hi)) if lo < hi => {}
                _ => {
                    return Err(SarError::InvalidSpec(
                        "global_from_config needs norm.global_min < norm.global_max".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub image: RealImage,
    /// Planes that were constant under per-image min-max and mapped to 0.
    pub degenerate_planes: Vec<usize>,
}

fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let upper = *values.select_nth_unstable_by(mid, f64::total_cmp).1;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Normalizes one plane; the flag reports a degenerate constant plane.
pub fn normalize_plane(plane: &Plane, spec: &NormalizationSpec) -> Result<(Plane, bool), SarError> {
    spec.validate()?;
    check_finite(plane)?;
    if plane.data().is_empty() {
        return Ok((plane.clone(), false));
    }
    match spec.variant {
        NormVariant::Dataset1Minmax => {
            let (lo, hi) = match spec.minmax_mode {
                MinmaxMode::PerImage => plane
                    .data()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
                MinmaxMode::GlobalFromConfig => (spec.global_min.unwrap(), spec.global_max.unwrap()),
            };
            if hi <= lo {
                return Ok((Plane::filled(plane.width(), plane.height(), 0.0), true));
            }
            let range = hi - lo;
            Ok((
                plane.map(|v| (((v - lo) / range).clamp(0.0, 1.0) * 2.0 - 1.0).clamp(-1.0, 1.0)),
                false,
            ))
        }
        NormVariant::Dataset2Tanh => {
            let mut values = plane.data().to_vec();
            let median = median_of(&mut values);
            for v in values.iter_mut() {
                *v = (*v - median).abs();
            }
            let mad = median_of(&mut values);
            let denom = spec.tanh_scale * mad + TANH_DENOM_FLOOR;
            Ok((
                plane.map(|v| ((v - median) / denom).tanh().clamp(-TANH_LIMIT, TANH_LIMIT)),
                false,
            ))
        }
    }
}

/// Normalizes every plane independently. Constant planes under per-image
/// min-max map to 0 and are logged rather than failing the batch.
pub fn normalize(image: &RealImage, spec: &NormalizationSpec) -> Result<Normalized, SarError> {
    let mut planes = Vec::with_capacity(image.channels());
    let mut degenerate_planes = Vec::new();
    for (i, plane) in image.planes().iter().enumerate() {
        let (out, degenerate) = normalize_plane(plane, spec)?;
        if degenerate {
            tracing::warn!(plane = i, "constant plane under per-image min-max normalization; mapped to 0");
            degenerate_planes.push(i);
        }
        planes.push(out);
    }
    Ok(Normalized {
        image: RealImage::new(planes)?,
        degenerate_planes,
    })
}

/// 8-bit preview of a [−1, 1] image: `round((x + 1) / 2 · 255)`.
pub fn preview_rgb8(image: &RealImage) -> Result<ImageTile, SarError> {
    let pixels = image
        .samples()
        .map(|x| (((x + 1.0) / 2.0 * 255.0).round()).clamp(0.0, 255.0) as u16)
        .collect();
    let labels = (0..image.channels()).map(|c| format!("C{c}")).collect();
    Ok(ImageTile::new(image.width(), image.height(), BitDepth::Eight, labels, pixels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarConfig {
    pub recipe: Recipe,
    pub median_k: u32,
    /// Documents whether inputs are in dB; values are never converted.
    pub db_input: bool,
    pub vv_band: String,
    pub vh_band: String,
}

impl Default for SarConfig {
    fn default() -> Self {
        Self {
            recipe: Recipe::VvVhAvg,
            median_k: 3,
            db_input: false,
            vv_band: "VV".into(),
            vh_band: "VH".into(),
        }
    }
}

/// Composite → per-channel median blur → normalization, on a raw SAR tile.
pub fn prepare_sar(tile: &ImageTile, cfg: &SarConfig, norm: &NormalizationSpec) -> Result<Normalized, SarError> {
    let to_plane = |label: &str| -> Result<Plane, SarError> {
        let band = tile.band_by_label(label)?;
        Ok(Plane::new(tile.width(), tile.height(), band.iter().map(|&v| v as f64).collect())?)
    };
    let composite = synthesize_3ch(&to_plane(&cfg.vv_band)?, &to_plane(&cfg.vh_band)?, &cfg.recipe)?;
    let blurred = composite
        .channels
        .iter()
        .map(|p| median_blur(p, cfg.median_k))
        .collect::<Result<Vec<_>, _>>()?;
    normalize(&RealImage::new(blurred)?, norm)
}
