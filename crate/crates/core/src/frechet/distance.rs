use nalgebra::DMatrix;
use thiserror::Error;

use super::sqrtm::{sqrtm_spd, SqrtmError};
use super::stats::GaussianStats;

#[derive(Debug, Error, PartialEq)]
pub enum FrechetError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Sqrtm(#[from] SqrtmError),
}

fn regularized(cov: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut c = cov.clone();
    for i in 0..c.nrows() {
        c[(i, i)] += eps;
    }
    c
}

/// One side of the distance with its covariance square root cached, for
/// scoring many distributions against the same reference.
#[derive(Debug, Clone)]
pub struct FrechetReference {
    stats: GaussianStats,
    cov: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
    eps: f64,
}

impl FrechetReference {
    pub fn new(stats: GaussianStats, eps: f64) -> Result<Self, FrechetError> {
        let cov = regularized(&stats.cov, eps);
        let cov_sqrt = sqrtm_spd(&cov)?;
        Ok(Self {
            stats,
            cov,
            cov_sqrt,
            eps,
        })
    }

    pub fn stats(&self) -> &GaussianStats {
        &self.stats
    }

    /// `‖μ_r − μ_o‖² + Tr(Σ_r + Σ_o − 2·(Σ_r^½ Σ_o Σ_r^½)^½)`, clamped at 0.
    pub fn distance(&self, other: &GaussianStats) -> Result<f64, FrechetError> {
        if other.dim() != self.stats.dim() {
            return Err(FrechetError::DimensionMismatch(self.stats.dim(), other.dim()));
        }
        let other_cov = regularized(&other.cov, self.eps);
        let mean_term = (&self.stats.mean - &other.mean).norm_squared();
        let inner = &self.cov_sqrt * &other_cov * &self.cov_sqrt;
        let inner = (&inner + inner.transpose()) * 0.5;
        let cross = sqrtm_spd(&inner)?.trace();
        let d = mean_term + self.cov.trace() + other_cov.trace() - 2.0 * cross;
        Ok(d.max(0.0))
    }
}

/// Fréchet distance between two Gaussians, each covariance regularized by `eps·I`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats, eps: f64) -> Result<f64, FrechetError> {
    if a.dim() != b.dim() {
        return Err(FrechetError::DimensionMismatch(a.dim(), b.dim()));
    }
    FrechetReference::new(a.clone(), eps)?.distance(b)
}
