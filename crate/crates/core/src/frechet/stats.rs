//! Single-pass mean/covariance with mergeable partial accumulators.
//!
//! Updates follow Welford; merges use the pairwise combination of Chan et al.
//! Only the upper triangle of the co-moment matrix is accumulated, so the
//! resulting covariance is exactly symmetric.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no feature vectors to accumulate")]
    EmptyStream,
    #[error("vector of dimension {got} pushed into a dimension-{expected} accumulator")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFinite,
}

/// Sample count, mean and unbiased covariance of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub n: u64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    dim: usize,
    n: u64,
    mean: Vec<f64>,
    /// Row-major d×d, upper triangle only.
    comoment: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            n: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), StatsError> {
        if x.len() != self.dim {
            return Err(StatsError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        self.n += 1;
        let inv_n = 1.0 / self.n as f64;
        let d = self.dim;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * inv_n;
        }
        // delta_after = x - new_mean
        let after: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (i, (row, di)) in self.comoment.chunks_exact_mut(d).zip(&delta).enumerate() {
            for (c, a) in row[i..].iter_mut().zip(&after[i..]) {
                *c += di * a;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<(), StatsError> {
        if other.dim != self.dim {
            return Err(StatsError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = self.dim;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nb / n;
        for i in 0..d {
            for j in i..d {
                let k = i * d + j;
                self.comoment[k] += other.comoment[k] + delta[i] * delta[j] * w;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * (nb / n);
        }
        self.n += other.n;
        Ok(())
    }

    /// Mean and covariance with divisor `n − 1`; the covariance is all zero
    /// for a single sample.
    pub fn finish(&self) -> Result<GaussianStats, StatsError> {
        if self.n == 0 {
            return Err(StatsError::EmptyStream);
        }
        let d = self.dim;
        let denom = if self.n > 1 { (self.n - 1) as f64 } else { 1.0 };
        let mut cov = DMatrix::zeros(d, d);
        if self.n > 1 {
            for i in 0..d {
                for j in i..d {
                    let v = self.comoment[i * d + j] / denom;
                    cov[(i, j)] = v;
                    cov[(j, i)] = v;
                }
            }
        }
        Ok(GaussianStats {
            n: self.n,
            mean: DVector::from_column_slice(&self.mean),
            cov,
        })
    }
}

/// Streams feature vectors through one accumulator.
pub fn accumulate_stats<I, V>(features: I) -> Result<GaussianStats, StatsError>
where
    I: IntoIterator<Item = V>,
    V: AsRef<[f64]>,
{
    let mut iter = features.into_iter().peekable();
    let dim = iter.peek().ok_or(StatsError::EmptyStream)?.as_ref().len();
    let mut acc = StatsAccumulator::new(dim);
    for v in iter {
        acc.push(v.as_ref())?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(vectors: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = vectors.len();
        let d = vectors[0].len();
        let mut mean = vec![0.0; d];
        for v in vectors {
            for k in 0..d {
                mean[k] += v[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for v in vectors {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (v[i] - mean[i]) * (v[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
        (mean, cov)
    }

    #[test]
    fn two_points() {
        let s = accumulate_stats([[0.0, 0.0], [2.0, 2.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(s.cov, DMatrix::from_element(2, 2, 2.0));
    }

    #[test]
    fn single_vector_zero_cov() {
        let s = accumulate_stats([[3.0, -1.0, 4.0]]).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.mean.as_slice(), &[3.0, -1.0, 4.0]);
        assert_eq!(s.cov, DMatrix::zeros(3, 3));
    }

    #[test]
    fn empty_and_mismatch() {
        assert_eq!(accumulate_stats(Vec::<Vec<f64>>::new()), Err(StatsError::EmptyStream));
        assert_eq!(
            accumulate_stats(vec![vec![1.0, 2.0], vec![1.0]]),
            Err(StatsError::DimensionMismatch { expected: 2, got: 1 })
        );
        let mut a = StatsAccumulator::new(2);
        assert!(a.merge(&StatsAccumulator::new(3)).is_err());
        assert_eq!(a.push(&[f64::NAN, 0.0]), Err(StatsError::NonFinite));
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-10 * b.abs().max(1.0)
    }

    proptest! {
        #[test]
        fn merge_matches_batch(
            vectors in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..100),
            cut in any::<prop::sample::Index>(),
        ) {
            let k = cut.index(vectors.len() + 1);
            let (left, right) = vectors.split_at(k);
            let mut a = StatsAccumulator::new(3);
            left.iter().for_each(|v| a.push(v).unwrap());
            let mut b = StatsAccumulator::new(3);
            right.iter().for_each(|v| b.push(v).unwrap());
            a.merge(&b).unwrap();
            let s = a.finish().unwrap();
            let (mean, cov) = batch(&vectors);
            for i in 0..3 {
                prop_assert!(close(s.mean[i], mean[i]));
                for j in 0..3 {
                    prop_assert!(close(s.cov[(i, j)], cov[i * 3 + j]));
                }
            }
            prop_assert_eq!(s.cov.clone(), s.cov.transpose());
        }

        #[test]
        fn merge_parenthesization(
            vectors in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 3..40),
        ) {
            let third = vectors.len() / 3;
            let parts: Vec<StatsAccumulator> = [&vectors[..third], &vectors[third..2 * third], &vectors[2 * third..]]
                .iter()
                .map(|chunk| {
                    let mut acc = StatsAccumulator::new(2);
                    chunk.iter().for_each(|v| acc.push(v).unwrap());
                    acc
                })
                .collect();
            let mut left = parts[0].clone();
            left.merge(&parts[1]).unwrap();
            left.merge(&parts[2]).unwrap();
            let mut bc = parts[1].clone();
            bc.merge(&parts[2]).unwrap();
            let mut right = parts[0].clone();
            right.merge(&bc).unwrap();
            let (l, r) = (left.finish().unwrap(), right.finish().unwrap());
            for (x, y) in l.cov.iter().zip(r.cov.iter()).chain(l.mean.iter().zip(r.mean.iter())) {
                prop_assert!(close(*x, *y));
            }
        }
    }
}
