//! Double-double arithmetic (about 106 bits of mantissa) and the linear
//! algebra the Fréchet oracle needs: Cholesky and cyclic Jacobi.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let s = self.hi.sqrt();
        let s2 = Dd::from(s) * Dd::from(s);
        let r = self - s2;
        quick_two_sum(s, r.hi / (2.0 * s))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        let q = quick_two_sum(q1, q2);
        q + Dd::from(q3)
    }
}

pub type Mat = Vec<Vec<Dd>>;

pub fn to_mat(rows: &[Vec<f64>]) -> Mat {
    rows.iter().map(|r| r.iter().map(|&v| Dd::from(v)).collect()).collect()
}

/// Lower-triangular `L` with `L·Lᵀ = a`.
pub fn cholesky(a: &Mat) -> Mat {
    let n = a.len();
    let mut l = vec![vec![Dd::ZERO; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    l
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Mat) -> Vec<Dd> {
    let n = a.len();
    for _sweep in 0..100 {
        let mut off = Dd::ZERO;
        let mut total = Dd::ZERO;
        for i in 0..n {
            for j in 0..n {
                let sq = a[i][j] * a[i][j];
                total = total + sq;
                if i != j {
                    off = off + sq;
                }
            }
        }
        if off.to_f64() <= 1e-60 * total.to_f64() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].to_f64() == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (Dd::from(2.0) * a[p][q]);
                let t = Dd::ONE / (theta.abs() + (theta * theta + Dd::ONE).sqrt());
                let t = if theta.to_f64() < 0.0 { -t } else { t };
                let c = Dd::ONE / (t * t + Dd::ONE).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// `‖μ₁ − μ₂‖² + Tr Σ₁ + Tr Σ₂ − 2·Σ √λᵢ(Σ₁Σ₂)` with both covariances
/// shifted by `eps·I`. The eigenvalues of `Σ₁Σ₂` are taken from the
/// congruent symmetric matrix `Lᵀ Σ₂ L`, where `Σ₁ = L Lᵀ`.
pub fn frechet_oracle(mu1: &[f64], cov1: &[Vec<f64>], mu2: &[f64], cov2: &[Vec<f64>], eps: f64) -> f64 {
    let n = mu1.len();
    let mut s1 = to_mat(cov1);
    let mut s2 = to_mat(cov2);
    for i in 0..n {
        s1[i][i] = s1[i][i] + Dd::from(eps);
        s2[i][i] = s2[i][i] + Dd::from(eps);
    }
    let mut d = Dd::ZERO;
    for i in 0..n {
        let diff = Dd::from(mu1[i]) - Dd::from(mu2[i]);
        d = d + diff * diff + s1[i][i] + s2[i][i];
    }
    let l = cholesky(&s1);
    // m = Lᵀ · s2 · L
    let mut tmp = vec![vec![Dd::ZERO; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = Dd::ZERO;
            for k in 0..n {
                s = s + s2[i][k] * l[k][j];
            }
            tmp[i][j] = s;
        }
    }
    let mut m = vec![vec![Dd::ZERO; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = Dd::ZERO;
            for k in 0..n {
                s = s + l[k][i] * tmp[k][j];
            }
            m[i][j] = s;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let avg = (m[i][j] + m[j][i]) / Dd::from(2.0);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    let cross = jacobi_eigenvalues(m)
        .into_iter()
        .fold(Dd::ZERO, |acc, lambda| acc + lambda.sqrt());
    (d - Dd::from(2.0) * cross).to_f64()
}
