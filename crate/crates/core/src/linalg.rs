//! Dense symmetric linear algebra for small (d x d) matrices.
//!
//! Covariance and regression matrices in this crate are symmetric positive
//! definite with d at most a few dozen, so a plain Cholesky factorization is
//! used everywhere; no explicit inverse is ever stored. The minimum
//! eigenvalue (feature-coverage diagnostic) comes from cyclic Jacobi
//! rotations, which are robust for symmetric matrices at this scale.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::Result;

/// Symmetric d x d matrix stored dense row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// `lambda * I`.
    pub fn scaled_identity(dim: usize, lambda: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = lambda;
        }
        SymMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Rank-one update `A += v v^T`.
    pub fn add_outer(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim);
        for i in 0..self.dim {
            let vi = v[i];
            for j in 0..self.dim {
                self.data[i * self.dim + j] += vi * v[j];
            }
        }
    }

    /// Scaled rank-one update `A += c * v v^T`.
    pub fn add_outer_scaled(&mut self, v: &[f64], c: f64) {
        debug_assert_eq!(v.len(), self.dim);
        for i in 0..self.dim {
            let vi = c * v[i];
            for j in 0..self.dim {
                self.data[i * self.dim + j] += vi * v[j];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Cholesky factor `L` with `A = L L^T`. Fails on non-SPD or
    /// non-finite input.
    pub fn cholesky(&self) -> Result<Cholesky> {
        let d = self.dim;
        if !self.is_finite() {
            return Err(CoreError::Numerical {
                what: "non-finite matrix entry in Cholesky",
                step: 0,
            });
        }
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(CoreError::Numerical {
                            what: "matrix not positive definite",
                            step: i,
                        });
                    }
                    l[i * d + i] = math::sqrt(sum);
                } else {
                    l[i * d + j] = sum / l[j * d + j];
                }
            }
        }
        Ok(Cholesky { dim: d, l })
    }

    /// Minimum eigenvalue via cyclic Jacobi rotations.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        if d == 1 {
            return self.data[0];
        }
        let mut a = self.data.clone();
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[i * d + j] * a[i * d + j];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * d + q];
                    if math::abs(apq) < 1e-300 {
                        continue;
                    }
                    let app = a[p * d + p];
                    let aqq = a[q * d + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + math::sqrt(1.0 + theta * theta))
                    } else {
                        -1.0 / (-theta + math::sqrt(1.0 + theta * theta))
                    };
                    let c = 1.0 / math::sqrt(1.0 + t * t);
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * d + k];
                        let aqk = a[q * d + k];
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut min = a[0];
        for i in 1..d {
            if a[i * d + i] < min {
                min = a[i * d + i];
            }
        }
        min
    }
}

/// Lower-triangular Cholesky factor.
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        debug_assert_eq!(b.len(), d);
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l[i * d + k] * y[k];
            }
            y[i] = sum / self.l[i * d + i];
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut sum = y[i];
            for k in (i + 1)..d {
                sum -= self.l[k * d + i] * x[k];
            }
            x[i] = sum / self.l[i * d + i];
        }
        x
    }

    /// Quadratic form `v^T A^{-1} v = ||L^{-1} v||^2`, computed by one
    /// forward substitution; never negative up to rounding.
    pub fn quad_form_inv(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        debug_assert_eq!(v.len(), d);
        let mut y = vec![0.0; d];
        let mut acc = 0.0;
        for i in 0..d {
            let mut sum = v[i];
            for k in 0..i {
                sum -= self.l[i * d + k] * y[k];
            }
            let yi = sum / self.l[i * d + i];
            y[i] = yi;
            acc += yi * yi;
        }
        acc
    }
}
