//! Dense Householder QR for the small least-squares subproblems of the
//! fitter. Matrices are column-major: column `j` of an `m × n` matrix lives
//! at `data[j * m..(j + 1) * m]`.

use alloc::vec;
use alloc::vec::Vec;
use libm::{fabs, sqrt};

/// In-place Householder QR factorization `A = Q R` of an `m × n` matrix
/// with `m ≥ n`.
#[derive(Debug, Clone)]
pub struct Qr {
    m: usize,
    n: usize,
    /// Householder vectors below the diagonal, `R` above it.
    data: Vec<f64>,
    rdiag: Vec<f64>,
}

impl Qr {
    pub fn new(mut data: Vec<f64>, m: usize, n: usize) -> Self {
        assert!(m >= n, "QR needs at least as many rows as columns");
        assert_eq!(data.len(), m * n);
        let mut rdiag = vec![0.0; n];
        for k in 0..n {
            let col = k * m;
            let mut norm = 0.0;
            for i in k..m {
                norm = libm::hypot(norm, data[col + i]);
            }
            if norm != 0.0 {
                if data[col + k] < 0.0 {
                    norm = -norm;
                }
                for i in k..m {
                    data[col + i] /= norm;
                }
                data[col + k] += 1.0;
                for j in (k + 1)..n {
                    let cj = j * m;
                    let mut s = 0.0;
                    for i in k..m {
                        s += data[col + i] * data[cj + i];
                    }
                    s = -s / data[col + k];
                    for i in k..m {
                        data[cj + i] += s * data[col + i];
                    }
                }
            }
            rdiag[k] = -norm;
        }
        Self { m, n, data, rdiag }
    }

    /// Overwrites `b` (length `m`) with `Qᵀ b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.m);
        let m = self.m;
        for k in 0..self.n {
            let col = k * m;
            if self.rdiag[k] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for i in k..m {
                s += self.data[col + i] * b[i];
            }
            s = -s / self.data[col + k];
            for i in k..m {
                b[i] += s * self.data[col + i];
            }
        }
    }

    /// Upper-triangular factor as a column-major `n × n` matrix.
    pub fn r(&self) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..j {
                r[j * n + i] = self.data[j * self.m + i];
            }
            r[j * n + j] = self.rdiag[j];
        }
        r
    }

    /// True when some diagonal entry of `R` is negligible relative to the
    /// largest one.
    pub fn is_rank_deficient(&self, rel_tol: f64) -> bool {
        let max = self.rdiag.iter().fold(0.0f64, |a, &d| a.max(fabs(d)));
        max == 0.0 || self.rdiag.iter().any(|&d| fabs(d) <= rel_tol * max)
    }

    /// Least-squares solution of `A x ≈ b`. Returns `None` if `R` is
    /// numerically singular.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        if self.is_rank_deficient(1e-14) {
            return None;
        }
        let mut y = b.to_vec();
        self.apply_qt(&mut y);
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.data[j * self.m + i] * x[j];
            }
            x[i] = s / self.rdiag[i];
        }
        if x.iter().all(|v| v.is_finite()) {
            Some(x)
        } else {
            None
        }
    }
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |a, &x| a.max(fabs(x)));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|&x| (x / scale) * (x / scale)).sum();
    scale * sqrt(s)
}
