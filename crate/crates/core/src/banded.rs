//! Symmetric banded matrices and their Cholesky factors.
//!
//! The stiffness operator of a tensor finite-difference grid has bandwidth
//! 1 (1D) or `nx` (2D). Every reduced system solved by the active-set cone
//! projection is a principal submatrix, which keeps the same bandwidth bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower band storage: `band[i][k] = A[i][i - k]` for `k <= bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    bandwidth: usize,
    band: Vec<Vec<f64>>,
}

impl BandedSym {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            band: vec![vec![0.0; bandwidth + 1]; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bandwidth {
            0.0
        } else {
            self.band[hi][k]
        }
    }

    /// Adds `value` to both `(i, j)` and `(j, i)` (once on the diagonal).
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        assert!(k <= self.bandwidth, "entry ({i},{j}) outside the band");
        self.band[hi][k] += value;
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let row = &self.band[i];
            y[i] += row[0] * x[i];
            for k in 1..=self.bandwidth.min(i) {
                let a = row[k];
                if a != 0.0 {
                    y[i] += a * x[i - k];
                    y[i - k] += a * x[i];
                }
            }
        }
        y
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(x))
    }

    /// Principal submatrix on the sorted index set `idx`.
    pub fn principal(&self, idx: &[usize]) -> BandedSym {
        let m = idx.len();
        let mut sub = BandedSym::zeros(m, self.bandwidth.min(m.saturating_sub(1)));
        for a in 0..m {
            for b in a.saturating_sub(sub.bandwidth)..=a {
                let v = self.get(idx[a], idx[b]);
                if v != 0.0 {
                    sub.band[a][a - b] = v;
                }
            }
        }
        sub
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bandwidth;
        // l[i][k] = L[i][i - k]
        let mut l = vec![vec![0.0; bw + 1]; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = self.get(i, j);
                let kmin = i.saturating_sub(bw).max(j.saturating_sub(bw));
                for k in kmin..j {
                    s -= l[i][i - k] * l[j][j - k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i][0] = s.sqrt();
                } else {
                    l[i][i - j] = s / l[j][0];
                }
            }
        }
        Ok(BandedCholesky {
            n,
            bandwidth: bw,
            l,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    l: Vec<Vec<f64>>,
}

impl BandedCholesky {
    /// Solves `L y = b`.
    pub fn forward(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        for i in 0..self.n {
            let mut s = y[i];
            for k in 1..=self.bandwidth.min(i) {
                s -= self.l[i][k] * y[i - k];
            }
            y[i] = s / self.l[i][0];
        }
        y
    }

    /// Solves `L^T x = y`.
    pub fn backward(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut x = y.clone();
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in 1..=self.bandwidth.min(self.n - 1 - i) {
                s -= self.l[i + k][k] * x[i + k];
            }
            x[i] = s / self.l[i][0];
        }
        x
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.backward(&self.forward(b))
    }

    /// Entries of the lower factor as `(row, col, value)` triplets.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for k in 0..=self.bandwidth.min(i) {
                let v = self.l[i][k];
                if v != 0.0 {
                    out.push((i, i - k, v));
                }
            }
        }
        out
    }
}
