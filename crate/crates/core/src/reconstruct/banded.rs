//! Symmetric positive-definite banded matrices and their Cholesky factor.

use nalgebra::DMatrix;

use crate::error::ReconstructError;

/// Lower triangle of a symmetric matrix with half-bandwidth `bw`.
///
/// Entry `(i, j)` with `j <= i <= j + bw` lives at `data[i * (bw + 1) + (i - j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymmetric {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSymmetric {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Reads entry `(i, j)`, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and its mirror).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Banded Cholesky `M = L Lᵀ`; `L` keeps the same band. Fails on the
    /// first non-positive pivot.
    pub fn cholesky(&self) -> Result<BandedCholesky, ReconstructError> {
        let bw = self.bw;
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| i * (bw + 1) + (i - j);
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = l[at(i, j)];
                for k in lo..j {
                    sum -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(sum > 0.0 && sum.is_finite()) {
                        return Err(ReconstructError::Singular { row: i, pivot: sum });
                    }
                    l[at(i, i)] = sum.sqrt();
                } else {
                    l[at(i, j)] = sum / l[at(j, j)];
                }
            }
        }
        Ok(BandedCholesky {
            n: self.n,
            bw,
            data: l,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    /// Solves `L Lᵀ x = b` in place, O(n · bw).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l(i, k) * b[k];
            }
            b[i] = s / self.l(i, i);
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + self.bw + 1).min(self.n) {
                s -= self.l(k, i) * b[k];
            }
            b[i] = s / self.l(i, i);
        }
    }
}
