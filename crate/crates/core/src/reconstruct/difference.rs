use nalgebra::DMatrix;

use super::banded::BandedSymmetric;
use crate::error::ReconstructError;

/// A finite-difference operator applied along the time axis.
///
/// Row `i` applies `stencil` to samples `i..i + stencil.len()`, so an operator
/// over `n` samples has `n - stencil.len() + 1` rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceOperator {
    stencil: &'static [f64],
    n: usize,
}

/// Acceleration: `x[i] - 2x[i+1] + x[i+2]`.
pub const SECOND_DIFFERENCE: &[f64] = &[1.0, -2.0, 1.0];

/// Jerk: `-x[i] + 2x[i+1] - 2x[i+3] + x[i+4]`, a centered third difference
/// spanning five samples. It annihilates quadratics.
pub const THIRD_DIFFERENCE: &[f64] = &[-1.0, 2.0, 0.0, -2.0, 1.0];

impl DifferenceOperator {
    pub fn second(n: usize) -> Self {
        Self {
            stencil: SECOND_DIFFERENCE,
            n,
        }
    }

    pub fn third(n: usize) -> Self {
        Self {
            stencil: THIRD_DIFFERENCE,
            n,
        }
    }

    pub fn rows(&self) -> usize {
        (self.n + 1).saturating_sub(self.stencil.len())
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn stencil(&self) -> &'static [f64] {
        self.stencil
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "operator width mismatch");
        x.windows(self.stencil.len())
            .map(|w| w.iter().zip(self.stencil).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows(), self.n);
        for i in 0..self.rows() {
            for (k, &c) in self.stencil.iter().enumerate() {
                d[(i, i + k)] = c;
            }
        }
        d
    }

    /// Adds `weight * DᵀD` into a banded symmetric matrix.
    pub(crate) fn add_gram(&self, weight: f64, m: &mut BandedSymmetric) {
        if weight == 0.0 {
            return;
        }
        let s = self.stencil;
        for row in 0..self.rows() {
            for a in 0..s.len() {
                for b in 0..=a {
                    let v = weight * s[a] * s[b];
                    if v != 0.0 {
                        m.add(row + a, row + b, v);
                    }
                }
            }
        }
    }
}

/// Second- and third-difference operators over `n` samples.
pub fn build_difference_operators(
    n: usize,
) -> Result<(DifferenceOperator, DifferenceOperator), ReconstructError> {
    if n < 5 {
        return Err(ReconstructError::TooShort(n));
    }
    Ok((DifferenceOperator::second(n), DifferenceOperator::third(n)))
}
