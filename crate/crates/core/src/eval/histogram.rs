//! Additively smoothed histograms and their KL divergence.

use crate::error::EvalError;

/// Uniform bins over `[lo, hi]`; values outside fall in the edge bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, EvalError> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(EvalError::BadHistogram);
        }
        // a degenerate range still needs a positive width
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Ok(Self { lo, hi, bins })
    }

    /// Range spanning the pooled samples.
    pub fn pooled(a: &[f64], b: &[f64], bins: usize) -> Result<Self, EvalError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in a.iter().chain(b) {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if lo > hi {
            return Err(EvalError::EmptySample);
        }
        Self::new(lo, hi, bins)
    }

    pub fn index(&self, x: f64) -> usize {
        let f = (x - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if f.is_nan() || f < 0.0 {
            0
        } else {
            (f as usize).min(self.bins - 1)
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }

    pub fn counts(&self, samples: &[f64]) -> Vec<u64> {
        let mut c = vec![0; self.bins];
        for &x in samples {
            c[self.index(x)] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDistribution {
    pub edges: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub alpha: f64,
}

impl HistogramDistribution {
    pub fn new(binning: &Binning, samples: &[f64], alpha: f64) -> Result<Self, EvalError> {
        Ok(Self {
            edges: binning.edges(),
            probabilities: smoothed(&binning.counts(samples), alpha)?,
            alpha,
        })
    }
}

/// `(c_i + α) / (n + α · bins)`.
pub fn smoothed(counts: &[u64], alpha: f64) -> Result<Vec<f64>, EvalError> {
    if counts.is_empty() || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(EvalError::BadHistogram);
    }
    let n: u64 = counts.iter().sum();
    let total = n as f64 + alpha * counts.len() as f64;
    Ok(counts.iter().map(|&c| (c as f64 + alpha) / total).collect())
}

/// `Σ P(i) log(P(i) / Q(i))`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share bins");
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    // identical inputs give exactly 0; clamp rounding below it
    kl.max(0.0)
}

pub fn kl_from_counts(p: &[u64], q: &[u64], alpha: f64) -> Result<f64, EvalError> {
    if p.iter().sum::<u64>() == 0 || q.iter().sum::<u64>() == 0 {
        return Err(EvalError::EmptySample);
    }
    Ok(kl_divergence(&smoothed(p, alpha)?, &smoothed(q, alpha)?))
}

/// KL between smoothed histograms of two samples on shared bins spanning
/// their pooled range.
pub fn histogram_kl(p_samples: &[f64], q_samples: &[f64], bins: usize, alpha: f64) -> Result<f64, EvalError> {
    if p_samples.is_empty() || q_samples.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let binning = Binning::pooled(p_samples, q_samples, bins)?;
    kl_from_counts(&binning.counts(p_samples), &binning.counts(q_samples), alpha)
}

/// Row-major `bins × bins` occupancy counts of lateral positions over
/// `[-bound, bound]²` (east along columns).
pub fn position_counts(points: &[(f64, f64)], bound: f64, bins: usize) -> Result<Vec<u64>, EvalError> {
    let axis = Binning::new(-bound, bound, bins)?;
    let mut c = vec![0; bins * bins];
    for &(e, n) in points {
        c[axis.index(n) * bins + axis.index(e)] += 1;
    }
    Ok(c)
}
