//! K-means++ clustering of vectorized trajectories and per-cluster moments.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ClusterError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansSettings {
    pub max_iters: usize,
    /// Lloyd stops once no center moves farther than this.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansSettings {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub objective: f64,
    /// Objective after each assignment step of the winning run.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Index of the nearest center and the squared distance; ties go to the lowest index.
pub fn nearest_center(x: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (x - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[DVector<f64>], centers: &[DVector<f64>]) -> (Vec<usize>, f64) {
    let nearest: Vec<(usize, f64)> = points.par_iter().map(|x| nearest_center(x, centers)).collect();
    // sequential reduction keeps the objective independent of thread count
    let objective = nearest.iter().map(|n| n.1).sum();
    (nearest.into_iter().map(|n| n.0).collect(), objective)
}

fn update_centers(points: &[DVector<f64>], assignments: &[usize], previous: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let dim = previous[0].len();
    let mut sums = vec![DVector::<f64>::zeros(dim); previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (x, &a) in points.iter().zip(assignments) {
        sums[a] += x;
        counts[a] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, n), prev)| if n == 0 { prev.clone() } else { s / n as f64 })
        .collect()
}

fn seed_centers(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|x| (x - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a center already
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next].clone();
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min((x - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn lloyd(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng, settings: &KMeansSettings) -> KMeansResult {
    let mut centers = seed_centers(points, k, rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < settings.max_iters {
        let (assignments, objective) = assign(points, &centers);
        history.push(objective);
        let next = update_centers(points, &assignments, &centers);
        let movement = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        centers = next;
        iterations += 1;
        if movement < settings.tol {
            break;
        }
    }
    let (assignments, objective) = assign(points, &centers);
    KMeansResult {
        centers,
        assignments,
        objective,
        history,
        iterations,
    }
}

/// K-means++ seeding followed by Lloyd iterations.
///
/// Points are put in lexicographic order before seeding so the result does
/// not depend on input order. With several restarts the lowest objective
/// wins (earliest restart on ties).
pub fn kmeans_pp(
    points: &[DVector<f64>],
    k: usize,
    seed: u64,
    settings: &KMeansSettings,
) -> Result<KMeansResult, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if points.len() < k {
        return Err(ClusterError::TooManyClusters { k, points: points.len() });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&points[a], &points[b]));
    let sorted: Vec<DVector<f64>> = order.iter().map(|&i| points[i].clone()).collect();

    let mut best: Option<KMeansResult> = None;
    for restart in 0..settings.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = lloyd(&sorted, k, &mut rng, settings);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    let mut assignments = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = best.assignments[pos];
    }
    best.assignments = assignments;
    Ok(best)
}

/// Per-cluster weights, means and population covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub weights: Vec<f64>,
    pub centers: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub counts: Vec<usize>,
}

impl ClusterStats {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }
}

/// Computes cluster moments. Empty clusters get zero weight and covariance
/// and keep the center from `fallback_centers`.
pub fn cluster_stats(
    points: &[DVector<f64>],
    assignments: &[usize],
    fallback_centers: &[DVector<f64>],
) -> Result<ClusterStats, ClusterError> {
    let k = fallback_centers.len();
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if points.len() != assignments.len() {
        return Err(ClusterError::DimensionMismatch);
    }
    let dim = fallback_centers[0].len();
    if points.iter().chain(fallback_centers).any(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch);
    }
    if let Some(&a) = assignments.iter().find(|&&a| a >= k) {
        return Err(ClusterError::BadAssignment { assignment: a, k });
    }
    let total = points.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let mut stats = ClusterStats {
        weights: Vec::with_capacity(k),
        centers: Vec::with_capacity(k),
        covariances: Vec::with_capacity(k),
        counts: Vec::with_capacity(k),
    };
    for (j, idx) in members.iter().enumerate() {
        let n = idx.len();
        stats.counts.push(n);
        if n == 0 {
            stats.weights.push(0.0);
            stats.centers.push(fallback_centers[j].clone());
            stats.covariances.push(DMatrix::zeros(dim, dim));
            continue;
        }
        stats.weights.push(n as f64 / total as f64);
        let mut mean = DVector::zeros(dim);
        for &i in idx {
            mean += &points[i];
        }
        mean /= n as f64;
        let centered = DMatrix::from_fn(dim, n, |r, c| points[idx[c]][r] - mean[r]);
        let mut q = &centered * centered.transpose() / n as f64;
        // exact symmetry
        for r in 0..dim {
            for c in 0..r {
                let v = 0.5 * (q[(r, c)] + q[(c, r)]);
                q[(r, c)] = v;
                q[(c, r)] = v;
            }
        }
        stats.centers.push(mean);
        stats.covariances.push(q);
    }
    Ok(stats)
}
