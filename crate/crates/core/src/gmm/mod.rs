//! Low-rank Gaussian mixture over fixed-length trajectories.
//!
//! Each cluster is `N(μ_j, U_j Σ_j U_jᵀ)` with `U_j` holding the top `r`
//! principal deviations. Models live in meters, forward time, with the up axis
//! unscaled.

mod inference;
mod io;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use inference::{
    condition, log_likelihood, posterior_clusters, predict, predict_detailed, sample_posterior, ConditionalGaussian,
    Observation, PredictOptions, Prediction,
};
pub use io::{model_from_json, model_to_json, read_model, write_model, FORMAT_VERSION};

use crate::cluster::ClusterStats;
use crate::error::GmmError;
use crate::ingest::Mode;
use crate::trajectory::{devectorize, Trajectory};

/// Relative residual beyond which a point is off a cluster's subspace.
pub const SUBSPACE_TOL: f64 = 1e-6;

/// Relative threshold below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub weight: f64,
    /// Archetype, column-stacked (east, north, up blocks).
    pub mean: DVector<f64>,
    /// `dim × r`, orthonormal columns.
    pub deviations: DMatrix<f64>,
    /// Variances along each deviation, non-increasing.
    pub singular_values: DVector<f64>,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Number of singular values above `1e-12 · σ_max`.
    pub fn effective_rank(&self) -> usize {
        let max = self.singular_values.iter().copied().fold(0.0, f64::max);
        self.singular_values.iter().filter(|&&s| s > RANK_TOL * max && s > 0.0).count()
    }

    /// `U Σ^{1/2}`, the map from latent coefficients to deviations.
    pub fn factor(&self) -> DMatrix<f64> {
        let mut f = self.deviations.clone();
        for (k, mut col) in f.column_iter_mut().enumerate() {
            col *= self.singular_values[k].max(0.0).sqrt();
        }
        f
    }

    /// Dense `U Σ Uᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let f = self.factor();
        &f * f.transpose()
    }

    /// Archetype as a trajectory.
    pub fn archetype(&self) -> Trajectory {
        devectorize(&self.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    pub mode: Mode,
    pub t_com: usize,
    pub rank: usize,
    pub up_factor: f64,
    pub clusters: Vec<ClusterModel>,
}

impl TrajectoryModel {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.t_com
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.weight).collect()
    }

    pub fn cluster(&self, j: usize) -> Result<&ClusterModel, GmmError> {
        self.clusters.get(j).ok_or(GmmError::NoSuchCluster(j))
    }

    /// Checks shapes and weights.
    pub fn validate(&self) -> Result<(), GmmError> {
        let dim = self.dim();
        let bad = |m: String| Err(GmmError::ModelFile(m));
        if self.clusters.is_empty() {
            return bad("model has no clusters".into());
        }
        if !(self.up_factor > 0.0 && self.up_factor.is_finite()) {
            return bad("up_factor must be positive".into());
        }
        for (j, c) in self.clusters.iter().enumerate() {
            if c.mean.len() != dim || c.deviations.nrows() != dim {
                return Err(GmmError::DimensionMismatch { expected: dim, got: c.mean.len() });
            }
            if c.deviations.ncols() != self.rank || c.singular_values.len() != self.rank {
                return bad(format!("cluster {j}: expected rank {}", self.rank));
            }
            if !(c.weight >= 0.0) || c.singular_values.iter().any(|&s| !(s >= 0.0)) {
                return bad(format!("cluster {j}: negative weight or variance"));
            }
        }
        let total: f64 = self.weights().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}"));
        }
        Ok(())
    }
}

fn sort_descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut pivot = 0.0f64;
        for &v in col.iter() {
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`r` eigenpairs of a symmetric PSD matrix, eigenvalues descending and
/// clamped at zero.
pub fn truncate_covariance(q: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, DVector<f64>), GmmError> {
    let dim = q.nrows();
    if r == 0 {
        return Err(GmmError::ZeroRank);
    }
    if r > dim {
        return Err(GmmError::RankTooLarge { rank: r, dim });
    }
    let eig = q.clone().symmetric_eigen();
    let order = sort_descending(&eig.eigenvalues);
    let mut u = DMatrix::from_fn(dim, r, |i, k| eig.eigenvectors[(i, order[k])]);
    fix_signs(&mut u);
    let sigma = DVector::from_fn(r, |k, _| eig.eigenvalues[order[k]].max(0.0));
    Ok((u, sigma))
}

/// Index map reversing time within each coordinate block.
fn reverse_blocks<T: Copy>(v: &[T], t_com: usize) -> impl Fn(usize) -> T + '_ {
    move |i| {
        let (block, t) = (i / t_com, i % t_com);
        v[block * t_com + (t_com - 1 - t)]
    }
}

fn reverse_time(mean: &DVector<f64>, u: &DMatrix<f64>, t_com: usize) -> (DVector<f64>, DMatrix<f64>) {
    let dim = mean.len();
    let idx: Vec<usize> = (0..dim).collect();
    let src = reverse_blocks(&idx, t_com);
    let mean = DVector::from_fn(dim, |i, _| mean[src(i)]);
    let u = DMatrix::from_fn(dim, u.ncols(), |i, k| u[(src(i), k)]);
    (mean, u)
}

/// Builds the mixture from cluster statistics computed in the scaled,
/// canonical frame: truncates each covariance to rank `r`, divides the up
/// block by `up_factor` and, for landings, reverses time.
pub fn fit_model(stats: &ClusterStats, r: usize, mode: Mode, up_factor: f64) -> Result<TrajectoryModel, GmmError> {
    let dim = stats.dim();
    if !dim.is_multiple_of(3) {
        return Err(GmmError::DimensionMismatch { expected: dim - dim % 3, got: dim });
    }
    let t_com = dim / 3;
    let total: f64 = stats.weights.iter().sum();
    if !(total > 0.0) {
        return Err(GmmError::NoWeight);
    }
    let mut clusters = Vec::with_capacity(stats.k());
    for j in 0..stats.k() {
        let (mut u, mut sigma) = truncate_covariance(&stats.covariances[j], r)?;
        let mut mean = stats.centers[j].clone();
        if up_factor != 1.0 {
            mean.rows_mut(2 * t_com, t_com).iter_mut().for_each(|v| *v /= up_factor);
            // D U Σ^{1/2} = U' S V'ᵀ, so D Q̃ D = U' S² U'ᵀ
            let mut m = u.clone();
            for (k, mut col) in m.column_iter_mut().enumerate() {
                col *= sigma[k].sqrt();
            }
            m.rows_mut(2 * t_com, t_com).iter_mut().for_each(|v| *v /= up_factor);
            let svd = m.svd(true, false);
            let su = svd.u.expect("left singular vectors requested");
            let order = sort_descending(&svd.singular_values);
            u = DMatrix::from_fn(dim, r, |i, k| su[(i, order[k])]);
            fix_signs(&mut u);
            sigma = DVector::from_fn(r, |k, _| svd.singular_values[order[k]].powi(2));
        }
        if mode == Mode::Landing {
            (mean, u) = reverse_time(&mean, &u, t_com);
        }
        clusters.push(ClusterModel {
            weight: stats.weights[j] / total,
            mean,
            deviations: u,
            singular_values: sigma,
        });
    }
    Ok(TrajectoryModel {
        mode,
        t_com,
        rank: r,
        up_factor,
        clusters,
    })
}

/// Degenerate Gaussian log-density of cluster `j` restricted to its
/// subspace; `-∞` off the subspace.
pub fn log_density(model: &TrajectoryModel, j: usize, x: &DVector<f64>) -> Result<f64, GmmError> {
    let c = model.cluster(j)?;
    if x.len() != c.dim() {
        return Err(GmmError::DimensionMismatch { expected: c.dim(), got: x.len() });
    }
    let d = x - &c.mean;
    let rank = c.effective_rank();
    let u = c.deviations.columns(0, rank);
    let coords = u.transpose() * &d;
    let residual = &d - u * &coords;
    if residual.norm() > SUBSPACE_TOL * d.norm() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut quad = 0.0;
    let mut log_pdet = 0.0;
    for k in 0..rank {
        let s = c.singular_values[k];
        quad += coords[k] * coords[k] / s;
        log_pdet += s.ln();
    }
    Ok(-0.5 * (rank as f64 * (2.0 * PI).ln() + log_pdet + quad))
}

/// Draws `count` trajectories; see [`sample_with_labels`].
pub fn sample(model: &TrajectoryModel, count: usize, seed: u64) -> Result<Vec<Trajectory>, GmmError> {
    Ok(sample_with_labels(model, count, seed)?.into_iter().map(|(_, t)| t).collect())
}

/// Draws `(cluster, trajectory)` pairs: `j ~ Categorical(π)`, `z ~ N(0, I_r)`,
/// emit `μ_j + U_j Σ_j^{1/2} z`.
pub fn sample_with_labels(model: &TrajectoryModel, count: usize, seed: u64) -> Result<Vec<(usize, Trajectory)>, GmmError> {
    let components: Vec<ConditionalGaussian> = model.clusters.iter().map(ConditionalGaussian::prior).collect();
    draw(&model.weights(), &components, count, seed)
}

pub(crate) fn draw(
    weights: &[f64],
    components: &[ConditionalGaussian],
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, Trajectory)>, GmmError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(weights).map_err(|_| GmmError::NoWeight)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let j = dist.sample(&mut rng);
        let c = &components[j];
        let z = DVector::from_fn(c.factor.ncols(), |_, _| StandardNormal.sample(&mut rng));
        out.push((j, devectorize(&(&c.mean + &c.factor * z))));
    }
    Ok(out)
}

/// Scaled canonical frame (training) to model frame.
pub fn canonical_to_model(traj: &Trajectory, mode: Mode, up_factor: f64) -> Trajectory {
    let t = traj.unscale_up(up_factor);
    match mode {
        Mode::Landing => t.reversed(),
        Mode::Takeoff => t,
    }
}

/// Model frame to scaled canonical frame.
pub fn model_to_canonical(traj: &Trajectory, mode: Mode, up_factor: f64) -> Trajectory {
    let t = match mode {
        Mode::Landing => traj.reversed(),
        Mode::Takeoff => traj.clone(),
    };
    t.scale_up(up_factor)
}
