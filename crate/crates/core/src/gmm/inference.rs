//! Cluster posteriors and latent-space conditioning on partial observations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};

use super::{draw, sample_with_labels, ClusterModel, TrajectoryModel};
use crate::error::GmmError;
use crate::trajectory::{devectorize, Trajectory};

/// A position observed at an integer model time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: usize,
    pub position: Vector3<f64>,
}

impl Observation {
    pub fn new(time: usize, east: f64, north: f64, up: f64) -> Self {
        Self {
            time,
            position: Vector3::new(east, north, up),
        }
    }

    /// Observations for the first `m` rows of a trajectory.
    pub fn prefix(traj: &Trajectory, m: usize) -> Vec<Self> {
        (0..m.min(traj.len()))
            .map(|t| Self {
                time: t,
                position: traj.row(t),
            })
            .collect()
    }
}

/// Gaussian `N(mean, factor · factorᵀ)` over the full trajectory vector,
/// together with its latent representation `z ~ N(latent_mean, latent_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub latent_mean: DVector<f64>,
    pub latent_cov: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn prior(c: &ClusterModel) -> Self {
        let r = c.rank();
        Self {
            mean: c.mean.clone(),
            factor: c.factor(),
            latent_mean: DVector::zeros(r),
            latent_cov: DMatrix::identity(r, r),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

fn check_noise(noise_var: f64) -> Result<(), GmmError> {
    if noise_var > 0.0 && noise_var.is_finite() {
        Ok(())
    } else {
        Err(GmmError::BadNoise)
    }
}

/// Flat indices and stacked values of the observed coordinates.
fn observed(model: &TrajectoryModel, obs: &[Observation]) -> Result<(Vec<usize>, DVector<f64>), GmmError> {
    let t_com = model.t_com;
    let mut idx = Vec::with_capacity(3 * obs.len());
    let mut values = Vec::with_capacity(3 * obs.len());
    for o in obs {
        if o.time >= t_com {
            return Err(GmmError::TimeOutOfRange { time: o.time, t_com });
        }
        for c in 0..3 {
            idx.push(c * t_com + o.time);
            values.push(o.position[c]);
        }
    }
    Ok((idx, DVector::from_vec(values)))
}

fn restrict(c: &ClusterModel, idx: &[usize], y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let factor = c.factor();
    let d = DVector::from_fn(idx.len(), |i, _| y[i] - c.mean[idx[i]]);
    let g = DMatrix::from_fn(idx.len(), factor.ncols(), |i, k| factor[(idx[i], k)]);
    (d, g)
}

/// `log N(d; 0, G Gᵀ + σ² I)` through the Woodbury identity, in O(m r²).
fn lowrank_loglik(d: &DVector<f64>, g: &DMatrix<f64>, noise_var: f64) -> Result<f64, GmmError> {
    let (m, r) = g.shape();
    let a = DMatrix::identity(r, r) * noise_var + g.transpose() * g;
    let chol = a.cholesky().ok_or(GmmError::NotPositiveDefinite)?;
    let log_det_a: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_det = (m as f64 - r as f64) * noise_var.ln() + log_det_a;
    let b = g.transpose() * d;
    let quad = (d.norm_squared() - b.dot(&chol.solve(&b))) / noise_var;
    Ok(-0.5 * (m as f64 * (2.0 * PI).ln() + log_det + quad))
}

fn normalize_log(logs: &[f64]) -> Result<Vec<f64>, GmmError> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(GmmError::NoWeight);
    }
    let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

fn log_weighted_likelihoods(model: &TrajectoryModel, obs: &[Observation], noise_var: f64) -> Result<Vec<f64>, GmmError> {
    let (idx, y) = observed(model, obs)?;
    model
        .clusters
        .iter()
        .map(|c| {
            if c.weight <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let (d, g) = restrict(c, &idx, &y);
            Ok(c.weight.ln() + lowrank_loglik(&d, &g, noise_var)?)
        })
        .collect()
}

/// Cluster responsibilities given noisy observations of some time steps:
/// `r_j ∝ π_j N(y; μ_j[obs], Q̃_j[obs, obs] + σ² I)`.
pub fn posterior_clusters(model: &TrajectoryModel, obs: &[Observation], noise_var: f64) -> Result<Vec<f64>, GmmError> {
    check_noise(noise_var)?;
    if obs.is_empty() {
        return Err(GmmError::NoObservations);
    }
    normalize_log(&log_weighted_likelihoods(model, obs, noise_var)?)
}

/// Conditions cluster `j` on the observations in its latent space.
///
/// With `G = (U Σ^{1/2})[obs, :]` and `d = y − μ[obs]`:
/// `S = σ² (σ² I + GᵀG)⁻¹`, `m_z = (σ² I + GᵀG)⁻¹ Gᵀ d`.
pub fn condition(model: &TrajectoryModel, j: usize, obs: &[Observation], noise_var: f64) -> Result<ConditionalGaussian, GmmError> {
    check_noise(noise_var)?;
    let c = model.cluster(j)?;
    if obs.is_empty() {
        return Ok(ConditionalGaussian::prior(c));
    }
    let (idx, y) = observed(model, obs)?;
    let (d, g) = restrict(c, &idx, &y);
    let r = g.ncols();
    let a = DMatrix::identity(r, r) * noise_var + g.transpose() * &g;
    let chol = a.cholesky().ok_or(GmmError::NotPositiveDefinite)?;
    let latent_mean = chol.solve(&(g.transpose() * &d));
    let latent_cov = chol.inverse() * noise_var;
    let latent_cov = (&latent_cov + latent_cov.transpose()) * 0.5;
    let l = latent_cov.clone().cholesky().ok_or(GmmError::NotPositiveDefinite)?.unpack();
    let factor = c.factor();
    Ok(ConditionalGaussian {
        mean: &c.mean + &factor * &latent_mean,
        factor: factor * l,
        latent_mean,
        latent_cov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictOptions {
    /// Also search over where the observations sit in model time.
    pub offset_search: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub cluster: usize,
    pub responsibilities: Vec<f64>,
    /// Model time of the first observation.
    pub offset: usize,
    pub trajectory: Trajectory,
}

/// Posterior mean of the most responsible cluster (ties to the lowest index).
pub fn predict(model: &TrajectoryModel, obs: &[Observation], noise_var: f64) -> Result<Trajectory, GmmError> {
    Ok(predict_detailed(model, obs, noise_var, PredictOptions::default())?.trajectory)
}

pub fn predict_detailed(
    model: &TrajectoryModel,
    obs: &[Observation],
    noise_var: f64,
    options: PredictOptions,
) -> Result<Prediction, GmmError> {
    check_noise(noise_var)?;
    if obs.is_empty() {
        return Err(GmmError::NoObservations);
    }
    let mut offset = 0;
    let mut shifted = obs.to_vec();
    if options.offset_search {
        let first = obs.iter().map(|o| o.time).min().unwrap_or(0);
        let last = obs.iter().map(|o| o.time).max().unwrap_or(0);
        let span = last - first;
        if span >= model.t_com {
            return Err(GmmError::TimeOutOfRange { time: last, t_com: model.t_com });
        }
        let mut best = f64::NEG_INFINITY;
        for o in 0..model.t_com - span {
            let candidate: Vec<Observation> = obs
                .iter()
                .map(|x| Observation {
                    time: x.time - first + o,
                    ..*x
                })
                .collect();
            let score = log_sum_exp(&log_weighted_likelihoods(model, &candidate, noise_var)?);
            if score > best {
                best = score;
                offset = o;
                shifted = candidate;
            }
        }
    }
    let responsibilities = posterior_clusters(model, &shifted, noise_var)?;
    let cluster = argmax(&responsibilities);
    let post = condition(model, cluster, &shifted, noise_var)?;
    Ok(Prediction {
        cluster,
        responsibilities,
        offset,
        trajectory: devectorize(&post.mean),
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Draws from the posterior mixture. With no observations this is exactly
/// [`super::sample_with_labels`] for the same seed.
pub fn sample_posterior(
    model: &TrajectoryModel,
    obs: &[Observation],
    noise_var: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, Trajectory)>, GmmError> {
    check_noise(noise_var)?;
    if obs.is_empty() {
        return sample_with_labels(model, count, seed);
    }
    let resp = posterior_clusters(model, obs, noise_var)?;
    let components = (0..model.k())
        .map(|j| condition(model, j, obs, noise_var))
        .collect::<Result<Vec<_>, _>>()?;
    draw(&resp, &components, count, seed)
}

/// Mixture log-likelihood of a full trajectory vector with isotropic noise
/// added to every cluster: `log Σ_j π_j N(x; μ_j, Q̃_j + σ² I)`.
pub fn log_likelihood(model: &TrajectoryModel, x: &DVector<f64>, noise_var: f64) -> Result<f64, GmmError> {
    check_noise(noise_var)?;
    if x.len() != model.dim() {
        return Err(GmmError::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    let logs = model
        .clusters
        .iter()
        .map(|c| {
            if c.weight <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(c.weight.ln() + lowrank_loglik(&(x - &c.mean), &c.factor(), noise_var)?)
        })
        .collect::<Result<Vec<_>, GmmError>>()?;
    Ok(log_sum_exp(&logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{sample, truncate_covariance};
    use crate::ingest::Mode;
    use crate::trajectory::vectorize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, t_com: usize, r: usize, k: usize, spread: f64) -> TrajectoryModel {
        let dim = 3 * t_com;
        let clusters = (0..k)
            .map(|j| {
                let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
                let (u, s) = truncate_covariance(&(&a * a.transpose()), r).unwrap();
                ClusterModel {
                    weight: 1.0 / k as f64,
                    mean: DVector::from_fn(dim, |_, _| j as f64 * spread + rng.random_range(-1.0..1.0)),
                    deviations: u,
                    singular_values: s,
                }
            })
            .collect();
        TrajectoryModel {
            mode: Mode::Takeoff,
            t_com,
            rank: r,
            up_factor: 1.0,
            clusters,
        }
    }

    fn obs_from(x: &DVector<f64>, t_com: usize, times: &[usize]) -> Vec<Observation> {
        let t = devectorize(x);
        assert_eq!(t.len(), t_com);
        times.iter().map(|&i| Observation { time: i, position: t.row(i) }).collect()
    }

    #[test]
    fn woodbury_matches_dense_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-2.0..2.0));
        let d = DVector::from_fn(7, |_, _| rng.random_range(-2.0..2.0));
        let c: DMatrix<f64> = &g * g.transpose() + DMatrix::identity(7, 7) * 0.3;
        let quad = (d.transpose() * c.clone().try_inverse().unwrap() * &d)[0];
        let oracle = -0.5 * (7.0 * (2.0 * PI).ln() + c.determinant().ln() + quad);
        assert!((lowrank_loglik(&d, &g, 0.3).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn single_cluster_has_unit_responsibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 5, 2, 1, 0.0);
        let obs = vec![Observation::new(0, 1.0, 2.0, 3.0)];
        assert_eq!(posterior_clusters(&m, &obs, 1.0).unwrap(), vec![1.0]);
        assert!(matches!(posterior_clusters(&m, &[], 1.0), Err(GmmError::NoObservations)));
        assert!(matches!(posterior_clusters(&m, &obs, 0.0), Err(GmmError::BadNoise)));
        let late = vec![Observation::new(5, 0.0, 0.0, 0.0)];
        assert!(matches!(
            posterior_clusters(&m, &late, 1.0),
            Err(GmmError::TimeOutOfRange { time: 5, t_com: 5 })
        ));
    }

    #[test]
    fn separated_clusters_are_identified() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 6, 2, 3, 500.0);
        for j in 0..3 {
            let obs = obs_from(&m.clusters[j].mean, 6, &[0, 1, 2]);
            let resp = posterior_clusters(&m, &obs, 1.0).unwrap();
            assert!(resp[j] >= 0.999, "{resp:?}");
        }
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let c = |off: f64| ClusterModel {
            weight: 0.5,
            mean: DVector::from_vec(vec![off, 0.0, 0.0]),
            deviations: DMatrix::identity(3, 1),
            singular_values: DVector::from_element(1, 2.0),
        };
        let m = TrajectoryModel {
            mode: Mode::Takeoff,
            t_com: 1,
            rank: 1,
            up_factor: 1.0,
            clusters: vec![c(-5.0), c(5.0)],
        };
        let resp = posterior_clusters(&m, &[Observation::new(0, 0.0, 0.3, -0.2)], 1.0).unwrap();
        assert!((resp[0] - 0.5).abs() < 1e-9 && (resp[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn responsibilities_ignore_weight_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 4, 2, 3, 3.0);
        let mut scaled = m.clone();
        for c in &mut scaled.clusters {
            c.weight *= 7.5;
        }
        let obs = obs_from(&m.clusters[1].mean, 4, &[1, 2]);
        let a = posterior_clusters(&m, &obs, 2.0).unwrap();
        let b = posterior_clusters(&scaled, &obs, 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uninformative_noise_returns_prior_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = random_model(&mut rng, 4, 2, 2, 10.0);
        m.clusters[0].weight = 0.7;
        m.clusters[1].weight = 0.3;
        let obs = obs_from(&m.clusters[0].mean, 4, &[0, 1, 2, 3]);
        let resp = posterior_clusters(&m, &obs, 1e12 * 100.0).unwrap();
        let kl: f64 = resp.iter().zip([0.7, 0.3]).map(|(p, q)| p * (p / q).ln()).sum();
        assert!(kl <= 1e-6);
    }

    #[test]
    fn empty_conditioning_is_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_model(&mut rng, 4, 2, 2, 10.0);
        let post = condition(&m, 1, &[], 1.0).unwrap();
        assert_eq!(post.latent_mean, DVector::zeros(2));
        assert_eq!(post.latent_cov, DMatrix::identity(2, 2));
        assert_eq!(post.mean, m.clusters[1].mean);
        assert_eq!(
            sample_posterior(&m, &[], 1.0, 20, 8).unwrap(),
            sample_with_labels(&m, 20, 8).unwrap()
        );
    }

    #[test]
    fn full_observation_with_tiny_noise_recovers_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, 5, 3, 1, 0.0);
        let x = vectorize(&sample(&m, 1, 3).unwrap()[0]);
        let obs = obs_from(&x, 5, &[0, 1, 2, 3, 4]);
        let noise = 1e-8;
        let post = condition(&m, 0, &obs, noise).unwrap();
        assert!((post.mean - &x).abs().max() <= 10.0 * noise.sqrt());
        let pred = predict(&m, &obs, noise).unwrap();
        assert!((vectorize(&pred) - &x).abs().max() <= 10.0 * noise.sqrt());
    }

    #[test]
    fn matches_schur_complement_oracle() {
        // 3-D full-rank toy: t_com = 1, observe the whole point
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let q = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
            let (u, s) = truncate_covariance(&q, 3).unwrap();
            let mu = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let m = TrajectoryModel {
                mode: Mode::Takeoff,
                t_com: 1,
                rank: 3,
                up_factor: 1.0,
                clusters: vec![ClusterModel {
                    weight: 1.0,
                    mean: mu.clone(),
                    deviations: u,
                    singular_values: s,
                }],
            };
            let y = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let noise = 0.7;
            let post = condition(&m, 0, &[Observation::new(0, y[0], y[1], y[2])], noise).unwrap();
            // joint of (x, y = x + ε): Schur complement
            let c = &q + DMatrix::identity(3, 3) * noise;
            let gain = &q * c.try_inverse().unwrap();
            let mean = &mu + &gain * (&y - &mu);
            let cov = &q - &gain * &q;
            assert!((&post.mean - mean).abs().max() < 1e-8);
            assert!((post.covariance() - cov).abs().max() < 1e-8);
        }
    }

    #[test]
    fn conditioning_ignores_observation_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_model(&mut rng, 6, 3, 2, 5.0);
        let obs = obs_from(&m.clusters[0].mean, 6, &[0, 3, 5]);
        let rev: Vec<Observation> = obs.iter().rev().copied().collect();
        let a = condition(&m, 0, &obs, 1.5).unwrap();
        let b = condition(&m, 0, &rev, 1.5).unwrap();
        assert!((a.mean - b.mean).abs().max() < 1e-9);
        assert!((a.latent_cov - b.latent_cov).abs().max() < 1e-12);
        let pa = posterior_clusters(&m, &obs, 1.5).unwrap();
        let pb = posterior_clusters(&m, &rev, 1.5).unwrap();
        assert!((pa[0] - pb[0]).abs() < 1e-12);
    }

    #[test]
    fn exact_archetype_prefix_predicts_archetype() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = random_model(&mut rng, 10, 2, 3, 1000.0);
        for j in 0..3 {
            let arch = m.clusters[j].archetype();
            let obs = Observation::prefix(&arch, 3);
            let pred = predict_detailed(&m, &obs, 1.0, PredictOptions::default()).unwrap();
            assert_eq!(pred.cluster, j);
            let err = (pred.trajectory.positions() - arch.positions()).rows(3, 7).norm();
            assert!(err <= 1e-3 * arch.positions().norm());
        }
    }

    #[test]
    fn offset_search_locates_a_mid_track_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = 12;
        let dim = 3 * t;
        // straight-line archetype with a small deviation subspace
        let mean = DVector::from_fn(dim, |i, _| {
            let (c, s) = (i / t, (i % t) as f64);
            [60.0 * s, 5.0 * s * s, 4.0 * s][c]
        });
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let (u, s) = truncate_covariance(&(&a * a.transpose()), 2).unwrap();
        let m = TrajectoryModel {
            mode: Mode::Takeoff,
            t_com: t,
            rank: 2,
            up_factor: 1.0,
            clusters: vec![ClusterModel {
                weight: 1.0,
                mean: mean.clone(),
                deviations: u,
                singular_values: s,
            }],
        };
        let arch = devectorize(&mean);
        let obs: Vec<Observation> = (0..3)
            .map(|k| Observation {
                time: k,
                position: arch.row(5 + k),
            })
            .collect();
        let pred = predict_detailed(&m, &obs, 1.0, PredictOptions { offset_search: true }).unwrap();
        assert_eq!(pred.offset, 5);
    }

    #[test]
    fn posterior_sample_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, 4, 2, 1, 0.0);
        let obs = vec![Observation::new(1, 0.5, -0.5, 0.2)];
        let post = condition(&m, 0, &obs, 0.5).unwrap();
        let n = 10_000;
        let draws = sample_posterior(&m, &obs, 0.5, n, 4).unwrap();
        let emp = draws.iter().fold(DVector::zeros(12), |acc, (_, t)| acc + vectorize(t)) / n as f64;
        let var = post.covariance().diagonal();
        for i in 0..12 {
            let bound = 4.0 * (var[i] / n as f64).sqrt() + 1e-12;
            assert!((emp[i] - post.mean[i]).abs() <= bound, "coord {i}");
        }
    }

    #[test]
    fn mixture_log_likelihood_is_finite_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_model(&mut rng, 4, 2, 2, 10.0);
        let x = DVector::from_fn(12, |_, _| rng.random_range(-100.0..100.0));
        assert!(log_likelihood(&m, &x, 4.0).unwrap().is_finite());
        let at_mean = log_likelihood(&m, &m.clusters[0].mean, 4.0).unwrap();
        assert!(at_mean > log_likelihood(&m, &x, 4.0).unwrap());
    }
}
