//! Trajectory reconstruction: turns a noisy, gappy track into a smooth
//! fixed-rate trajectory by minimizing
//!
//! ```text
//! ‖A P − P̂‖²_F + λ₁‖D₂ P‖²_F + λ₂‖D₃ P‖²_F
//! ```
//!
//! where `A` masks the seconds that carry measurements, `P̂` holds the
//! per-second mean measurement, and `D₂`/`D₃` are acceleration and jerk
//! operators. The normal equations are 9-banded and solved in O(N).

mod banded;
mod difference;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use banded::{BandedCholesky, BandedSymmetric};
pub use difference::{
    build_difference_operators, DifferenceOperator, SECOND_DIFFERENCE, THIRD_DIFFERENCE,
};

use crate::error::ReconstructError;
use crate::ingest::RawTrack;
use crate::trajectory::Trajectory;

/// Half-bandwidth of the normal-equations matrix (jerk stencil spans 5 samples).
const HALF_BANDWIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionProblem {
    /// Per-second measurement indicator (diagonal of `A`).
    pub mask: Vec<bool>,
    /// `N × 3` per-second mean measurement, zero where unmeasured.
    pub targets: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ReconstructionProblem {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn measured_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn with_lambdas(mut self, lambda1: f64, lambda2: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    /// Normal-equations matrix `AᵀA + λ₁D₂ᵀD₂ + λ₂D₃ᵀD₃`.
    pub fn normal_matrix(&self) -> BandedSymmetric {
        let n = self.len();
        let mut m = BandedSymmetric::zeros(n, HALF_BANDWIDTH);
        for (i, &measured) in self.mask.iter().enumerate() {
            if measured {
                m.add(i, i, 1.0);
            }
        }
        DifferenceOperator::second(n).add_gram(self.lambda1, &mut m);
        DifferenceOperator::third(n).add_gram(self.lambda2, &mut m);
        m
    }

    /// Right-hand side `AᵀP̂`.
    pub fn rhs(&self) -> DMatrix<f64> {
        let mut b = self.targets.clone();
        for (i, &measured) in self.mask.iter().enumerate() {
            if !measured {
                b.row_mut(i).fill(0.0);
            }
        }
        b
    }

    /// Value of the reconstruction objective at `p`.
    pub fn objective(&self, p: &DMatrix<f64>) -> f64 {
        let n = self.len();
        let (d2, d3) = (DifferenceOperator::second(n), DifferenceOperator::third(n));
        let mut total = 0.0;
        for c in 0..3 {
            let col: Vec<f64> = p.column(c).iter().copied().collect();
            for i in 0..n {
                if self.mask[i] {
                    total += (col[i] - self.targets[(i, c)]).powi(2);
                }
            }
            total += self.lambda1 * d2.apply(&col).iter().map(|v| v * v).sum::<f64>();
            total += self.lambda2 * d3.apply(&col).iter().map(|v| v * v).sum::<f64>();
        }
        total
    }
}

/// Builds the measurement mask and per-second mean targets over `n` seconds.
///
/// Measurement times are rounded to the nearest second; measurements at or
/// beyond `n` are dropped.
pub fn build_targets(track: &RawTrack, n: usize) -> (Vec<bool>, DMatrix<f64>) {
    let mut sums = DMatrix::<f64>::zeros(n, 3);
    let mut counts = vec![0usize; n];
    for m in &track.measurements {
        let t = m.time.round();
        if t < 0.0 || t >= n as f64 {
            continue;
        }
        let t = t as usize;
        sums[(t, 0)] += m.position.east;
        sums[(t, 1)] += m.position.north;
        sums[(t, 2)] += m.position.up;
        counts[t] += 1;
    }
    for (t, &c) in counts.iter().enumerate() {
        if c > 1 {
            sums.row_mut(t).scale_mut(1.0 / c as f64);
        }
    }
    (counts.iter().map(|&c| c > 0).collect(), sums)
}

/// Solves the reconstruction problem column by column with one banded
/// Cholesky factorization.
pub fn solve_reconstruction(problem: &ReconstructionProblem) -> Result<DMatrix<f64>, ReconstructError> {
    let n = problem.len();
    if n < 5 {
        return Err(ReconstructError::TooShort(n));
    }
    let (l1, l2) = (problem.lambda1, problem.lambda2);
    if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
        return Err(ReconstructError::InvalidLambda);
    }
    let measured = problem.measured_count();
    // the penalties' null spaces must be pinned down by the data: affine for
    // D2; quadratics plus the alternating sequence for D3
    let needed = if l1 > 0.0 {
        2
    } else if l2 > 0.0 {
        4
    } else {
        n
    };
    if measured < needed.max(2) {
        return Err(ReconstructError::InsufficientMeasurements {
            needed: needed.max(2),
            got: measured,
        });
    }
    let chol = problem.normal_matrix().cholesky()?;
    let mut solution = problem.rhs();
    for c in 0..3 {
        let mut col: Vec<f64> = solution.column(c).iter().copied().collect();
        chol.solve_in_place(&mut col);
        solution.column_mut(c).copy_from_slice(&col);
    }
    Ok(solution)
}

/// Regularization grid search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationSearch {
    /// Candidate `(λ₁, λ₂)` pairs.
    pub grid: Vec<(f64, f64)>,
    /// Fraction of measured seconds held out for validation.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for RegularizationSearch {
    fn default() -> Self {
        Self {
            grid: default_lambda_grid(),
            holdout_fraction: 0.25,
            seed: 0,
        }
    }
}

/// `{1e-2, 1, 1e2, 1e4, 1e6}²`.
pub fn default_lambda_grid() -> Vec<(f64, f64)> {
    let axis = [1e-2, 1.0, 1e2, 1e4, 1e6];
    axis.iter()
        .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationChoice {
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss: f64,
    /// Held-out loss for each grid point, in grid order.
    pub losses: Vec<f64>,
}

/// Picks `(λ₁, λ₂)` from the grid by held-out validation.
///
/// A random subset of the measured seconds is removed from the fit and the
/// mean squared distance between the reconstruction and those held-out
/// targets is the validation loss. Losses within a relative 1e-9 (plus an
/// absolute floor scaled by the data magnitude) of the best are ties, and ties
/// go to the larger regularization.
pub fn select_regularization(
    track: &RawTrack,
    n: usize,
    search: &RegularizationSearch,
) -> Result<RegularizationChoice, ReconstructError> {
    let (mask, targets) = build_targets(track, n);
    let mut measured: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let holdout = ((search.holdout_fraction * measured.len() as f64).round() as usize).max(1);
    if measured.len() < holdout + 3 {
        return Err(ReconstructError::InsufficientMeasurements {
            needed: holdout + 3,
            got: measured.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    measured.shuffle(&mut rng);
    let mut held: Vec<usize> = measured[..holdout].to_vec();
    held.sort_unstable();

    let mut train_mask = mask.clone();
    for &i in &held {
        train_mask[i] = false;
    }
    let base = ReconstructionProblem {
        mask: train_mask,
        targets: targets.clone(),
        lambda1: 0.0,
        lambda2: 0.0,
    };

    let held_loss = |p: &DMatrix<f64>| -> f64 {
        held.iter()
            .map(|&i| (p.row(i) - targets.row(i)).norm_squared())
            .sum::<f64>()
            / held.len() as f64
    };
    let losses: Vec<f64> = search
        .grid
        .iter()
        .map(|&(l1, l2)| {
            solve_reconstruction(&base.clone().with_lambdas(l1, l2))
                .map(|p| held_loss(&p))
                .unwrap_or(f64::INFINITY)
        })
        .collect();

    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(ReconstructError::InsufficientMeasurements {
            needed: holdout + 3,
            got: measured.len(),
        });
    }
    let magnitude = held.iter().map(|&i| targets.row(i).norm_squared()).sum::<f64>() / held.len() as f64;
    let tol = best * 1e-9 + 1e-12 * (magnitude + 1.0);
    let (idx, &(lambda1, lambda2)) = search
        .grid
        .iter()
        .enumerate()
        .filter(|(i, _)| losses[*i] <= best + tol)
        .max_by(|(_, a), (_, b)| (a.0 + a.1).total_cmp(&(b.0 + b.1)).then(a.1.total_cmp(&b.1)))
        .expect("at least the best grid point qualifies");
    Ok(RegularizationChoice {
        lambda1,
        lambda2,
        loss: losses[idx],
        losses,
    })
}

/// Median track duration rounded to the nearest second; even counts use the
/// midpoint of the two middle values.
pub fn select_common_length(tracks: &[RawTrack]) -> Result<usize, ReconstructError> {
    let durations: Vec<f64> = tracks.iter().map(RawTrack::duration).collect();
    median_length(&durations)
}

pub fn median_length(durations: &[f64]) -> Result<usize, ReconstructError> {
    if durations.is_empty() {
        return Err(ReconstructError::NoTracks);
    }
    let mut d = durations.to_vec();
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    Ok(median.round().max(0.0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructSettings {
    /// Tracks shorter than `T_com - short_slack` seconds are ignored.
    pub short_slack: f64,
    pub search: RegularizationSearch,
    /// Used when a track has too few measurements for validation.
    pub fallback_lambda: (f64, f64),
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self {
            short_slack: 30.0,
            search: RegularizationSearch::default(),
            fallback_lambda: (1e2, 1e2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedTrack {
    /// Index into the input batch.
    pub index: usize,
    pub trajectory: Trajectory,
    pub lambda: (f64, f64),
}

#[derive(Debug, Default)]
pub struct BatchFit {
    pub fitted: Vec<FittedTrack>,
    /// Indices of tracks dropped for being too short.
    pub dropped: Vec<usize>,
    pub failures: Vec<(usize, ReconstructError)>,
}

impl BatchFit {
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.fitted.iter().map(|f| f.trajectory.clone()).collect()
    }
}

/// Reconstructs one track onto `t_com` seconds, extrapolating or truncating.
pub fn fit_track(
    track: &RawTrack,
    t_com: usize,
    settings: &ReconstructSettings,
    seed: u64,
) -> Result<FittedTrack, ReconstructError> {
    let last = track.measurements.last().map_or(0.0, |m| m.time.round().max(0.0)) as usize;
    let n = (last + 1).max(t_com).max(5);
    let search = RegularizationSearch {
        seed,
        ..settings.search.clone()
    };
    let (lambda1, lambda2) = match select_regularization(track, n, &search) {
        Ok(choice) => (choice.lambda1, choice.lambda2),
        Err(ReconstructError::InsufficientMeasurements { .. }) => settings.fallback_lambda,
        Err(e) => return Err(e),
    };
    let (mask, targets) = build_targets(track, n);
    let problem = ReconstructionProblem {
        mask,
        targets,
        lambda1,
        lambda2,
    };
    let p = solve_reconstruction(&problem)?;
    Ok(FittedTrack {
        index: 0,
        trajectory: Trajectory::new(p.rows(0, t_com).into_owned()),
        lambda: (lambda1, lambda2),
    })
}

/// Reconstructs every sufficiently long track onto `t_com` seconds.
///
/// Tracks are solved in parallel; output order follows input order and each
/// track's validation split is seeded from `settings.search.seed` and its
/// index, so results do not depend on scheduling.
pub fn filter_and_fit(tracks: &[RawTrack], t_com: usize, settings: &ReconstructSettings) -> BatchFit {
    let min_duration = t_com as f64 - settings.short_slack;
    let results: Vec<(usize, Option<Result<FittedTrack, ReconstructError>>)> = tracks
        .par_iter()
        .enumerate()
        .map(|(i, track)| {
            if track.duration() < min_duration {
                return (i, None);
            }
            let seed = track_seed(settings.search.seed, i);
            let fit = fit_track(track, t_com, settings, seed).map(|mut f| {
                f.index = i;
                f
            });
            (i, Some(fit))
        })
        .collect();

    let mut batch = BatchFit::default();
    for (i, r) in results {
        match r {
            None => batch.dropped.push(i),
            Some(Ok(f)) => batch.fitted.push(f),
            Some(Err(e)) => {
                log::warn!("track {i}: reconstruction failed: {e}");
                batch.failures.push((i, e));
            }
        }
    }
    batch
}

fn track_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::EnuPosition;
    use crate::ingest::Measurement;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn track_from(points: &[(f64, [f64; 3])]) -> RawTrack {
        RawTrack::new(
            "t",
            points
                .iter()
                .map(|&(time, p)| Measurement {
                    time,
                    position: EnuPosition::new(p[0], p[1], p[2]),
                })
                .collect(),
        )
    }

    /// Dense least squares on the stacked system `[A; √λ₁D₂; √λ₂D₃] P = [P̂; 0; 0]`
    /// via SVD. Shares nothing with the banded normal-equations route.
    fn dense_oracle(problem: &ReconstructionProblem) -> DMatrix<f64> {
        let n = problem.len();
        let d2 = DifferenceOperator::second(n).to_dense() * problem.lambda1.sqrt();
        let d3 = DifferenceOperator::third(n).to_dense() * problem.lambda2.sqrt();
        let rows = n + d2.nrows() + d3.nrows();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DMatrix::zeros(rows, 3);
        for i in 0..n {
            if problem.mask[i] {
                a[(i, i)] = 1.0;
                b.row_mut(i).copy_from(&problem.targets.row(i));
            }
        }
        a.view_mut((n, 0), d2.shape()).copy_from(&d2);
        a.view_mut((n + d2.nrows(), 0), d3.shape()).copy_from(&d3);
        a.svd(true, true).solve(&b, 1e-14).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, frac: f64, l1: f64, l2: f64) -> ReconstructionProblem {
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < frac).collect();
        mask[0] = true;
        mask[n - 1] = true;
        let mut targets = DMatrix::zeros(n, 3);
        for i in 0..n {
            if mask[i] {
                for c in 0..3 {
                    targets[(i, c)] = 100.0 * (i as f64 * 0.1 + c as f64).sin() + rng.random_range(-5.0..5.0);
                }
            }
        }
        ReconstructionProblem {
            mask,
            targets,
            lambda1: l1,
            lambda2: l2,
        }
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn build_targets_averages_and_masks() {
        let track = track_from(&[
            (0.0, [0.0, 0.0, 0.0]),
            (6.8, [1.0, 2.0, 3.0]),
            (7.2, [3.0, 4.0, 5.0]),
            (12.0, [9.0, 9.0, 9.0]),
        ]);
        let (mask, p) = build_targets(&track, 10);
        assert!(mask[7] && !mask[4]);
        assert_eq!(p.row(7).iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
        assert_eq!(p.row(4).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        // t = 12 is past the end
        assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
    }

    #[test]
    fn exact_interpolation_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 30, 1.1, 0.0, 0.0);
        assert!(p.mask.iter().all(|&m| m));
        let sol = solve_reconstruction(&p).unwrap();
        assert_eq!(sol, p.targets);
    }

    #[test]
    fn dominant_acceleration_penalty_gives_affine_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_problem(&mut rng, 50, 0.5, 1e10, 0.0);
        let sol = solve_reconstruction(&p).unwrap();
        let fit = polynomial_fit(&p, 1);
        for c in 0..3 {
            let err = (sol.column(c) - fit.column(c)).norm() / fit.column(c).norm();
            assert!(err < 1e-3, "column {c}: {err}");
        }
    }

    /// Least-squares fit over the given basis through the measured points,
    /// evaluated on every index.
    fn basis_fit(p: &ReconstructionProblem, basis: &[&dyn Fn(usize) -> f64]) -> DMatrix<f64> {
        let n = p.len();
        let idx: Vec<usize> = (0..n).filter(|&i| p.mask[i]).collect();
        let v = DMatrix::from_fn(idx.len(), basis.len(), |r, k| basis[k](idx[r]));
        let y = DMatrix::from_fn(idx.len(), 3, |r, c| p.targets[(idx[r], c)]);
        let coef = v.svd(true, true).solve(&y, 1e-14).unwrap();
        DMatrix::from_fn(n, 3, |i, c| (0..basis.len()).map(|k| coef[(k, c)] * basis[k](i)).sum())
    }

    fn polynomial_fit(p: &ReconstructionProblem, degree: usize) -> DMatrix<f64> {
        let n = p.len() as f64;
        let monomials: Vec<Box<dyn Fn(usize) -> f64>> = (0..=degree)
            .map(|k| Box::new(move |i: usize| (i as f64 / n).powi(k as i32)) as Box<dyn Fn(usize) -> f64>)
            .collect();
        let refs: Vec<&dyn Fn(usize) -> f64> = monomials.iter().map(|b| b.as_ref()).collect();
        basis_fit(p, &refs)
    }

    #[test]
    fn matches_dense_oracle_on_60_step_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_problem(&mut rng, 60, 0.0, 1e2, 1e2);
        // exactly 40 measured seconds
        let mut order: Vec<usize> = (0..60).collect();
        order.shuffle(&mut rng);
        p.mask = vec![false; 60];
        for &i in &order[..40] {
            p.mask[i] = true;
            for c in 0..3 {
                p.targets[(i, c)] = rng.random_range(-50.0..50.0);
            }
        }
        for i in 0..60 {
            if !p.mask[i] {
                p.targets.row_mut(i).fill(0.0);
            }
        }
        let banded = solve_reconstruction(&p).unwrap();
        assert!(rel_err(&banded, &dense_oracle(&p)) < 1e-8);
    }

    #[test]
    fn normal_equation_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(5..200);
            let l1 = 10f64.powf(rng.random_range(-2.0..4.0));
            let l2 = 10f64.powf(rng.random_range(-2.0..4.0));
            let p = random_problem(&mut rng, n, 0.6, l1, l2);
            let sol = solve_reconstruction(&p).unwrap();
            let m = p.normal_matrix();
            let rhs = p.rhs();
            for c in 0..3 {
                let col: Vec<f64> = sol.column(c).iter().copied().collect();
                let r: f64 = m
                    .mul_vec(&col)
                    .iter()
                    .zip(rhs.column(c).iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(r <= 1e-8 * rhs.column(c).norm());
            }
        }
    }

    #[test]
    fn solution_is_a_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 40, 0.5, 1.0, 10.0);
        let sol = solve_reconstruction(&p).unwrap();
        let f0 = p.objective(&sol);
        for _ in 0..100 {
            let delta = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1e-3..1e-3));
            assert!(p.objective(&(&sol + delta)) >= f0);
        }
    }

    #[test]
    fn more_acceleration_penalty_never_more_acceleration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = random_problem(&mut rng, 80, 0.4, 0.0, 1.0);
        let d2 = DifferenceOperator::second(80).to_dense();
        let mut prev = f64::INFINITY;
        for l1 in [1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3, 1e4, 1e6] {
            let sol = solve_reconstruction(&base.clone().with_lambdas(l1, 1.0)).unwrap();
            let acc = (&d2 * sol).norm();
            assert!(acc <= prev * (1.0 + 1e-9), "λ1 = {l1}: {acc} > {prev}");
            prev = acc;
        }
    }

    #[test]
    fn jerk_only_limit_is_quadratic_plus_alternating() {
        // the centered jerk stencil factors as (z-1)^3 (z+1)
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 60, 0.5, 0.0, 1e12);
        let sol = solve_reconstruction(&p).unwrap();
        let n = p.len() as f64;
        let fit = basis_fit(
            &p,
            &[
                &|_| 1.0,
                &|i| i as f64 / n,
                &|i| (i as f64 / n).powi(2),
                &|i| if i % 2 == 0 { 1.0 } else { -1.0 },
            ],
        );
        for c in 0..3 {
            let err = (sol.column(c) - fit.column(c)).norm() / fit.column(c).norm();
            assert!(err < 1e-3, "column {c}: {err}");
        }
    }

    #[test]
    fn singular_configurations_rejected() {
        let mut p = ReconstructionProblem {
            mask: vec![true, false, true, false, true, false],
            targets: DMatrix::zeros(6, 3),
            lambda1: 0.0,
            lambda2: 0.0,
        };
        assert!(matches!(
            solve_reconstruction(&p),
            Err(ReconstructError::InsufficientMeasurements { .. })
        ));
        p.mask = vec![true, false, false, false, false, false];
        p.lambda1 = 1.0;
        assert!(solve_reconstruction(&p).is_err());
        p.mask[5] = true;
        assert!(solve_reconstruction(&p).is_ok());
        p.lambda1 = -1.0;
        assert!(matches!(solve_reconstruction(&p), Err(ReconstructError::InvalidLambda)));
    }

    #[test]
    fn noiseless_affine_prefers_largest_lambdas() {
        let pts: Vec<(f64, [f64; 3])> = (0..60)
            .map(|t| (t as f64, [1000.0 + 50.0 * t as f64, -20.0 * t as f64, 3.0 * t as f64]))
            .collect();
        let track = track_from(&pts);
        let choice = select_regularization(&track, 60, &RegularizationSearch::default()).unwrap();
        assert_eq!((choice.lambda1, choice.lambda2), (1e6, 1e6));
    }

    #[test]
    fn selected_lambda_beats_no_regularization_on_noisy_sinusoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 15.0).unwrap();
        let kept: Vec<i32> = (0..90).filter(|_| rng.random::<f64>() < 0.8).collect();
        let pts: Vec<(f64, [f64; 3])> = kept
            .into_iter()
            .map(|t| {
                let s = t as f64;
                (
                    s,
                    [
                        2000.0 * (s / 30.0).sin() + noise.sample(&mut rng),
                        60.0 * s + noise.sample(&mut rng),
                        5.0 * s + noise.sample(&mut rng),
                    ],
                )
            })
            .collect();
        let track = track_from(&pts);
        let mut search = RegularizationSearch::default();
        search.grid.push((0.0, 0.0));
        search.seed = 11;
        let choice = select_regularization(&track, 90, &search).unwrap();
        let unregularized = *choice.losses.last().unwrap();
        assert!(choice.loss <= unregularized);
        assert!(choice.lambda1 + choice.lambda2 > 0.0);
    }

    #[test]
    fn selection_is_deterministic_and_needs_data() {
        let pts: Vec<(f64, [f64; 3])> = (0..30).map(|t| (t as f64, [(t * t) as f64, 0.0, 1.0])).collect();
        let track = track_from(&pts);
        let s = RegularizationSearch::default();
        assert_eq!(
            select_regularization(&track, 30, &s).unwrap(),
            select_regularization(&track, 30, &s).unwrap()
        );
        let short = track_from(&pts[..3]);
        assert!(matches!(
            select_regularization(&short, 10, &s),
            Err(ReconstructError::InsufficientMeasurements { .. })
        ));
    }

    #[test]
    fn common_length_median() {
        assert_eq!(median_length(&[50.0, 70.0, 90.0]).unwrap(), 70);
        assert_eq!(median_length(&[10.0]).unwrap(), 10);
        assert_eq!(median_length(&[60.0, 80.0]).unwrap(), 70);
        assert!(matches!(median_length(&[]), Err(ReconstructError::NoTracks)));
        let tracks: Vec<RawTrack> = [50.0, 90.0, 70.0]
            .iter()
            .map(|&d| track_from(&[(0.0, [0.0; 3]), (d, [1.0; 3])]))
            .collect();
        assert_eq!(select_common_length(&tracks).unwrap(), 70);
    }

    fn straight_track(duration: usize) -> RawTrack {
        let pts: Vec<(f64, [f64; 3])> = (0..=duration)
            .map(|t| (t as f64, [10.0 * t as f64, 5.0 * t as f64, 20.0 * t as f64]))
            .collect();
        track_from(&pts)
    }

    #[test]
    fn filter_and_fit_drops_extrapolates_and_truncates() {
        let tracks = vec![straight_track(35), straight_track(59), straight_track(100)];
        let batch = filter_and_fit(&tracks, 70, &ReconstructSettings::default());
        assert_eq!(batch.dropped, vec![0]);
        assert!(batch.failures.is_empty());
        assert_eq!(batch.fitted.len(), 2);
        for f in &batch.fitted {
            assert_eq!(f.trajectory.len(), 70);
        }
        // extrapolation past the last measurement follows the straight line
        let ext = &batch.fitted[0].trajectory;
        assert!((ext.row(69).x - 690.0).abs() < 1e-3);
        // truncation keeps the first 70 seconds
        let tr = &batch.fitted[1].trajectory;
        assert!((tr.row(69).z - 1380.0).abs() < 1e-3);
    }

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let tracks: Vec<RawTrack> = (0..12)
            .map(|k| {
                let kept: Vec<usize> = (0..(60 + k)).filter(|_| rng.random::<f64>() < 0.7).collect();
                let pts: Vec<(f64, [f64; 3])> = kept
                    .into_iter()
                    .map(|t| (t as f64, [t as f64 * 3.0 + rng.random_range(-1.0..1.0), 0.0, 0.0]))
                    .collect();
                track_from(&pts)
            })
            .collect();
        let a = filter_and_fit(&tracks, 60, &ReconstructSettings::default());
        let b = filter_and_fit(&tracks, 60, &ReconstructSettings::default());
        let idx: Vec<usize> = a.fitted.iter().map(|f| f.index).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.trajectories(), b.trajectories());
    }
}
