//! Held-out evaluation: distributional similarity of generated trajectories,
//! prefix prediction error, and hyperparameter selection.
//!
//! Trajectories passed here are in the model frame (meters, forward time).

mod histogram;
mod select;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use histogram::{
    histogram_kl, kl_divergence, kl_from_counts, position_counts, smoothed, Binning, HistogramDistribution,
};
pub use select::{
    format_score_table, select_hyperparams, train_model, Objective, ScoreRow, Selection, SelectionSettings,
};

use crate::error::EvalError;
use crate::geo::DEFAULT_LATERAL_BOUND;
use crate::gmm::{predict, sample, Observation, TrajectoryModel};
use crate::trajectory::Trajectory;

/// Finite-difference kinematics at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSeries {
    /// Horizontal ground speed, m/s.
    pub longitudinal_speed: Vec<f64>,
    /// m/s, positive climbing.
    pub vertical_speed: Vec<f64>,
    /// rad/s, positive clockwise seen from above (heading measured from north).
    pub turn_rate: Vec<f64>,
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub fn derive_kinematics(traj: &Trajectory) -> Result<KinematicSeries, EvalError> {
    let t = traj.len();
    if t < 3 {
        return Err(EvalError::TooShort(t));
    }
    let mut speed = Vec::with_capacity(t - 1);
    let mut vertical = Vec::with_capacity(t - 1);
    let mut heading = Vec::with_capacity(t - 1);
    for i in 0..t - 1 {
        let d = traj.row(i + 1) - traj.row(i);
        speed.push(d.x.hypot(d.y));
        vertical.push(d.z);
        heading.push(d.x.atan2(d.y));
    }
    let turn = heading.windows(2).map(|w| wrap_angle(w[1] - w[0])).collect();
    Ok(KinematicSeries {
        longitudinal_speed: speed,
        vertical_speed: vertical,
        turn_rate: turn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub n_samples: usize,
    pub seed: u64,
    /// Lateral occupancy grid is `position_bins²` over `±lateral_bound`.
    pub position_bins: usize,
    pub lateral_bound: f64,
    pub feature_bins: usize,
    pub alpha: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            seed: 0,
            position_bins: 400,
            lateral_bound: DEFAULT_LATERAL_BOUND,
            feature_bins: 100,
            alpha: 1.0,
        }
    }
}

/// Per-feature KL divergences (real ‖ generated) and their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationScore {
    pub position: f64,
    pub longitudinal_speed: f64,
    pub vertical_speed: f64,
    pub turn_rate: f64,
    pub mean: f64,
}

struct Features {
    positions: Vec<(f64, f64)>,
    speed: Vec<f64>,
    vertical: Vec<f64>,
    turn: Vec<f64>,
}

fn pooled_features(trajs: &[Trajectory]) -> Result<Features, EvalError> {
    let mut f = Features {
        positions: Vec::new(),
        speed: Vec::new(),
        vertical: Vec::new(),
        turn: Vec::new(),
    };
    for t in trajs {
        let k = derive_kinematics(t)?;
        f.positions.extend((0..t.len()).map(|i| (t.positions()[(i, 0)], t.positions()[(i, 1)])));
        f.speed.extend(k.longitudinal_speed);
        f.vertical.extend(k.vertical_speed);
        f.turn.extend(k.turn_rate);
    }
    Ok(f)
}

/// Compares two trajectory sets feature by feature.
pub fn compare_sets(real: &[Trajectory], generated: &[Trajectory], settings: &GenerationSettings) -> Result<GenerationScore, EvalError> {
    if real.is_empty() || generated.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let p = pooled_features(real)?;
    let q = pooled_features(generated)?;
    let bins = settings.position_bins;
    let position = kl_from_counts(
        &position_counts(&p.positions, settings.lateral_bound, bins)?,
        &position_counts(&q.positions, settings.lateral_bound, bins)?,
        settings.alpha,
    )?;
    let fb = settings.feature_bins;
    let longitudinal_speed = histogram_kl(&p.speed, &q.speed, fb, settings.alpha)?;
    let vertical_speed = histogram_kl(&p.vertical, &q.vertical, fb, settings.alpha)?;
    let turn_rate = histogram_kl(&p.turn, &q.turn, fb, settings.alpha)?;
    Ok(GenerationScore {
        position,
        longitudinal_speed,
        vertical_speed,
        turn_rate,
        mean: (position + longitudinal_speed + vertical_speed + turn_rate) / 4.0,
    })
}

/// Samples the model and compares against held-out trajectories.
pub fn generation_score(model: &TrajectoryModel, heldout: &[Trajectory], settings: &GenerationSettings) -> Result<GenerationScore, EvalError> {
    let generated = sample(model, settings.n_samples, settings.seed)?;
    compare_sets(heldout, &generated, settings)
}

/// RMS position error over the unobserved steps after conditioning on the
/// first `m` steps of each held-out trajectory.
pub fn prediction_rms(model: &TrajectoryModel, heldout: &[Trajectory], m: usize, noise_var: f64) -> Result<f64, EvalError> {
    let t_com = model.t_com;
    if m == 0 || m >= t_com {
        return Err(EvalError::BadPrefix { m, t_com });
    }
    if heldout.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let sums = heldout
        .par_iter()
        .map(|traj| {
            let pred = predict(model, &Observation::prefix(traj, m), noise_var)?;
            let diff = pred.positions().rows(m, t_com - m) - traj.positions().rows(m, t_com - m);
            Ok(diff.norm_squared())
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    let total: f64 = sums.iter().sum();
    Ok((total / (heldout.len() * (t_com - m)) as f64).sqrt())
}

/// Shuffled index split; the first part has `round(fraction · n)` items and
/// both parts keep input order.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(EvalError::BadFraction);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * n as f64).round() as usize;
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn train_test_split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), EvalError> {
    let (a, b) = split_indices(items.len(), fraction, seed)?;
    Ok((
        a.into_iter().map(|i| items[i].clone()).collect(),
        b.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::ClusterModel;
    use crate::ingest::Mode;
    use nalgebra::{DMatrix, DVector, Rotation3, Vector3};

    fn line(v: [f64; 3], t: usize) -> Trajectory {
        let rows: Vec<[f64; 3]> = (0..t).map(|i| [v[0] * i as f64, v[1] * i as f64, v[2] * i as f64]).collect();
        Trajectory::from_rows(&rows)
    }

    #[test]
    fn straight_track_kinematics() {
        let k = derive_kinematics(&line([1.0, 2.0, 0.0], 10)).unwrap();
        assert_eq!(k.longitudinal_speed.len(), 9);
        assert_eq!(k.turn_rate.len(), 8);
        assert!(k.longitudinal_speed.iter().all(|&s| (s - 5f64.sqrt()).abs() < 1e-12));
        assert!(k.turn_rate.iter().all(|&w| w.abs() < 1e-12));
    }

    #[test]
    fn circular_arc_turn_rate() {
        let rows: Vec<[f64; 3]> = (0..40)
            .map(|i| {
                let a = 0.1 * i as f64;
                [100.0 * a.cos(), 100.0 * a.sin(), 0.0]
            })
            .collect();
        let k = derive_kinematics(&Trajectory::from_rows(&rows)).unwrap();
        // counter-clockwise in the east/north plane is a left turn
        assert!(k.turn_rate.iter().all(|&w| (w.abs() - 0.1).abs() < 1e-3));
    }

    #[test]
    fn pure_climb() {
        let k = derive_kinematics(&line([0.0, 0.0, 7.5], 5)).unwrap();
        assert!(k.longitudinal_speed.iter().all(|&s| s == 0.0));
        assert!(k.vertical_speed.iter().all(|&v| v == 7.5));
        assert!(matches!(derive_kinematics(&line([1.0, 0.0, 0.0], 2)), Err(EvalError::TooShort(2))));
    }

    #[test]
    fn speeds_and_turns_invariant_under_lateral_rotation() {
        let rows: Vec<[f64; 3]> = (0..30)
            .map(|i| {
                let s = i as f64;
                [50.0 * s + 0.3 * s * s, 20.0 * (s / 5.0).sin() * s, 3.0 * s]
            })
            .collect();
        let a = Trajectory::from_rows(&rows);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.83);
        let rotated: Vec<[f64; 3]> = rows.iter().map(|r| (rot * Vector3::from(*r)).into()).collect();
        let ka = derive_kinematics(&a).unwrap();
        let kb = derive_kinematics(&Trajectory::from_rows(&rotated)).unwrap();
        for (x, y) in ka.longitudinal_speed.iter().zip(&kb.longitudinal_speed) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in ka.turn_rate.iter().zip(&kb.turn_rate) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn wrapping() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    fn toy_model(t: usize, offsets: &[f64]) -> TrajectoryModel {
        let dim = 3 * t;
        let clusters = offsets
            .iter()
            .map(|&o| ClusterModel {
                weight: 1.0 / offsets.len() as f64,
                mean: DVector::from_fn(dim, |i, _| {
                    let (c, s) = (i / t, (i % t) as f64);
                    [60.0 * s + o, o * 0.5 + 10.0 * s, 5.0 * s][c]
                }),
                deviations: DMatrix::from_fn(dim, 1, |i, _| if i / t == 1 { 1.0 / (t as f64).sqrt() } else { 0.0 }),
                singular_values: DVector::from_element(1, 400.0),
            })
            .collect();
        TrajectoryModel {
            mode: Mode::Takeoff,
            t_com: t,
            rank: 1,
            up_factor: 10.0,
            clusters,
        }
    }

    #[test]
    fn archetype_prefixes_predict_exactly() {
        let m = toy_model(20, &[0.0, 3000.0]);
        let held: Vec<Trajectory> = m.clusters.iter().map(|c| c.archetype()).collect();
        for prefix in [1, 5, 10, 19] {
            assert!(prediction_rms(&m, &held, prefix, 225.0).unwrap() < 1e-6);
        }
        assert!(matches!(prediction_rms(&m, &held, 0, 1.0), Err(EvalError::BadPrefix { .. })));
        assert!(matches!(prediction_rms(&m, &held, 20, 1.0), Err(EvalError::BadPrefix { .. })));
    }

    #[test]
    fn rms_on_model_samples_is_bounded_by_deviation_scale() {
        let m = toy_model(20, &[0.0, 3000.0]);
        let held = sample(&m, 200, 5).unwrap();
        let rms = prediction_rms(&m, &held, 10, 225.0).unwrap();
        // per-coordinate deviation scale is sqrt(400 / 20)
        assert!(rms <= 3.0 * (400.0f64 / 20.0).sqrt(), "{rms}");
    }

    #[test]
    fn self_comparison_scores_zero() {
        let m = toy_model(15, &[0.0, 2000.0]);
        let s = sample(&m, 100, 1).unwrap();
        let score = compare_sets(&s, &s, &GenerationSettings::default()).unwrap();
        assert_eq!(score.mean, 0.0);
    }

    #[test]
    fn right_model_scores_better_than_wrong_one() {
        let truth = toy_model(15, &[0.0, 2000.0]);
        let wrong = toy_model(15, &[-4000.0]);
        let held = sample(&truth, 300, 2).unwrap();
        let settings = GenerationSettings {
            seed: 9,
            ..Default::default()
        };
        let good = generation_score(&truth, &held, &settings).unwrap();
        let bad = generation_score(&wrong, &held, &settings).unwrap();
        assert!(good.mean < bad.mean);
        assert_eq!(good, generation_score(&truth, &held, &settings).unwrap());
    }

    #[test]
    fn splits() {
        let (a, b) = split_indices(100, 0.75, 3).unwrap();
        assert_eq!((a.len(), b.len()), (75, 25));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.75, 3).unwrap(), (a, b));
        let (x, y) = train_test_split(&[1, 2, 3], 1.0, 0).unwrap();
        assert_eq!((x, y), (vec![1, 2, 3], vec![]));
        assert!(matches!(split_indices(3, 1.5, 0), Err(EvalError::BadFraction)));
    }
}
