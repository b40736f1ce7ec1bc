//! Grid search over the number of clusters and the deviation rank.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generation_score, prediction_rms, GenerationSettings};
use crate::cluster::{cluster_stats, kmeans_pp, KMeansResult, KMeansSettings};
use crate::error::EvalError;
use crate::gmm::{fit_model, log_likelihood, TrajectoryModel};
use crate::ingest::Mode;
use crate::trajectory::{vectorize, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Mean histogram KL of sampled versus held-out trajectories.
    Generation,
    /// RMS error of prefix-conditioned predictions.
    Prediction,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generation" => Ok(Self::Generation),
            "prediction" => Ok(Self::Prediction),
            other => Err(format!("unknown objective {other:?}, expected generation or prediction")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSettings {
    pub k_grid: Vec<usize>,
    pub r_grid: Vec<usize>,
    pub objective: Objective,
    pub kmeans: KMeansSettings,
    pub seed: u64,
    /// Observed prefix length for the prediction objective.
    pub prefix_len: usize,
    /// Observation noise standard deviation, meters.
    pub obs_noise: f64,
    pub generation: GenerationSettings,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            k_grid: vec![1, 2, 4, 8],
            r_grid: vec![5],
            objective: Objective::Prediction,
            kmeans: KMeansSettings::default(),
            seed: 0,
            prefix_len: 10,
            obs_noise: 15.0,
            generation: GenerationSettings::default(),
        }
    }
}

/// Clusters trajectories in the scaled canonical frame and builds the model.
pub fn train_model(
    train: &[Trajectory],
    k: usize,
    r: usize,
    mode: Mode,
    up_factor: f64,
    kmeans: &KMeansSettings,
    seed: u64,
) -> Result<(TrajectoryModel, KMeansResult), EvalError> {
    let points: Vec<DVector<f64>> = train.iter().map(vectorize).collect();
    let km = kmeans_pp(&points, k, seed, kmeans)?;
    let stats = cluster_stats(&points, &km.assignments, &km.centers)?;
    Ok((fit_model(&stats, r, mode, up_factor)?, km))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub k: usize,
    pub r: usize,
    /// Mean KL; `inf` when the cell could not be fit.
    pub generation: f64,
    pub prediction_rms: f64,
    /// Mean held-out log-likelihood under the noise-regularized mixture.
    pub log_likelihood: f64,
    pub kmeans_objective: f64,
}

impl ScoreRow {
    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Generation => self.generation,
            Objective::Prediction => self.prediction_rms,
        }
    }

    fn infeasible(k: usize, r: usize) -> Self {
        Self {
            k,
            r,
            generation: f64::INFINITY,
            prediction_rms: f64::INFINITY,
            log_likelihood: f64::NEG_INFINITY,
            kmeans_objective: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub k: usize,
    pub r: usize,
    /// One row per grid cell, `k` major.
    pub table: Vec<ScoreRow>,
    pub model: TrajectoryModel,
}

/// Fits every `(K, r)` cell on `train` (scaled canonical frame) and scores it
/// on `heldout` (model frame). The lowest score wins; ties go to the earliest
/// cell in grid order.
pub fn select_hyperparams(
    train: &[Trajectory],
    heldout: &[Trajectory],
    mode: Mode,
    up_factor: f64,
    settings: &SelectionSettings,
) -> Result<Selection, EvalError> {
    if settings.k_grid.is_empty() || settings.r_grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if heldout.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let noise_var = settings.obs_noise * settings.obs_noise;
    let cells: Vec<(usize, usize)> = settings
        .k_grid
        .iter()
        .flat_map(|&k| settings.r_grid.iter().map(move |&r| (k, r)))
        .collect();
    let fitted: Vec<Option<(TrajectoryModel, ScoreRow)>> = cells
        .par_iter()
        .map(|&(k, r)| {
            let (model, km) = match train_model(train, k, r, mode, up_factor, &settings.kmeans, settings.seed) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("K = {k}, r = {r}: {e}");
                    return Ok(None);
                }
            };
            let generation = generation_score(&model, heldout, &settings.generation)?.mean;
            let prediction = prediction_rms(&model, heldout, settings.prefix_len, noise_var)?;
            let ll = heldout
                .iter()
                .map(|t| log_likelihood(&model, &vectorize(t), noise_var))
                .sum::<Result<f64, _>>()?
                / heldout.len() as f64;
            let row = ScoreRow {
                k,
                r,
                generation,
                prediction_rms: prediction,
                log_likelihood: ll,
                kmeans_objective: km.objective,
            };
            Ok(Some((model, row)))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut best: Option<usize> = None;
    let table: Vec<ScoreRow> = fitted
        .iter()
        .zip(&cells)
        .map(|(f, &(k, r))| f.as_ref().map_or(ScoreRow::infeasible(k, r), |(_, row)| *row))
        .collect();
    for (i, row) in table.iter().enumerate() {
        let s = row.score(settings.objective);
        if s.is_finite() && best.is_none_or(|b| s < table[b].score(settings.objective)) {
            best = Some(i);
        }
    }
    let best = best.ok_or(EvalError::NoFeasibleCell)?;
    let model = fitted
        .into_iter()
        .nth(best)
        .flatten()
        .map(|(m, _)| m)
        .ok_or(EvalError::NoFeasibleCell)?;
    Ok(Selection {
        k: table[best].k,
        r: table[best].r,
        table,
        model,
    })
}

/// Comma-separated score table with a header line.
pub fn format_score_table(rows: &[ScoreRow]) -> String {
    let mut s = String::from("k,r,generation_kl,prediction_rms_m,heldout_log_likelihood,kmeans_objective\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.k, r.r, r.generation, r.prediction_rms, r.log_likelihood, r.kmeans_objective
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{canonical_to_model, sample, ClusterModel};
    use nalgebra::DMatrix;

    /// Three clusters whose archetypes diverge from the first second and
    /// whose deviations only show up late.
    fn truth(t: usize) -> TrajectoryModel {
        let dim = 3 * t;
        let clusters = (0..3)
            .map(|j| {
                let heading = j as f64 * 2.0;
                ClusterModel {
                    weight: 1.0 / 3.0,
                    mean: DVector::from_fn(dim, |i, _| {
                        let (c, s) = (i / t, (i % t) as f64);
                        let d = 300.0 + 60.0 * s;
                        [d * heading.sin(), d * heading.cos(), 4.0 * s][c]
                    }),
                    deviations: DMatrix::from_fn(dim, 1, |i, _| {
                        let s = (i % t) as f64;
                        if i / t == 0 && s > t as f64 / 2.0 {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .normalize(),
                    singular_values: DVector::from_element(1, 200.0f64.powi(2)),
                }
            })
            .collect();
        TrajectoryModel {
            mode: Mode::Takeoff,
            t_com: t,
            rank: 1,
            up_factor: 1.0,
            clusters,
        }
    }

    #[test]
    fn prediction_objective_finds_true_k() {
        let t = 30;
        let m = truth(t);
        let train = sample(&m, 300, 1).unwrap();
        let held = sample(&m, 100, 2).unwrap();
        let settings = SelectionSettings {
            k_grid: vec![1, 3, 8],
            r_grid: vec![1, 2],
            ..Default::default()
        };
        let sel = select_hyperparams(&train, &held, Mode::Takeoff, 1.0, &settings).unwrap();
        assert_eq!(sel.k, 3);
        assert_eq!(sel.table.len(), 6);
        let again = select_hyperparams(&train, &held, Mode::Takeoff, 1.0, &settings).unwrap();
        assert_eq!(format_score_table(&sel.table), format_score_table(&again.table));
    }

    #[test]
    fn singleton_grid_and_infeasible_cells() {
        let t = 10;
        let m = truth(t);
        let train = sample(&m, 20, 1).unwrap();
        let held = sample(&m, 5, 2).unwrap();
        let settings = SelectionSettings {
            k_grid: vec![2],
            r_grid: vec![3],
            objective: Objective::Generation,
            prefix_len: 4,
            ..Default::default()
        };
        let sel = select_hyperparams(&train, &held, Mode::Takeoff, 1.0, &settings).unwrap();
        assert_eq!((sel.k, sel.r), (2, 3));
        let too_many = SelectionSettings {
            k_grid: vec![50, 2],
            ..settings.clone()
        };
        let sel = select_hyperparams(&train, &held, Mode::Takeoff, 1.0, &too_many).unwrap();
        assert_eq!(sel.k, 2);
        assert!(sel.table[0].generation.is_infinite());
        let none = SelectionSettings {
            k_grid: vec![50],
            ..settings
        };
        assert!(matches!(
            select_hyperparams(&train, &held, Mode::Takeoff, 1.0, &none),
            Err(EvalError::NoFeasibleCell)
        ));
    }

    #[test]
    fn trained_landing_model_lives_in_forward_time() {
        let t = 12;
        let m = truth(t);
        // training data arrive reversed and scaled, as after ingest
        let forward = sample(&m, 60, 3).unwrap();
        let canonical: Vec<Trajectory> = forward.iter().map(|x| x.reversed().scale_up(10.0)).collect();
        let (model, _) = train_model(&canonical, 3, 1, Mode::Landing, 10.0, &KMeansSettings::default(), 0).unwrap();
        let back = canonical_to_model(&canonical[0], Mode::Landing, 10.0);
        assert!((back.positions() - forward[0].positions()).abs().max() < 1e-9);
        let means: Vec<Trajectory> = model.clusters.iter().map(|c| c.archetype()).collect();
        // every archetype starts 300 m out
        for a in means {
            assert!((a.row(0).xy().norm() - 300.0).abs() < 50.0);
        }
    }
}
