//! End-to-end commands: ingest, train, sample, predict, evaluate and
//! synthetic data generation. Each `cmd_*` wraps an in-memory counterpart
//! with file handling.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{
    format_score_table, generation_score, prediction_rms, select_hyperparams, train_model, train_test_split, ScoreRow,
};
use crate::geo::AirportReference;
use crate::gmm::{
    canonical_to_model, log_likelihood, predict_detailed, read_model, sample, write_model, Observation, PredictOptions,
    TrajectoryModel,
};
use crate::ingest::{assemble_tracks, parse_measurements, read_tracks, scale, write_tracks, Mode, RawRecord, RawTrack};
use crate::reconstruct::{filter_and_fit, select_common_length};
use crate::synth::{emit_radar_stream, make_ground_truth, GroundTruthSpec, RadarStream, SyntheticFlight};
use crate::trajectory::{read_trajectories, vectorize, write_trajectories, Trajectory};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub records: usize,
    /// `line N: reason` for every malformed line.
    pub malformed: Vec<String>,
    pub landings: usize,
    pub takeoffs: usize,
    pub discarded: usize,
    pub outside_airspace: usize,
}

/// Parses a measurement stream and returns canonical tracks, landings first.
pub fn ingest<R: BufRead>(reader: R, cfg: &PipelineConfig) -> Result<(Vec<RawTrack>, IngestReport)> {
    let reference = cfg.airport.reference()?;
    let parsed = parse_measurements(reader)?;
    let summary = assemble_tracks(&parsed.records, &reference, &cfg.ingest);
    let report = IngestReport {
        records: parsed.records.len(),
        malformed: parsed
            .diagnostics
            .iter()
            .map(|d| format!("line {}: {}", d.line, d.message))
            .collect(),
        landings: summary.landings.len(),
        takeoffs: summary.takeoffs.len(),
        discarded: summary.discarded,
        outside_airspace: summary.outside_airspace,
    };
    let mut tracks = summary.landings;
    tracks.extend(summary.takeoffs);
    Ok((tracks, report))
}

pub fn cmd_ingest(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<IngestReport> {
    let file = std::io::BufReader::new(std::fs::File::open(input)?);
    let (tracks, report) = ingest(file, cfg)?;
    std::fs::write(output, write_tracks(&tracks))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub t_com: usize,
    pub k: usize,
    pub r: usize,
    pub weights: Vec<f64>,
    pub tracks: usize,
    pub fitted: usize,
    pub dropped_short: usize,
    pub failed: usize,
    pub train: usize,
    pub heldout: usize,
    pub kmeans_objective: f64,
    /// Objective value of the chosen cell; absent without held-out data.
    pub score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrajectoryModel,
    pub table: Vec<ScoreRow>,
    /// Held-out reconstructions in the model frame.
    pub heldout: Vec<Trajectory>,
    pub report: TrainReport,
}

/// Reconstructs the tracks of the configured mode, splits them, and fits the
/// grid. Without held-out data the first grid cell is fit on everything.
pub fn train(tracks: &[RawTrack], cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let mode = cfg.train.mode;
    let up = cfg.train.up_factor;
    let mine: Vec<RawTrack> = tracks.iter().filter(|t| t.mode == Some(mode)).map(|t| scale(t, up)).collect();
    if mine.is_empty() {
        return Err(Error::Pipeline(format!("no {mode} tracks to train on")));
    }
    let t_com = match cfg.reconstruct.t_com {
        Some(t) => t,
        None => select_common_length(&mine)?,
    };
    let batch = filter_and_fit(&mine, t_com, &cfg.reconstruct_settings());
    let fitted = batch.trajectories();
    log::info!(
        "t_com = {t_com}: {} fitted, {} too short, {} failed",
        fitted.len(),
        batch.dropped.len(),
        batch.failures.len()
    );
    let (train_set, held_canonical) = train_test_split(&fitted, cfg.train.split, cfg.seed)?;
    let heldout: Vec<Trajectory> = held_canonical.iter().map(|t| canonical_to_model(t, mode, up)).collect();
    let selection = cfg.selection();

    let (model, table, kmeans_objective, score) = if heldout.is_empty() {
        let (k, r) = (cfg.train.k_grid[0], cfg.train.r_grid[0]);
        if cfg.train.k_grid.len() * cfg.train.r_grid.len() > 1 {
            log::warn!("no held-out data; fitting K = {k}, r = {r} without a grid search");
        }
        let (model, km) = train_model(&train_set, k, r, mode, up, &selection.kmeans, cfg.seed)?;
        (model, Vec::new(), km.objective, None)
    } else {
        let sel = select_hyperparams(&train_set, &heldout, mode, up, &selection)?;
        let row = sel
            .table
            .iter()
            .find(|row| (row.k, row.r) == (sel.k, sel.r))
            .copied()
            .expect("selected cell is in the table");
        (sel.model, sel.table, row.kmeans_objective, Some(row.score(selection.objective)))
    };
    let report = TrainReport {
        mode,
        t_com,
        k: model.k(),
        r: model.rank,
        weights: model.weights(),
        tracks: mine.len(),
        fitted: fitted.len(),
        dropped_short: batch.dropped.len(),
        failed: batch.failures.len(),
        train: train_set.len(),
        heldout: heldout.len(),
        kmeans_objective,
        score,
    };
    Ok(TrainOutcome {
        model,
        table,
        heldout,
        report,
    })
}

/// Output locations for [`cmd_train`]; the model path is required.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs<'a> {
    pub model: Option<&'a Path>,
    pub heldout: Option<&'a Path>,
    pub scores: Option<&'a Path>,
}

pub fn cmd_train(tracks_path: &Path, out: &TrainOutputs<'_>, cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let tracks = read_tracks(&std::fs::read_to_string(tracks_path)?)?;
    let outcome = train(&tracks, cfg)?;
    if let Some(p) = out.model {
        write_model(p, &outcome.model)?;
    }
    if let Some(p) = out.heldout {
        std::fs::write(p, write_trajectories(outcome.model.t_com, &outcome.heldout))?;
    }
    if let Some(p) = out.scores {
        std::fs::write(p, format_score_table(&outcome.table))?;
    }
    Ok(outcome)
}

pub fn cmd_sample(model_path: &Path, count: usize, seed: u64, output: &Path) -> Result<usize> {
    let model = read_model(model_path)?;
    let draws = sample(&model, count, seed)?;
    std::fs::write(output, write_trajectories(model.t_com, &draws))?;
    Ok(draws.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictAnswer {
    pub target_id: String,
    pub observations: usize,
    pub cluster: usize,
    pub responsibilities: Vec<f64>,
    /// Model second of the first observation.
    pub offset: usize,
    /// Model second of the latest observation.
    pub now: usize,
    /// Model second at which the predicted path comes closest to the airport.
    pub closest_approach: usize,
    /// `closest_approach - now`; the time to touchdown for a landing.
    pub seconds_to_closest_approach: i64,
    /// Bearing of the predicted final position, degrees clockwise from north.
    pub exit_bearing_deg: f64,
}

/// Groups reports by target (first-appearance order) into observations timed
/// in whole seconds from each target's first report.
pub fn observations_by_target(records: &[RawRecord], reference: &AirportReference) -> Vec<(String, Vec<Observation>)> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_target: HashMap<&str, Vec<&RawRecord>> = HashMap::new();
    for r in records {
        by_target
            .entry(r.target_id.as_str())
            .or_insert_with(|| {
                order.push(r.target_id.as_str());
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let rs = &by_target[id];
            let t0 = rs.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
            let obs = rs
                .iter()
                .map(|r| {
                    let p = reference.geodetic_to_enu(&r.position);
                    Observation::new((r.time - t0).round() as usize, p.east, p.north, p.up)
                })
                .collect();
            (id.to_string(), obs)
        })
        .collect()
}

/// Predicts the remainder of each target's flight, searching over where its
/// reports sit in model time.
pub fn predict_targets(
    model: &TrajectoryModel,
    targets: &[(String, Vec<Observation>)],
    noise_var: f64,
) -> Result<Vec<(PredictAnswer, Trajectory)>> {
    let options = PredictOptions { offset_search: true };
    targets
        .iter()
        .map(|(id, obs)| {
            let p = predict_detailed(model, obs, noise_var, options)?;
            let span = obs.iter().map(|o| o.time).max().unwrap_or(0) - obs.iter().map(|o| o.time).min().unwrap_or(0);
            let now = p.offset + span;
            let traj = &p.trajectory;
            let closest = (0..traj.len())
                .min_by(|&a, &b| traj.row(a).norm().total_cmp(&traj.row(b).norm()))
                .unwrap_or(0);
            let last = traj.row(traj.len() - 1);
            let bearing = last.x.atan2(last.y).to_degrees().rem_euclid(360.0);
            let answer = PredictAnswer {
                target_id: id.clone(),
                observations: obs.len(),
                cluster: p.cluster,
                responsibilities: p.responsibilities.clone(),
                offset: p.offset,
                now,
                closest_approach: closest,
                seconds_to_closest_approach: closest as i64 - now as i64,
                exit_bearing_deg: bearing,
            };
            Ok((answer, p.trajectory))
        })
        .collect()
}

pub fn cmd_predict(
    model_path: &Path,
    prefix_path: &Path,
    output: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<PredictAnswer>> {
    let model = read_model(model_path)?;
    let file = std::io::BufReader::new(std::fs::File::open(prefix_path)?);
    let parsed = parse_measurements(file)?;
    for d in &parsed.diagnostics {
        log::warn!("{}: line {}: {}", prefix_path.display(), d.line, d.message);
    }
    let targets = observations_by_target(&parsed.records, &cfg.airport.reference()?);
    let results = predict_targets(&model, &targets, cfg.obs_noise * cfg.obs_noise)?;
    let trajectories: Vec<Trajectory> = results.iter().map(|(_, t)| t.clone()).collect();
    std::fs::write(output, write_trajectories(model.t_com, &trajectories))?;
    Ok(results.into_iter().map(|(a, _)| a).collect())
}

/// Scores a model on model-frame trajectories. The k-means objective is not
/// known here and is reported as NaN.
pub fn evaluate(model: &TrajectoryModel, heldout: &[Trajectory], cfg: &PipelineConfig) -> Result<ScoreRow> {
    if let Some(t) = heldout.iter().find(|t| t.len() != model.t_com) {
        return Err(Error::Pipeline(format!(
            "held-out trajectory has {} samples, model expects {}",
            t.len(),
            model.t_com
        )));
    }
    let sel = cfg.selection();
    let noise_var = sel.obs_noise * sel.obs_noise;
    let generation = generation_score(model, heldout, &sel.generation)?.mean;
    let prediction = prediction_rms(model, heldout, sel.prefix_len, noise_var)?;
    let mut ll = 0.0;
    for t in heldout {
        ll += log_likelihood(model, &vectorize(t), noise_var)?;
    }
    Ok(ScoreRow {
        k: model.k(),
        r: model.rank,
        generation,
        prediction_rms: prediction,
        log_likelihood: ll / heldout.len() as f64,
        kmeans_objective: f64::NAN,
    })
}

pub fn cmd_evaluate(model_path: &Path, heldout_path: &Path, output: &Path, cfg: &PipelineConfig) -> Result<ScoreRow> {
    let model = read_model(model_path)?;
    let (_, heldout) = read_trajectories(&std::fs::read_to_string(heldout_path)?)?;
    let row = evaluate(&model, &heldout, cfg)?;
    std::fs::write(output, format_score_table(&[row]))?;
    Ok(row)
}

/// Ground truth and radar feed for both modes at once.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub landing: TrajectoryModel,
    pub takeoff: TrajectoryModel,
    pub stream: RadarStream,
}

impl SyntheticScenario {
    pub fn flights(&self) -> &[SyntheticFlight] {
        &self.stream.flights
    }
}

/// `flights` landings and as many takeoffs from the four-route truth, plus
/// overflights at the given fraction of each.
pub fn synth_scenario(flights: usize, overflight_fraction: f64, seed: u64) -> Result<SyntheticScenario> {
    let mut models = Vec::new();
    let mut stream = RadarStream {
        reports: Vec::new(),
        flights: Vec::new(),
    };
    for (i, (mode, prefix)) in [(Mode::Landing, "LND"), (Mode::Takeoff, "TKO")].into_iter().enumerate() {
        let mut spec = GroundTruthSpec::four_archetypes(mode);
        spec.radar.id_prefix = prefix.into();
        spec.radar.overflight_fraction = overflight_fraction;
        let sub_seed = seed.wrapping_mul(2).wrapping_add(i as u64);
        let truth = make_ground_truth(&spec, sub_seed)?;
        let s = emit_radar_stream(&truth, flights, &spec.radar, sub_seed)?;
        stream.reports.extend(s.reports);
        stream.flights.extend(s.flights);
        models.push(truth);
    }
    stream.reports.sort_by(|a, b| a.time.total_cmp(&b.time));
    let takeoff = models.pop().expect("two models");
    let landing = models.pop().expect("two models");
    Ok(SyntheticScenario {
        landing,
        takeoff,
        stream,
    })
}

pub fn cmd_synth(
    flights: usize,
    overflight_fraction: f64,
    seed: u64,
    output: &Path,
    truth_dir: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<SyntheticScenario> {
    let scenario = synth_scenario(flights, overflight_fraction, seed)?;
    let reference = cfg.airport.reference()?;
    std::fs::write(output, scenario.stream.to_measurement_file(&reference))?;
    if let Some(dir) = truth_dir {
        std::fs::create_dir_all(dir)?;
        write_model(&dir.join("truth_landing.json"), &scenario.landing)?;
        write_model(&dir.join("truth_takeoff.json"), &scenario.takeoff)?;
    }
    Ok(scenario)
}
