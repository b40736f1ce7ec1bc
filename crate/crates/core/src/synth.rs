//! Synthetic ground truth: a known trajectory mixture and a simulated radar
//! feed observing flights drawn from it.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::geo::{AirportReference, EnuPosition, GeodeticPosition};
use crate::gmm::{sample_with_labels, ClusterModel, TrajectoryModel};
use crate::ingest::{format_measurement_line, Mode};
use crate::trajectory::{devectorize, Trajectory};

/// Nominal path in runway-outward time: starts `start_distance` meters from
/// the airport along `heading_deg`, flies at `speed + acceleration·t`, and
/// optionally turns at a constant rate after `turn_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeParams {
    /// Initial course, degrees clockwise from north.
    pub heading_deg: f64,
    pub speed: f64,
    pub acceleration: f64,
    pub turn_start: f64,
    /// Signed, degrees per second; positive turns right.
    pub turn_rate_deg: f64,
    /// Total heading change of the turn, degrees (magnitude).
    pub turn_angle_deg: f64,
    /// Climb (takeoff) or glide (landing) angle, degrees.
    pub slope_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarSettings {
    /// Isotropic position noise, meters.
    pub noise: f64,
    /// Probability that a second has no report.
    pub dropout: f64,
    /// Probability that a reported second gets a second report.
    pub duplicate: f64,
    /// Uniform report-time jitter half-width, seconds.
    pub time_jitter: f64,
    /// Seconds `[start, end)` of every flight with no reports.
    pub blackout: Option<(usize, usize)>,
    /// Level overflights added per flight; these match neither rule.
    pub overflight_fraction: f64,
    pub start_time: f64,
    pub id_prefix: String,
}

impl Default for RadarSettings {
    fn default() -> Self {
        Self {
            noise: 10.0,
            dropout: 0.05,
            duplicate: 0.2,
            time_jitter: 0.2,
            blackout: None,
            overflight_fraction: 0.0,
            start_time: 1.7e9,
            id_prefix: "SYN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthSpec {
    pub mode: Mode,
    pub t_com: usize,
    pub start_distance: f64,
    pub archetypes: Vec<ArchetypeParams>,
    pub weights: Vec<f64>,
    /// Standard deviations of, in order: the along-track speed offset (m/s),
    /// the late cross-track offset at the final second (m), a constant
    /// parallel cross-track offset (m) and the vertical offset at the final
    /// second (m). Trailing entries may be omitted.
    pub deviation_scales: Vec<f64>,
    pub radar: RadarSettings,
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        Self::four_archetypes(Mode::Takeoff)
    }
}

impl GroundTruthSpec {
    /// Four well-separated routes, two of them turning.
    pub fn four_archetypes(mode: Mode) -> Self {
        let slope = match mode {
            Mode::Takeoff => 5.0,
            Mode::Landing => 3.0,
        };
        let route = |heading: f64, speed: f64, turn_rate: f64, turn_angle: f64| ArchetypeParams {
            heading_deg: heading,
            speed,
            acceleration: 0.5,
            turn_start: 30.0,
            turn_rate_deg: turn_rate,
            turn_angle_deg: turn_angle,
            slope_deg: slope,
        };
        Self {
            mode,
            t_com: 70,
            start_distance: 300.0,
            archetypes: vec![
                route(40.0, 60.0, 3.0, 60.0),
                route(130.0, 65.0, 0.0, 0.0),
                route(220.0, 60.0, -3.0, 45.0),
                route(310.0, 70.0, 0.0, 0.0),
            ],
            weights: vec![0.25; 4],
            deviation_scales: vec![1.2, 300.0, 60.0],
            radar: RadarSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.archetypes.is_empty() || self.archetypes.len() != self.weights.len() {
            return bad("need one weight per archetype and at least one archetype");
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || !(self.weights.iter().sum::<f64>() > 0.0) {
            return bad("weights must be nonnegative with a positive sum");
        }
        if self.t_com < 5 {
            return bad("t_com must be at least 5");
        }
        if self.deviation_scales.is_empty() || self.deviation_scales.len() > 4 {
            return bad("between 1 and 4 deviation scales");
        }
        if self.deviation_scales.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("deviation scales must be nonnegative");
        }
        for a in &self.archetypes {
            if !(1.0..=10.0).contains(&a.slope_deg) {
                return bad("slope must lie within 1 to 10 degrees");
            }
            if !(a.speed > 0.0) || a.turn_angle_deg < 0.0 {
                return bad("speed must be positive and turn angle nonnegative");
            }
        }
        let r = &self.radar;
        if !(r.noise >= 0.0) || !(r.time_jitter >= 0.0 && r.time_jitter < 0.5) {
            return bad("noise must be nonnegative and jitter within [0, 0.5)");
        }
        for p in [r.dropout, r.duplicate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(r.overflight_fraction >= 0.0) || !(self.start_distance >= 0.0) {
            return bad("negative overflight fraction or start distance");
        }
        Ok(())
    }
}

/// Archetype sampled at 1 Hz in runway-outward time, with unit tangent and
/// cumulative path length per second.
struct Path {
    positions: Vec<[f64; 3]>,
    tangents: Vec<Vector2<f64>>,
    distance: Vec<f64>,
}

fn trace(a: &ArchetypeParams, t_com: usize, start: f64, rotation: f64, turn_sign: f64) -> Path {
    const SUBSTEPS: usize = 200;
    let h = 1.0 / SUBSTEPS as f64;
    let psi0 = (a.heading_deg + rotation).to_radians();
    let rate = turn_sign * a.turn_rate_deg.to_radians();
    let max_turn = a.turn_angle_deg.to_radians();
    let heading = |t: f64| {
        let turned = if rate == 0.0 { 0.0 } else { ((t - a.turn_start).max(0.0) * rate.abs()).min(max_turn) };
        psi0 + rate.signum() * turned
    };
    let speed = |t: f64| a.speed + a.acceleration * t;
    let tan = a.slope_deg.to_radians().tan();

    let mut xy = Vector2::new(start * psi0.sin(), start * psi0.cos());
    let mut s = start;
    let mut path = Path {
        positions: Vec::with_capacity(t_com),
        tangents: Vec::with_capacity(t_com),
        distance: Vec::with_capacity(t_com),
    };
    for sec in 0..t_com {
        let t = sec as f64;
        let psi = heading(t);
        path.positions.push([xy.x, xy.y, s * tan]);
        path.tangents.push(Vector2::new(psi.sin(), psi.cos()));
        path.distance.push(s);
        // midpoint rule over the next second
        for k in 0..SUBSTEPS {
            let tm = t + (k as f64 + 0.5) * h;
            let (v, p) = (speed(tm), heading(tm));
            xy += Vector2::new(p.sin(), p.cos()) * (v * h);
            s += v * h;
        }
    }
    path
}

fn reverse_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.nrows();
    DMatrix::from_fn(t, m.ncols(), |i, j| m[(t - 1 - i, j)])
}

/// Stacks a `T × 3` block into the column-major trajectory layout.
fn stack(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Builds the true mixture. The seed rotates all routes by a common random
/// angle and flips each turn's direction at random.
pub fn make_ground_truth(spec: &GroundTruthSpec, seed: u64) -> Result<TrajectoryModel, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = rng.random_range(0.0..360.0);
    let t_com = spec.t_com;
    let last = (t_com - 1) as f64;
    let onset = (0.55 * last).floor();
    let total: f64 = spec.weights.iter().sum();
    let mut clusters = Vec::with_capacity(spec.archetypes.len());
    for (a, &w) in spec.archetypes.iter().zip(&spec.weights) {
        let turn_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let path = trace(a, t_com, spec.start_distance, rotation, turn_sign);
        let tan = a.slope_deg.to_radians().tan();
        let mean = DMatrix::from_fn(t_com, 3, |i, j| path.positions[i][j]);

        let mut shapes: Vec<DMatrix<f64>> = Vec::new();
        // along-track: 1 m/s faster
        shapes.push(DMatrix::from_fn(t_com, 3, |i, j| {
            let t = i as f64;
            let g = path.tangents[i];
            [g.x * t, g.y * t, t * tan][j]
        }));
        // cross-track, growing quadratically after the onset
        shapes.push(DMatrix::from_fn(t_com, 3, |i, j| {
            let t = i as f64;
            let f = if t > onset { ((t - onset) / (last - onset)).powi(2) } else { 0.0 };
            let g = path.tangents[i];
            [g.y * f, -g.x * f, 0.0][j]
        }));
        // parallel offset
        shapes.push(DMatrix::from_fn(t_com, 3, |i, j| {
            let g = path.tangents[i];
            [g.y, -g.x, 0.0][j]
        }));
        // vertical, proportional to distance flown
        shapes.push(DMatrix::from_fn(t_com, 3, |i, j| {
            if j == 2 {
                path.distance[i] / path.distance[t_com - 1]
            } else {
                0.0
            }
        }));

        let r = spec.deviation_scales.len();
        let (mean, shapes) = match spec.mode {
            Mode::Takeoff => (mean, shapes),
            Mode::Landing => (reverse_rows(&mean), shapes.iter().map(reverse_rows).collect()),
        };
        let mut wm = DMatrix::zeros(3 * t_com, r);
        for k in 0..r {
            wm.set_column(k, &(stack(&shapes[k]) * spec.deviation_scales[k]));
        }
        let svd = wm.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        clusters.push(ClusterModel {
            weight: w / total,
            mean: stack(&mean),
            deviations: DMatrix::from_fn(3 * t_com, r, |i, k| u[(i, order[k])]),
            singular_values: DVector::from_fn(r, |k, _| svd.singular_values[order[k]].powi(2)),
        });
    }
    let rank = spec.deviation_scales.len();
    Ok(TrajectoryModel {
        mode: spec.mode,
        t_com,
        rank,
        up_factor: 1.0,
        clusters,
    })
}

/// A simulated report in the airport frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticReport {
    pub target_id: String,
    pub time: f64,
    pub position: EnuPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFlight {
    pub target_id: String,
    /// Generating cluster; `None` for overflights.
    pub cluster: Option<usize>,
    /// Noise-free path, model frame. Empty for overflights.
    pub truth: Option<Trajectory>,
}

#[derive(Debug, Clone)]
pub struct RadarStream {
    /// Reports ordered by time.
    pub reports: Vec<SyntheticReport>,
    pub flights: Vec<SyntheticFlight>,
}

impl RadarStream {
    /// Serializes in the measurement file format.
    pub fn to_measurement_file(&self, reference: &AirportReference) -> String {
        let mut s = String::from("# target_id,unix_time_seconds,lat_deg,lon_deg,alt_m\n");
        for r in &self.reports {
            let g: GeodeticPosition = reference.enu_to_geodetic(&r.position);
            let _ = writeln!(s, "{}", format_measurement_line(&r.target_id, r.time, &g));
        }
        s
    }
}

fn observe(
    id: &str,
    path: &[[f64; 3]],
    t0: f64,
    radar: &RadarSettings,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<SyntheticReport>,
) {
    for (sec, p) in path.iter().enumerate() {
        if radar.blackout.is_some_and(|(a, b)| (a..b).contains(&sec)) || rng.random_bool(radar.dropout) {
            continue;
        }
        let copies = if rng.random_bool(radar.duplicate) { 2 } else { 1 };
        for _ in 0..copies {
            let jitter = if radar.time_jitter > 0.0 {
                rng.random_range(-radar.time_jitter..radar.time_jitter)
            } else {
                0.0
            };
            let e = EnuPosition::new(
                p[0] + noise.sample(rng),
                p[1] + noise.sample(rng),
                p[2] + noise.sample(rng),
            );
            out.push(SyntheticReport {
                target_id: id.to_string(),
                time: t0 + sec as f64 + jitter,
                position: e,
            });
        }
    }
}

fn overflight(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let course = rng.random_range(0.0..2.0 * PI);
    let miss = rng.random_range(3000.0..5000.0);
    let alt = rng.random_range(400.0..800.0);
    let (dir, normal) = (Vector2::new(course.sin(), course.cos()), Vector2::new(course.cos(), -course.sin()));
    (0..120)
        .map(|s| {
            let p = normal * miss + dir * (70.0 * (s as f64 - 60.0));
            [p.x, p.y, alt]
        })
        .collect()
}

/// Draws `n_flights` flights from the true model and simulates their radar
/// reports in the airport frame.
pub fn emit_radar_stream(truth: &TrajectoryModel, n_flights: usize, radar: &RadarSettings, seed: u64) -> Result<RadarStream, SynthError> {
    let drawn = sample_with_labels(truth, n_flights, seed).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let noise = Normal::new(0.0, radar.noise).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut reports = Vec::new();
    let mut flights = Vec::with_capacity(n_flights);
    for (i, (j, traj)) in drawn.into_iter().enumerate() {
        let id = format!("{}{:05}", radar.id_prefix, i);
        let path: Vec<[f64; 3]> = (0..traj.len()).map(|t| traj.row(t).into()).collect();
        observe(&id, &path, radar.start_time + 40.0 * i as f64, radar, &noise, &mut rng, &mut reports);
        flights.push(SyntheticFlight {
            target_id: id,
            cluster: Some(j),
            truth: Some(traj),
        });
    }
    let extra = (radar.overflight_fraction * n_flights as f64).round() as usize;
    for i in 0..extra {
        let id = format!("{}X{:05}", radar.id_prefix, i);
        let path = overflight(&mut rng);
        observe(&id, &path, radar.start_time + 40.0 * i as f64 + 20.0, radar, &noise, &mut rng, &mut reports);
        flights.push(SyntheticFlight {
            target_id: id,
            cluster: None,
            truth: None,
        });
    }
    reports.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(RadarStream { reports, flights })
}

/// Smallest mean RMS distance between estimated and true archetypes over
/// all one-to-one matchings, together with the per-truth RMS. Compares the
/// first `min` rows of each. Requires `estimated.len() >= truth.len()`.
pub fn match_archetypes(truth: &[Trajectory], estimated: &[Trajectory]) -> Option<Vec<f64>> {
    if estimated.len() < truth.len() || truth.len() > 10 {
        return None;
    }
    let rms = |a: &Trajectory, b: &Trajectory| {
        let n = a.len().min(b.len());
        let d = a.positions().rows(0, n) - b.positions().rows(0, n);
        (d.norm_squared() / n as f64).sqrt()
    };
    let cost: Vec<Vec<f64>> = truth.iter().map(|t| estimated.iter().map(|e| rms(t, e)).collect()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut used = vec![false; estimated.len()];
    let mut chosen = Vec::with_capacity(truth.len());
    fn search(
        i: usize,
        cost: &[Vec<f64>],
        used: &mut [bool],
        chosen: &mut Vec<usize>,
        acc: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if best.as_ref().is_some_and(|(b, _)| acc >= *b) {
            return;
        }
        if i == cost.len() {
            *best = Some((acc, chosen.clone()));
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                chosen.push(j);
                search(i + 1, cost, used, chosen, acc + cost[i][j], best);
                chosen.pop();
                used[j] = false;
            }
        }
    }
    search(0, &cost, &mut used, &mut chosen, 0.0, &mut best);
    best.map(|(_, m)| m.iter().enumerate().map(|(i, &j)| cost[i][j]).collect())
}

/// Archetype trajectories of a model.
pub fn archetypes(model: &TrajectoryModel) -> Vec<Trajectory> {
    model.clusters.iter().map(|c| devectorize(&c.mean)).collect()
}
