//! Measurement parsing, per-target track splitting, landing/takeoff
//! classification and canonicalization.
//!
//! Measurement files are UTF-8 text with one report per line:
//!
//! ```text
//! target_id,unix_time_seconds,lat_deg,lon_deg,alt_m
//! ```
//!
//! Lines starting with `#` and blank lines are skipped.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::geo::{in_terminal_airspace, AirportReference, EnuPosition, GeodeticPosition, FOOT};

/// Default gap that splits a target's report stream into separate flights.
pub const DEFAULT_GAP_THRESHOLD: f64 = 30.0;
/// Default vertical scaling applied before clustering.
pub const DEFAULT_UP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub target_id: String,
    pub time: f64,
    pub position: GeodeticPosition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedMeasurements {
    pub records: Vec<RawRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses a measurement stream. Malformed lines are skipped and reported;
/// only a read failure is fatal.
pub fn parse_measurements<R: BufRead>(reader: R) -> Result<ParsedMeasurements, IngestError> {
    let mut out = ParsedMeasurements::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_line(trimmed) {
            Ok(record) => out.records.push(record),
            Err(message) => out.diagnostics.push(Diagnostic {
                line: lineno,
                message,
            }),
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<RawRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    if fields[0].is_empty() {
        return Err("empty target id".into());
    }
    let num = |i: usize, name: &str| -> Result<f64, String> {
        let v: f64 = fields[i]
            .parse()
            .map_err(|_| format!("invalid {name} {:?}", fields[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite {name}"))
        }
    };
    let time = num(1, "time")?;
    let lat = num(2, "latitude")?;
    let lon = num(3, "longitude")?;
    let alt = num(4, "altitude")?;
    let position = GeodeticPosition::new(lat, lon, alt)
        .ok_or_else(|| format!("latitude/longitude out of range ({lat}, {lon})"))?;
    Ok(RawRecord {
        target_id: fields[0].to_string(),
        time,
        position,
    })
}

/// Serializes one report in the measurement file format.
pub fn format_measurement_line(target_id: &str, time: f64, g: &GeodeticPosition) -> String {
    format!(
        "{target_id},{time},{},{},{}",
        g.latitude, g.longitude, g.altitude
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Landing,
    Takeoff,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Landing => "landing",
            Mode::Takeoff => "takeoff",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "landing" => Ok(Mode::Landing),
            "takeoff" => Ok(Mode::Takeoff),
            other => Err(format!("unknown mode {other:?}, expected landing or takeoff")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Landing,
    Takeoff,
    Discard,
}

impl Classification {
    pub fn mode(self) -> Option<Mode> {
        match self {
            Classification::Landing => Some(Mode::Landing),
            Classification::Takeoff => Some(Mode::Takeoff),
            Classification::Discard => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Seconds; relative to the track start once the track is split.
    pub time: f64,
    pub position: EnuPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub target_id: String,
    pub measurements: Vec<Measurement>,
    /// `None` until the track is canonicalized.
    pub mode: Option<Mode>,
}

impl RawTrack {
    pub fn new(target_id: impl Into<String>, measurements: Vec<Measurement>) -> Self {
        Self {
            target_id: target_id.into(),
            measurements,
            mode: None,
        }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Last time minus first time.
    pub fn duration(&self) -> f64 {
        match (self.measurements.first(), self.measurements.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Index of the measurement closest to the runway center; ties go to the
    /// smallest index.
    pub fn closest_index(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.measurements.iter().enumerate() {
            let d = m.position.norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Splits one target's time-sorted measurements wherever consecutive reports
/// are more than `gap_threshold` seconds apart. Each resulting track is
/// re-based so that its first measurement is at time 0.
pub fn split_tracks(
    target_id: &str,
    measurements: &[Measurement],
    gap_threshold: f64,
) -> Vec<RawTrack> {
    let mut tracks = Vec::new();
    let mut start = 0;
    for i in 1..=measurements.len() {
        let boundary =
            i == measurements.len() || measurements[i].time - measurements[i - 1].time > gap_threshold;
        if boundary && start < i {
            let t0 = measurements[start].time;
            let segment = measurements[start..i]
                .iter()
                .map(|m| Measurement {
                    time: m.time - t0,
                    position: m.position,
                })
                .collect();
            tracks.push(RawTrack::new(target_id, segment));
            start = i;
        }
    }
    tracks
}

/// Heuristic landing/takeoff thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyThresholds {
    /// Magnitude of the average vertical rate, feet per minute.
    pub vertical_rate_fpm: f64,
    /// A landing's closest approach must come after this fraction of the track.
    pub landing_time_ratio: f64,
    /// A takeoff's closest approach must come before this fraction of the track.
    pub takeoff_time_ratio: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        Self {
            vertical_rate_fpm: 200.0,
            landing_time_ratio: 0.95,
            takeoff_time_ratio: 0.05,
        }
    }
}

/// Average vertical rate from the track endpoints, in feet per minute.
pub fn average_vertical_rate_fpm(track: &RawTrack) -> Result<f64, IngestError> {
    let (first, last) = endpoints(track)?;
    let mps = (last.position.up - first.position.up) / (last.time - first.time);
    Ok(mps * 60.0 / FOOT)
}

fn endpoints(track: &RawTrack) -> Result<(&Measurement, &Measurement), IngestError> {
    if track.len() < 2 {
        return Err(IngestError::TooFewMeasurements(track.len()));
    }
    let first = &track.measurements[0];
    let last = &track.measurements[track.len() - 1];
    if last.time - first.time <= 0.0 {
        return Err(IngestError::DegenerateTrack);
    }
    Ok((first, last))
}

/// Classifies a track as a landing, a takeoff, or neither.
///
/// A landing passes within the runway radius near its end, starts outside
/// it, and descends faster than the vertical-rate threshold. A takeoff is the
/// time mirror: close approach near the start, ends outside the radius, and
/// climbs faster than the threshold. All comparisons are strict.
pub fn classify_track(
    track: &RawTrack,
    runway_radius: f64,
    thresholds: &ClassifyThresholds,
) -> Result<Classification, IngestError> {
    let (first, last) = endpoints(track)?;
    let c = track.closest_index().expect("non-empty track");
    let closest = &track.measurements[c];
    let duration = last.time - first.time;
    let time_ratio = (closest.time - first.time) / duration;
    let rate = average_vertical_rate_fpm(track)?;
    let near = closest.position.norm() < runway_radius;

    let landing = near
        && first.position.norm() > runway_radius
        && rate < -thresholds.vertical_rate_fpm
        && time_ratio > thresholds.landing_time_ratio;
    let takeoff = near
        && last.position.norm() > runway_radius
        && rate > thresholds.vertical_rate_fpm
        && time_ratio < thresholds.takeoff_time_ratio;

    Ok(if landing {
        Classification::Landing
    } else if takeoff {
        Classification::Takeoff
    } else {
        Classification::Discard
    })
}

/// Mirrors a track in time: `t -> t_last - t`, with measurements re-sorted
/// ascending. Applying it twice restores the original track when the first
/// time is 0.
pub fn reverse_time(track: &RawTrack) -> RawTrack {
    let t_last = track.measurements.last().map_or(0.0, |m| m.time);
    let measurements = track
        .measurements
        .iter()
        .rev()
        .map(|m| Measurement {
            time: t_last - m.time,
            position: m.position,
        })
        .collect();
    RawTrack {
        target_id: track.target_id.clone(),
        measurements,
        mode: track.mode,
    }
}

/// Trims a classified track at its runway-closest measurement and orients it
/// so that time 0 is that measurement. Landings are time-reversed.
pub fn canonicalize(track: &RawTrack, mode: Mode) -> Result<RawTrack, IngestError> {
    let c = track
        .closest_index()
        .ok_or(IngestError::TooFewMeasurements(0))?;
    let mut out = match mode {
        Mode::Landing => {
            let kept = RawTrack {
                target_id: track.target_id.clone(),
                measurements: track.measurements[..=c].to_vec(),
                mode: None,
            };
            reverse_time(&kept)
        }
        Mode::Takeoff => {
            let tc = track.measurements[c].time;
            RawTrack {
                target_id: track.target_id.clone(),
                measurements: track.measurements[c..]
                    .iter()
                    .map(|m| Measurement {
                        time: m.time - tc,
                        position: m.position,
                    })
                    .collect(),
                mode: None,
            }
        }
    };
    if out.len() < 2 {
        return Err(IngestError::EmptyAfterTrim(out.len()));
    }
    out.mode = Some(mode);
    Ok(out)
}

/// Multiplies the up coordinate by `up_factor`.
pub fn scale(track: &RawTrack, up_factor: f64) -> RawTrack {
    map_up(track, |u| u * up_factor)
}

/// Divides the up coordinate by `up_factor`.
pub fn unscale(track: &RawTrack, up_factor: f64) -> RawTrack {
    map_up(track, |u| u / up_factor)
}

fn map_up(track: &RawTrack, f: impl Fn(f64) -> f64) -> RawTrack {
    let measurements = track
        .measurements
        .iter()
        .map(|m| Measurement {
            time: m.time,
            position: EnuPosition::new(m.position.east, m.position.north, f(m.position.up)),
        })
        .collect();
    RawTrack {
        target_id: track.target_id.clone(),
        measurements,
        mode: track.mode,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSettings {
    pub gap_threshold: f64,
    pub thresholds: ClassifyThresholds,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            thresholds: ClassifyThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestSummary {
    pub landings: Vec<RawTrack>,
    pub takeoffs: Vec<RawTrack>,
    /// Tracks that matched neither rule, including degenerate ones.
    pub discarded: usize,
    /// Reports dropped for lying outside the terminal airspace.
    pub outside_airspace: usize,
}

/// Converts reports to the airport frame, keeps those inside the terminal
/// airspace, splits each target's stream into tracks, and classifies and
/// canonicalizes every track. Output order follows the first appearance of
/// each target in `records`, then track order within the target.
pub fn assemble_tracks(
    records: &[RawRecord],
    reference: &AirportReference,
    settings: &IngestSettings,
) -> IngestSummary {
    let mut order: Vec<&str> = Vec::new();
    let mut by_target: HashMap<&str, Vec<Measurement>> = HashMap::new();
    let mut outside = 0;
    for r in records {
        let position = reference.geodetic_to_enu(&r.position);
        if !in_terminal_airspace(&position, reference) {
            outside += 1;
            continue;
        }
        by_target
            .entry(r.target_id.as_str())
            .or_insert_with(|| {
                order.push(r.target_id.as_str());
                Vec::new()
            })
            .push(Measurement {
                time: r.time,
                position,
            });
    }

    let per_target: Vec<Vec<(RawTrack, Classification)>> = order
        .par_iter()
        .map(|id| {
            let mut ms = by_target[id].clone();
            ms.sort_by(|a, b| a.time.total_cmp(&b.time));
            split_tracks(id, &ms, settings.gap_threshold)
                .into_iter()
                .map(|track| {
                    let class = classify_track(&track, reference.runway_radius, &settings.thresholds)
                        .unwrap_or(Classification::Discard);
                    (track, class)
                })
                .collect()
        })
        .collect();

    let mut summary = IngestSummary {
        outside_airspace: outside,
        ..Default::default()
    };
    for (track, class) in per_target.into_iter().flatten() {
        match class.mode().map(|m| (m, canonicalize(&track, m))) {
            Some((Mode::Landing, Ok(t))) => summary.landings.push(t),
            Some((Mode::Takeoff, Ok(t))) => summary.takeoffs.push(t),
            _ => summary.discarded += 1,
        }
    }
    summary
}

const TRACK_FILE_HEADER: &str = "# terminal-airspace tracks v1";

/// Writes canonical tracks. Each track is a `track,<id>,<mode>,<count>` line
/// followed by `count` lines of `time,east,north,up` in meters.
pub fn write_tracks(tracks: &[RawTrack]) -> String {
    let mut s = String::new();
    s.push_str(TRACK_FILE_HEADER);
    s.push('\n');
    for t in tracks {
        let mode = t.mode.map_or("unclassified".to_string(), |m| m.to_string());
        let _ = writeln!(s, "track,{},{},{}", t.target_id, mode, t.len());
        for m in &t.measurements {
            let p = m.position;
            let _ = writeln!(s, "{},{},{},{}", m.time, p.east, p.north, p.up);
        }
    }
    s
}

pub fn read_tracks(text: &str) -> Result<Vec<RawTrack>, IngestError> {
    let bad = |line: usize, msg: &str| IngestError::TrackFile(format!("line {line}: {msg}"));
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut tracks = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 || fields[0] != "track" {
            return Err(bad(lineno, "expected track,<id>,<mode>,<count>"));
        }
        let mode = match fields[2] {
            "unclassified" => None,
            m => Some(m.parse::<Mode>().map_err(|e| bad(lineno, &e))?),
        };
        let count: usize = fields[3].parse().map_err(|_| bad(lineno, "bad count"))?;
        let mut measurements = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, row) = lines.next().ok_or_else(|| bad(lineno, "truncated track"))?;
            let v: Vec<f64> = row
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(ln, "bad number"))?;
            if v.len() != 4 {
                return Err(bad(ln, "expected time,east,north,up"));
            }
            measurements.push(Measurement {
                time: v[0],
                position: EnuPosition::new(v[1], v[2], v[3]),
            });
        }
        tracks.push(RawTrack {
            target_id: fields[1].to_string(),
            measurements,
            mode,
        });
    }
    Ok(tracks)
}
