//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::KMeansSettings;
use crate::error::{Error, Result};
use crate::eval::{GenerationSettings, Objective, SelectionSettings};
use crate::geo::{AirportReference, GeodeticPosition, DEFAULT_LATERAL_BOUND, DEFAULT_VERTICAL_BOUND};
use crate::ingest::{IngestSettings, Mode, DEFAULT_UP_FACTOR};
use crate::reconstruct::ReconstructSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirportConfig {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub runway_radius: f64,
    pub lateral_bound: f64,
    pub vertical_bound: f64,
}

impl Default for AirportConfig {
    /// KJFK.
    fn default() -> Self {
        Self {
            latitude: 40.6413,
            longitude: -73.7781,
            altitude: 4.0,
            runway_radius: 2000.0,
            lateral_bound: DEFAULT_LATERAL_BOUND,
            vertical_bound: DEFAULT_VERTICAL_BOUND,
        }
    }
}

impl AirportConfig {
    pub fn reference(&self) -> Result<AirportReference> {
        let origin = GeodeticPosition::new(self.latitude, self.longitude, self.altitude)
            .ok_or_else(|| Error::Config("airport coordinates out of range".into()))?;
        if !(self.runway_radius > 0.0 && self.lateral_bound > 0.0 && self.vertical_bound > 0.0) {
            return Err(Error::Config("runway radius and bounds must be positive".into()));
        }
        Ok(AirportReference::with_bounds(
            origin,
            self.runway_radius,
            self.lateral_bound,
            self.vertical_bound,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    /// Common length in seconds; the median track duration when unset.
    pub t_com: Option<usize>,
    #[serde(flatten)]
    pub settings: ReconstructSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub k_grid: Vec<usize>,
    pub r_grid: Vec<usize>,
    /// Fraction of trajectories used for fitting; the rest score the grid.
    pub split: f64,
    pub objective: Objective,
    pub prefix_len: usize,
    pub up_factor: f64,
    pub kmeans: KMeansSettings,
    pub generation: GenerationSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = SelectionSettings::default();
        Self {
            mode: Mode::Landing,
            k_grid: s.k_grid,
            r_grid: s.r_grid,
            split: 0.75,
            objective: s.objective,
            prefix_len: s.prefix_len,
            up_factor: DEFAULT_UP_FACTOR,
            kmeans: s.kmeans,
            generation: s.generation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Observation noise standard deviation, meters.
    pub obs_noise: f64,
    pub airport: AirportConfig,
    pub ingest: IngestSettings,
    pub reconstruct: ReconstructConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            obs_noise: SelectionSettings::default().obs_noise,
            airport: AirportConfig::default(),
            ingest: IngestSettings::default(),
            reconstruct: ReconstructConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that replace their configured counterparts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub rank: Option<usize>,
    pub t_com: Option<usize>,
    pub obs_noise: Option<f64>,
    pub mode: Option<Mode>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.k {
            self.train.k_grid = vec![k];
        }
        if let Some(r) = o.rank {
            self.train.r_grid = vec![r];
        }
        if o.t_com.is_some() {
            self.reconstruct.t_com = o.t_com;
        }
        if let Some(n) = o.obs_noise {
            self.obs_noise = n;
        }
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        self.airport.reference()?;
        if !(self.obs_noise > 0.0 && self.obs_noise.is_finite()) {
            return bad("obs_noise must be positive");
        }
        if !(self.train.up_factor > 0.0) {
            return bad("up_factor must be positive");
        }
        if !(0.0..=1.0).contains(&self.train.split) {
            return bad("split must lie in [0, 1]");
        }
        if self.train.k_grid.is_empty() || self.train.r_grid.is_empty() {
            return bad("k_grid and r_grid must be non-empty");
        }
        if self.train.k_grid.contains(&0) || self.train.r_grid.contains(&0) {
            return bad("cluster counts and ranks must be positive");
        }
        if self.reconstruct.t_com.is_some_and(|t| t < 5) {
            return bad("t_com must be at least 5");
        }
        Ok(())
    }

    pub fn selection(&self) -> SelectionSettings {
        SelectionSettings {
            k_grid: self.train.k_grid.clone(),
            r_grid: self.train.r_grid.clone(),
            objective: self.train.objective,
            kmeans: self.train.kmeans.clone(),
            seed: self.seed,
            prefix_len: self.train.prefix_len,
            obs_noise: self.obs_noise,
            generation: GenerationSettings {
                seed: self.seed,
                ..self.train.generation.clone()
            },
        }
    }

    pub fn reconstruct_settings(&self) -> ReconstructSettings {
        let mut s = self.reconstruct.settings.clone();
        s.search.seed = self.seed;
        s
    }
}
