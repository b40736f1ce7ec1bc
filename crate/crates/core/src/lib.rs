//! Gaussian-mixture models of aircraft trajectories in terminal airspace:
//! radar ingest, trajectory reconstruction, clustering, mixture fitting,
//! sampling, conditional prediction and evaluation.

pub mod cluster;
pub mod config;
pub mod error;
pub mod eval;
pub mod geo;
pub mod gmm;
pub mod ingest;
pub mod pipeline;
pub mod reconstruct;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
