//! `tamodel`: ingest radar reports, train trajectory mixtures, and sample,
//! predict or evaluate with a trained model.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use terminal_airspace::config::{Overrides, PipelineConfig};
use terminal_airspace::eval::Objective;
use terminal_airspace::ingest::Mode;
use terminal_airspace::pipeline;

#[derive(Parser)]
#[command(name = "tamodel", version, about = "Trajectory mixture models for terminal airspace")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of clusters (replaces the configured grid).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Deviation rank (replaces the configured grid).
    #[arg(long, global = true)]
    rank: Option<usize>,
    /// Common trajectory length in seconds.
    #[arg(long, global = true)]
    tcom: Option<usize>,
    /// Observation noise standard deviation.
    #[arg(long, global = true, value_name = "METERS")]
    obs_noise: Option<f64>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a measurement file into canonical landing and takeoff tracks.
    Ingest {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the counts and diagnostics as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruct tracks of one mode and fit a mixture model.
    Train {
        tracks: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Held-out reconstructions, model frame.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Grid score table.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw trajectories from a model.
    Sample {
        model: PathBuf,
        #[arg(short = 'n', long)]
        count: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Complete partially observed flights given as measurement reports.
    Predict {
        model: PathBuf,
        prefix: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-target answers as JSON; standard output when omitted.
        #[arg(long)]
        answers: Option<PathBuf>,
    },
    /// Score a model on held-out trajectories.
    Evaluate {
        model: PathBuf,
        heldout: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        objective: Option<Objective>,
    },
    /// Write a synthetic measurement file with known ground truth.
    Synth {
        /// Flights per mode.
        #[arg(short = 'n', long, default_value_t = 200)]
        flights: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Level overflights per flight of each mode.
        #[arg(long, default_value_t = 0.0)]
        overflights: f64,
        /// Also write the true models here.
        #[arg(long)]
        truth_dir: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: g.seed,
        k: g.k,
        rank: g.rank,
        t_com: g.tcom,
        obs_noise: g.obs_noise,
        mode: g.mode,
    })?;
    Ok(cfg)
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Ingest { input, output, report } => {
            let r = pipeline::cmd_ingest(&input, &output, &cfg).with_context(|| format!("ingesting {}", input.display()))?;
            for m in &r.malformed {
                log::warn!("{}: {m}", input.display());
            }
            eprintln!(
                "{} reports: {} landings, {} takeoffs, {} discarded, {} outside the airspace, {} malformed lines",
                r.records,
                r.landings,
                r.takeoffs,
                r.discarded,
                r.outside_airspace,
                r.malformed.len()
            );
            if let Some(p) = report {
                write_json(&p, serde_json::to_value(&r)?)?;
            }
        }
        Command::Train {
            tracks,
            output,
            heldout,
            scores,
            report,
        } => {
            let outputs = pipeline::TrainOutputs {
                model: Some(&output),
                heldout: heldout.as_deref(),
                scores: scores.as_deref(),
            };
            let out = pipeline::cmd_train(&tracks, &outputs, &cfg)?;
            let r = &out.report;
            eprintln!(
                "{} model: T_com = {}, K = {}, r = {}, weights {:?}, k-means objective {}",
                r.mode, r.t_com, r.k, r.r, r.weights, r.kmeans_objective
            );
            if let Some(p) = report {
                write_json(&p, serde_json::to_value(r)?)?;
            }
        }
        Command::Sample { model, count, output } => {
            let n = pipeline::cmd_sample(&model, count, cfg.seed, &output)?;
            eprintln!("wrote {n} trajectories to {}", output.display());
        }
        Command::Predict {
            model,
            prefix,
            output,
            answers,
        } => {
            let a = pipeline::cmd_predict(&model, &prefix, &output, &cfg)?;
            match answers {
                Some(p) => write_json(&p, serde_json::to_value(&a)?)?,
                None => println!("{}", serde_json::to_string_pretty(&a)?),
            }
        }
        Command::Evaluate {
            model,
            heldout,
            output,
            objective,
        } => {
            if let Some(o) = objective {
                cfg.train.objective = o;
            }
            let row = pipeline::cmd_evaluate(&model, &heldout, &output, &cfg)?;
            let score = json!({ "objective": cfg.train.objective, "score": row.score(cfg.train.objective) });
            eprintln!("{score}");
        }
        Command::Synth {
            flights,
            output,
            overflights,
            truth_dir,
        } => {
            let s = pipeline::cmd_synth(flights, overflights, cfg.seed, &output, truth_dir.as_deref(), &cfg)?;
            eprintln!("wrote {} reports from {} flights", s.stream.reports.len(), s.flights().len());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
