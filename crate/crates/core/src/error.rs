use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read measurement stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("track needs at least two measurements, got {0}")]
    TooFewMeasurements(usize),
    #[error("track spans zero seconds")]
    DegenerateTrack,
    #[error("only {0} measurement(s) left after trimming to the runway-closest point")]
    EmptyAfterTrim(usize),
    #[error("cannot canonicalize an unclassified track")]
    Unclassified,
    #[error("track file: {0}")]
    TrackFile(String),
}

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("reconstruction length {0} is too short, need at least 5 samples")]
    TooShort(usize),
    #[error("need at least {needed} distinct measured times, got {got}")]
    InsufficientMeasurements { needed: usize, got: usize },
    #[error("normal equations are singular (pivot {pivot} at row {row})")]
    Singular { row: usize, pivot: f64 },
    #[error("regularization weights must be nonnegative and finite")]
    InvalidLambda,
    #[error("no tracks to take a median over")]
    NoTracks,
    #[error("trajectory file: {0}")]
    TrajectoryFile(String),
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {points} points")]
    TooManyClusters { k: usize, points: usize },
    #[error("number of clusters must be at least 1")]
    ZeroClusters,
    #[error("points have inconsistent dimensions")]
    DimensionMismatch,
    #[error("assignment {assignment} out of range for {k} clusters")]
    BadAssignment { assignment: usize, k: usize },
}

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("rank {rank} exceeds dimension {dim}")]
    RankTooLarge { rank: usize, dim: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cluster index {0} out of range")]
    NoSuchCluster(usize),
    #[error("observation time {time} outside [0, {t_com})")]
    TimeOutOfRange { time: usize, t_com: usize },
    #[error("at least one observation is required")]
    NoObservations,
    #[error("observation noise variance must be positive and finite")]
    BadNoise,
    #[error("latent posterior covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("model has no cluster with positive weight")]
    NoWeight,
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot build a histogram from an empty sample")]
    EmptySample,
    #[error("trajectory needs at least 3 time steps, got {0}")]
    TooShort(usize),
    #[error("histogram needs at least one bin and a positive pseudo-count")]
    BadHistogram,
    #[error("prefix length {m} must be in [1, {t_com})")]
    BadPrefix { m: usize, t_com: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("no grid cell produced a finite score")]
    NoFeasibleCell,
    #[error("split fraction must lie in [0, 1]")]
    BadFraction,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid ground truth: {0}")]
    InvalidSpec(String),
}

/// Crate-level error used by the pipeline orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Pipeline(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
