use thiserror::Error;

/// Errors raised across the sensing, calibration, simulation and policy layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("non-finite wrench component {component} = {value}")]
    NonFiniteWrench { component: usize, value: f64 },

    #[error("invalid stiffness matrix: {0}")]
    InvalidStiffness(String),

    #[error("invalid camera model: {0}")]
    InvalidCamera(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("command exceeds the maximum step: {0}")]
    CommandTooLarge(String),

    #[error("dataset has {rows} rows, at least {required} are required")]
    InsufficientRows { rows: usize, required: usize },

    #[error("signal design matrix is rank deficient (rank {rank} of 6); deficient directions: {directions}")]
    RankDeficient { rank: usize, directions: String },

    #[error("malformed dataset row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("timestamp {t} is not after the previous timestamp {last}")]
    NonMonotoneTimestamp { t: f64, last: f64 },

    #[error("pipeline has no zero reference; call set_reference first")]
    NoReference,

    #[error("pipeline not warmed up: {have} of {need} samples")]
    NotReady { have: usize, need: usize },

    #[error("task {task} cannot run on scene(s) {scenes}")]
    SceneMismatch { task: String, scenes: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
