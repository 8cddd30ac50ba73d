use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("singular task inertia")]
    SingularTaskInertia,
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("ill-conditioned normal equations (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("constraint invisible to objective")]
    InvisibleConstraint,
    #[error("degenerate path")]
    DegeneratePath,
    #[error("qp infeasible")]
    Infeasible,
    #[error("qp iteration limit ({0}) exceeded")]
    IterationLimit(usize),
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("non-finite state at t = {t:.4} s")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
