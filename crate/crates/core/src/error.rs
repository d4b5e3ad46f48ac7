use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward called without a forward cache")]
    MissingCache,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dataset contains a single class; both plausible and implausible scenes are required")]
    SingleClassDataset,

    #[error("placement failed after {attempts} attempts: {what}")]
    PlacementFailure { what: String, attempts: usize },

    #[error("the floor element cannot be corrupted")]
    TargetIsFloor,

    #[error("corruption target cannot be resolved: {0}")]
    UnresolvableTarget(String),

    #[error("discriminator is untrained (delta must be positive)")]
    UntrainedDiscriminator,

    #[error("scene has no human body segments")]
    NoHumanSegments,

    #[error("scene has no objects")]
    NoObjects,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error("schema version mismatch in {what}: expected {expected}, found {found}")]
    SchemaVersionMismatch { what: String, expected: u32, found: u32 },

    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse failure in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateCloud(_) => "DegenerateCloud",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::MissingCache => "MissingCache",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::SingleClassDataset => "SingleClassDataset",
            Error::PlacementFailure { .. } => "PlacementFailure",
            Error::TargetIsFloor => "TargetIsFloor",
            Error::UnresolvableTarget(_) => "UnresolvableTarget",
            Error::UntrainedDiscriminator => "UntrainedDiscriminator",
            Error::NoHumanSegments => "NoHumanSegments",
            Error::NoObjects => "NoObjects",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::BadConfig(_) => "BadConfig",
            Error::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            Error::IoFailure { .. } => "IOFailure",
            Error::Parse { .. } => "BadConfig",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
