use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("basis order {order} exceeds the supported maximum {max}")]
    BasisOrder { order: usize, max: usize },

    #[error("random input required for stochastic flux")]
    MissingOmega,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite residual {value} at cell {cell:?}, basis {basis}, step {step}")]
    NonFiniteResidual {
        cell: Vec<usize>,
        basis: usize,
        step: usize,
        value: f64,
    },

    #[error("non-finite loss at iteration {iteration}: {value}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error("cell index {index} is more than one cell outside [0, {cells})")]
    IndexOutOfRange { index: i64, cells: usize },

    #[error("CFL condition violated: lambda * max speed = {0} > 1")]
    Cfl(f64),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
