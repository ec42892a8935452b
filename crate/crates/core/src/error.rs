use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid classifier spec: {0}")]
    Spec(String),

    #[error("degenerate rectangle: side length {side} is below 2*deltahat = {min}")]
    DegenerateRectangle { side: f64, min: f64 },

    #[error("approximation certificate failed: sup error {sup_error} exceeds {allowed}")]
    Certificate { sup_error: f64, allowed: f64 },

    #[error("fit needs at least {needed} usable points, got {got}")]
    Fit { needed: usize, got: usize },

    #[error("size error: requested {requested} points from a pool of {available}")]
    Size { requested: usize, available: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
