//! Command-line laboratory around `nullctl-core`: configuration, parallel
//! ensembles, bit-stable CSV/JSON artifacts, SVG plots and the invariant
//! suite behind `verify`.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;
pub mod parallel;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("numerical failure: {0}")]
    Numerical(#[from] nullctl_core::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl LabError {
    /// 1 usage/config/io, 2 numerical failure, 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Numerical(_) => 2,
            LabError::Invariant(_) => 3,
            _ => 1,
        }
    }
}
