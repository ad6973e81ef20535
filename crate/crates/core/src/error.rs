use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("realization {realization}, device {device}: {reason}")]
    DegenerateRealization {
        realization: usize,
        device: usize,
        reason: &'static str,
    },

    #[error("{0}")]
    Simulation(String),

    #[error("max-min bisection did not converge after {steps} steps (gap {gap:e})")]
    BisectionNotConverged { steps: usize, gap: f64 },

    #[error("deployment {index} (K={k}, f={f}): {source}")]
    Deployment {
        index: usize,
        k: usize,
        f: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
