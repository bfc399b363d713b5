//! Radio map construction from sparse UAV measurements.
//!
//! The crate covers the full active-measurement pipeline on a planar grid:
//!
//! - [`grid`] / [`metrics`]: grid geometry, dB/linear conversion, the sparse
//!   degradation operator and the linear-domain NMSE metric.
//! - [`scene`]: synthetic ground-truth generation (log-distance path loss,
//!   wall attenuation, correlated shadowing) and on-disk datasets.
//! - [`flow`]: a small convolutional velocity field trained with the flow
//!   matching objective, plus the ODE sampler and one-step denoiser.
//! - [`pnp`]: plug-and-play reconstruction that alternates data-consistency
//!   gradient steps with path projection and the flow denoiser.
//! - [`uncertainty`]: generative ensembles and per-cell variance maps.
//! - [`planner`]: weighted candidate selection, uncertainty-aware grid
//!   search, and exact visiting-order optimization.
//! - [`active`]: the measurement loop tying everything together, with
//!   random-sampling and greedy-max-uncertainty baselines.
//!
//! Everything is deterministic given explicit seeds; all randomness flows
//! through seeded ChaCha generators.

pub mod active;
pub mod flow;
pub mod grid;
pub mod metrics;
pub mod planner;
pub mod pnp;
pub mod scene;
pub mod seeds;
pub mod uncertainty;

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("divergence at step {step}: {context}")]
    Divergence { step: usize, context: String },

    #[error("no unsampled cells remain on the grid")]
    GridExhausted,

    #[error("malformed run log: {context}")]
    MalformedLog { context: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
