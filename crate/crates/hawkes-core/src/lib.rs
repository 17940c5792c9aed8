//! Temporal point process toolkit built around the edge-corrected
//! exponential-kernel Hawkes process.
//!
//! The crate covers the full workflow: closed-form intensity and likelihood
//! ([`hawkes`]), simulation by thinning and by the cluster representation
//! ([`simulate`]), pooled / unpooled / partially pooled Bayesian model
//! specifications with analytic gradients ([`model`]), a No-U-Turn sampler
//! with convergence diagnostics ([`nuts`], [`diagnostics`]), residual
//! goodness-of-fit tests and PSIS-LOO model comparison ([`gof`], [`loo`]),
//! power-scaling sensitivity analysis ([`sensitivity`]), and posterior
//! branching-structure decomposition ([`branching`]).

pub mod branching;
pub mod data;
pub mod diagnostics;
pub mod draws;
pub mod fit;
pub mod gof;
pub mod hawkes;
pub mod io;
pub mod loo;
pub mod model;
pub mod nuts;
pub mod pipeline;
pub mod plots;
pub mod report;
pub mod sensitivity;
pub mod simulate;
pub mod stats;

pub use data::{Cohort, Person, Session};
pub use draws::PosteriorDraws;
pub use hawkes::{HawkesParams, RtctResiduals};
pub use model::{ModelKind, ModelSpec};
pub use nuts::SamplerConfig;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ingestion error at row {row}: {msg}")]
    Ingest { row: usize, msg: String },
    #[error("sampler error: {0}")]
    Sampler(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("simulation exceeded the event cap of {0} events")]
    CappedSimulation(usize),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
