//! Streaming decomposition of multi-attribute event streams.
//!
//! Each non-overlapping window of the stream is decomposed into K latent
//! components by collapsed Gibbs sampling: one multinomial distribution per
//! categorical attribute, one Gamma distribution per continuous attribute, and
//! a per-tick mixing matrix. Fitted windows are organized into regimes, with a
//! minimum-description-length criterion deciding per window whether to keep
//! the active regime, switch back to a stored one, or open a new one. Every
//! window is also scored against the majority regime, which acts as the
//! normal-behavior baseline, so bursts that deviate from it stand out even
//! when they are internally coherent.
//!
//! Module layout:
//! - [`types`]: the shared domain model (schema, events, windows, regimes)
//! - [`ingest`]: delimited-log parsing, dictionaries, windowing
//! - [`mixture`]: per-window component fitting and likelihoods
//! - [`mdl`]: code lengths, model costs, regime selection
//! - [`engine`]: the streaming loop and anomaly scoring
//! - [`synth`]: forward sampler used as a test oracle and benchmark source
//! - [`eval`]: detection and segmentation metrics
//! - [`pipeline`]: file-to-file orchestration used by the CLI
//! - [`config`], [`math`]: declarative configuration and numeric helpers

pub mod config;
pub mod engine;
pub mod eval;
pub mod ingest;
pub mod math;
pub mod mdl;
pub mod mixture;
pub mod pipeline;
pub mod synth;
pub mod types;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("window {0} has no events")]
    EmptyWindow(u64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
