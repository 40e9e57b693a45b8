//! Declarative run configuration. One TOML file covers stream windowing,
//! schema binding, model hyperparameters, and output handling, so a committed
//! config file reproduces a run exactly (together with the seed).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Top-level configuration, mirrored one-to-one by the TOML layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub stream: StreamConfig,
    pub schema: SchemaConfig,
    pub model: ModelConfig,
    pub io: IoConfig,
}

/// Windowing of event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    /// Window duration in seconds.
    pub tau: f64,
    /// Tick granularity inside a window, in seconds.
    pub tick_seconds: f64,
    /// Epoch of window 0. When absent, the first event's timestamp is used.
    pub start_time: Option<f64>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { tau: 60.0, tick_seconds: 1.0, start_time: None }
    }
}

/// Column bindings and parsing rules for the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemaConfig {
    /// Name of the timestamp column.
    pub timestamp: String,
    /// Either "epoch" (numeric seconds) or a chrono format string such as
    /// "%d/%m/%Y %H:%M:%S".
    pub timestamp_format: String,
    /// Columns treated as categorical attributes, in order.
    pub categorical: Vec<String>,
    /// Columns treated as continuous attributes, in order.
    pub continuous: Vec<String>,
    /// Optional label column used to derive per-window attack counts.
    pub label: Option<String>,
    /// Label value marking a benign row; anything else counts as attack.
    pub benign_label: String,
    /// Field delimiter (single character).
    pub delimiter: String,
    /// Continuous values at or below zero are clamped to this.
    pub clamp_epsilon: f64,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            timestamp_format: "epoch".into(),
            categorical: Vec::new(),
            continuous: Vec::new(),
            label: None,
            benign_label: "BENIGN".into(),
            delimiter: ",".into(),
            clamp_epsilon: 1e-6,
        }
    }
}

/// Decomposition and selection hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of latent components per regime.
    pub k: usize,
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    /// Prior strength carried between windows, as a fraction of the previous
    /// window's event count.
    pub beta: f64,
    /// Minimum pseudo-count per prior cell.
    pub prior_floor: f64,
    /// Gibbs sweeps discarded before estimates are read.
    pub burn_in: u32,
    /// Gibbs sweeps averaged into the posterior estimate.
    pub samples: u32,
    /// Bits charged per free real parameter in model costs.
    pub param_bits: f64,
    /// Divide anomaly scores by the window's event count.
    pub per_event_normalization: bool,
    /// Replace a reused regime's matrices with the window posterior.
    pub refresh_regimes: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 8,
            seed: 0,
            beta: 0.1,
            prior_floor: 1e-3,
            burn_in: 10,
            samples: 5,
            param_bits: 32.0,
            per_event_normalization: true,
            refresh_regimes: true,
        }
    }
}

/// Output handling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Write the snapshot every this many windows (0 = only at the end).
    pub snapshot_every: u64,
    /// Explicit path for the per-window label file; defaults to a sibling of
    /// the output file when a label column is bound.
    pub labels_output: Option<String>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stream;
        if !(s.tau.is_finite() && s.tau > 0.0) {
            return Err(Error::Config(format!("stream.tau must be positive, got {}", s.tau)));
        }
        if !(s.tick_seconds.is_finite() && s.tick_seconds > 0.0) {
            return Err(Error::Config(format!(
                "stream.tick_seconds must be positive, got {}",
                s.tick_seconds
            )));
        }
        let sc = &self.schema;
        if sc.timestamp.is_empty() {
            return Err(Error::Config("schema.timestamp is required".into()));
        }
        if sc.categorical.is_empty() && sc.continuous.is_empty() {
            return Err(Error::Config("schema needs at least one attribute column".into()));
        }
        let mut names: Vec<&str> = sc
            .categorical
            .iter()
            .chain(sc.continuous.iter())
            .map(String::as_str)
            .collect();
        names.sort_unstable();
        for pair in names.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::Config(format!(
                    "schema: column \"{}\" is bound twice",
                    pair[0]
                )));
            }
        }
        if sc.delimiter.len() != 1 {
            return Err(Error::Config(format!(
                "schema.delimiter must be a single byte, got {:?}",
                sc.delimiter
            )));
        }
        if !(sc.clamp_epsilon.is_finite() && sc.clamp_epsilon > 0.0) {
            return Err(Error::Config("schema.clamp_epsilon must be positive".into()));
        }
        let m = &self.model;
        if m.k == 0 {
            return Err(Error::Config("model.k must be at least 1".into()));
        }
        if m.samples == 0 {
            return Err(Error::Config("model.samples must be at least 1".into()));
        }
        if !(m.beta.is_finite() && m.beta > 0.0) {
            return Err(Error::Config("model.beta must be positive".into()));
        }
        if !(m.prior_floor.is_finite() && m.prior_floor > 0.0) {
            return Err(Error::Config("model.prior_floor must be positive".into()));
        }
        if !(m.param_bits.is_finite() && m.param_bits > 0.0) {
            return Err(Error::Config("model.param_bits must be positive".into()));
        }
        Ok(())
    }

    /// Ticks per window implied by the stream section.
    pub fn n_ticks(&self) -> usize {
        ((self.stream.tau / self.stream.tick_seconds).ceil() as usize).max(1)
    }
}
