//! Domain model shared by every other module: schemas, events, windows,
//! component matrices, regimes, and the stream summary. Inference logic lives
//! elsewhere; these types carry data and enforce structural invariants.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Tolerance for checking that a probability row sums to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Returns true when `row` is a valid probability distribution: non-empty,
/// entrywise finite and non-negative, summing to 1 within [`ROW_SUM_TOLERANCE`].
pub fn is_row_stochastic(row: &[f64]) -> bool {
    if row.is_empty() {
        return false;
    }
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return false;
    }
    (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE
}

/// Attribute layout of a stream: which attributes are categorical and which
/// are continuous, plus the current dictionary size of every categorical
/// attribute. Dictionary sizes only grow as new units appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub categorical_names: Vec<String>,
    pub continuous_names: Vec<String>,
    /// Number of distinct units seen so far, one entry per categorical attribute.
    pub vocab_sizes: Vec<usize>,
}

impl AttributeSchema {
    /// Builds a schema with empty dictionaries. At least one attribute of
    /// either kind is required.
    pub fn new(categorical_names: Vec<String>, continuous_names: Vec<String>) -> Result<Self> {
        let vocab_sizes = vec![0; categorical_names.len()];
        let schema = Self { categorical_names, continuous_names, vocab_sizes };
        schema.check()?;
        Ok(schema)
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical_names.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous_names.len()
    }

    fn check(&self) -> Result<()> {
        if self.categorical_names.is_empty() && self.continuous_names.is_empty() {
            return Err(Error::InvalidParameter(
                "schema needs at least one attribute".into(),
            ));
        }
        if self.vocab_sizes.len() != self.categorical_names.len() {
            return Err(Error::InvalidParameter(format!(
                "schema has {} categorical names but {} vocab sizes",
                self.categorical_names.len(),
                self.vocab_sizes.len()
            )));
        }
        Ok(())
    }
}

/// One time-stamped record of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds since the stream epoch.
    pub time: f64,
    /// One dictionary index per categorical attribute.
    pub cat_values: Vec<u32>,
    /// One strictly positive value per continuous attribute.
    pub cont_values: Vec<f64>,
}

/// Shape and rate of one Gamma component. Rate is the inverse scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// Natural log of the Gamma density at `x` (x must be positive).
    pub fn log_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// All events of one fixed-duration slice of the stream, with time inside the
/// window discretized into unit ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub window_index: u64,
    pub start_time: f64,
    pub duration: f64,
    pub tick_seconds: f64,
    pub events: Vec<Event>,
    ticks: Vec<u32>,
    per_tick_counts: Vec<u64>,
}

impl Window {
    /// Builds a window, deriving each event's tick and the per-tick counts.
    /// Every event must satisfy start_time <= time < start_time + duration.
    pub fn new(
        window_index: u64,
        start_time: f64,
        duration: f64,
        tick_seconds: f64,
        events: Vec<Event>,
    ) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "window duration must be positive, got {duration}"
            )));
        }
        if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tick length must be positive, got {tick_seconds}"
            )));
        }
        let n_ticks = ((duration / tick_seconds).ceil() as usize).max(1);
        let mut ticks = Vec::with_capacity(events.len());
        let mut per_tick_counts = vec![0u64; n_ticks];
        for (i, ev) in events.iter().enumerate() {
            if !(ev.time >= start_time && ev.time < start_time + duration) {
                return Err(Error::InvalidParameter(format!(
                    "event {} at t={} falls outside window {} [{}, {})",
                    i,
                    ev.time,
                    window_index,
                    start_time,
                    start_time + duration
                )));
            }
            let tick = (((ev.time - start_time) / tick_seconds) as usize).min(n_ticks - 1);
            ticks.push(tick as u32);
            per_tick_counts[tick] += 1;
        }
        Ok(Self { window_index, start_time, duration, tick_seconds, events, ticks, per_tick_counts })
    }

    pub fn empty(window_index: u64, start_time: f64, duration: f64, tick_seconds: f64) -> Self {
        Self::new(window_index, start_time, duration, tick_seconds, Vec::new())
            .expect("empty window construction cannot fail on valid spans")
    }

    pub fn n_ticks(&self) -> usize {
        self.per_tick_counts.len()
    }

    /// Tick index of each event, parallel to `events`.
    pub fn ticks(&self) -> &[u32] {
        &self.ticks
    }

    /// Event count per tick; sums to `events.len()`.
    pub fn per_tick_counts(&self) -> &[u64] {
        &self.per_tick_counts
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Fitted parameters of one regime: per-component multinomial rows for every
/// categorical attribute, Gamma parameters for every continuous attribute, and
/// the per-tick mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMatrices {
    /// Number of latent components.
    pub k: usize,
    /// Indexed `[categorical attribute][component][unit]`; rows are stochastic.
    pub cat_dists: Vec<Vec<Vec<f64>>>,
    /// Indexed `[continuous attribute][component]`.
    pub gamma_params: Vec<Vec<GammaParams>>,
    /// Indexed `[tick][component]`; rows are stochastic.
    pub time_mix: Vec<Vec<f64>>,
}

impl ComponentMatrices {
    pub fn n_ticks(&self) -> usize {
        self.time_mix.len()
    }

    /// Current dictionary size of categorical attribute `m1`.
    pub fn vocab_size(&self, m1: usize) -> usize {
        self.cat_dists[m1].first().map_or(0, Vec::len)
    }

    /// Checks dimensional consistency, row-stochasticity, and positivity of
    /// the Gamma parameters.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("component count is zero".into()));
        }
        if self.time_mix.is_empty() {
            return Err(Error::InvalidParameter("time mixing matrix has no ticks".into()));
        }
        for (m1, rows) in self.cat_dists.iter().enumerate() {
            if rows.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "categorical attribute {m1} has {} rows, expected {}",
                    rows.len(),
                    self.k
                )));
            }
            let width = rows[0].len();
            for (k, row) in rows.iter().enumerate() {
                if row.len() != width {
                    return Err(Error::InvalidParameter(format!(
                        "categorical attribute {m1} row {k} has ragged width"
                    )));
                }
                if !is_row_stochastic(row) {
                    return Err(Error::InvalidParameter(format!(
                        "categorical attribute {m1} row {k} is not a distribution"
                    )));
                }
            }
        }
        for (m2, comps) in self.gamma_params.iter().enumerate() {
            if comps.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "continuous attribute {m2} has {} components, expected {}",
                    comps.len(),
                    self.k
                )));
            }
            for (k, g) in comps.iter().enumerate() {
                let ok = g.shape.is_finite() && g.shape > 0.0 && g.rate.is_finite() && g.rate > 0.0;
                if !ok {
                    return Err(Error::InvalidParameter(format!(
                        "gamma parameters for attribute {m2} component {k} must be positive, got ({}, {})",
                        g.shape, g.rate
                    )));
                }
            }
        }
        for (t, row) in self.time_mix.iter().enumerate() {
            if row.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "time mix row {t} has {} entries, expected {}",
                    row.len(),
                    self.k
                )));
            }
            if !is_row_stochastic(row) {
                return Err(Error::InvalidParameter(format!(
                    "time mix row {t} is not a distribution"
                )));
            }
        }
        Ok(())
    }
}

/// Identifier of a stored regime. Ids are assigned in creation order and never
/// reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegimeId(pub u32);

impl std::fmt::Display for RegimeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One stored dynamical pattern plus how many windows it has described so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub id: RegimeId,
    pub matrices: ComponentMatrices,
    /// Cumulative number of windows assigned to this regime.
    pub total_segment_length: u64,
}

/// Start of one segment in the switch history: from window `switch_time`
/// onward the stream was described by `regime_id` (until the next record).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub switch_time: u64,
    pub regime_id: RegimeId,
}

/// Compact summary of everything processed so far: the regime set and the
/// segment-switch history, plus window counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub regimes: Vec<Regime>,
    pub switches: Vec<SwitchRecord>,
    /// Windows handed to the engine so far, empty ones included.
    pub windows_processed: u64,
    /// Windows that carried events and were assigned to a regime.
    pub windows_assigned: u64,
}

impl StreamSummary {
    /// The regime the stream is currently described by (target of the last
    /// switch), if any window has been assigned yet.
    pub fn active_regime(&self) -> Option<&Regime> {
        let last = self.switches.last()?;
        self.regime(last.regime_id)
    }

    pub fn regime(&self, id: RegimeId) -> Option<&Regime> {
        self.regimes.iter().find(|r| r.id == id)
    }

    pub fn regime_mut(&mut self, id: RegimeId) -> Option<&mut Regime> {
        self.regimes.iter_mut().find(|r| r.id == id)
    }

    /// The regime with the greatest cumulative segment length; ties go to the
    /// lowest id. None only while no regime exists.
    pub fn majority_regime(&self) -> Option<&Regime> {
        self.regimes
            .iter()
            .max_by(|a, b| {
                a.total_segment_length
                    .cmp(&b.total_segment_length)
                    // prefer the lower id on equal lengths
                    .then(b.id.cmp(&a.id))
            })
    }

    /// Checks every structural invariant and reports violations as messages.
    /// An empty result means the summary is consistent.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for regime in &self.regimes {
            if !seen.insert(regime.id) {
                problems.push(format!("duplicate regime id {}", regime.id));
            }
            if regime.total_segment_length == 0 {
                problems.push(format!("regime {} has zero segment length", regime.id));
            }
            if let Err(e) = regime.matrices.validate() {
                problems.push(format!("regime {}: {e}", regime.id));
            }
        }
        for (i, sw) in self.switches.iter().enumerate() {
            if self.regime(sw.regime_id).is_none() {
                problems.push(format!(
                    "switch at window {} references dangling regime id {}",
                    sw.switch_time, sw.regime_id
                ));
            }
            if i > 0 {
                let prev = &self.switches[i - 1];
                if sw.switch_time <= prev.switch_time {
                    problems.push(format!(
                        "switch times not strictly increasing at position {i} ({} after {})",
                        sw.switch_time, prev.switch_time
                    ));
                }
                if sw.regime_id == prev.regime_id {
                    problems.push(format!(
                        "redundant switch at window {} (regime {} repeated)",
                        sw.switch_time, sw.regime_id
                    ));
                }
            }
        }
        if self.regimes.is_empty() != self.switches.is_empty() {
            problems.push("regime set and switch history must be empty together".into());
        }
        let assigned: u64 = self.regimes.iter().map(|r| r.total_segment_length).sum();
        if assigned != self.windows_assigned {
            problems.push(format!(
                "segment lengths sum to {assigned} but {} windows were assigned",
                self.windows_assigned
            ));
        }
        if self.windows_assigned > self.windows_processed {
            problems.push(format!(
                "{} windows assigned exceeds {} processed",
                self.windows_assigned, self.windows_processed
            ));
        }
        problems
    }
}

/// Per-window output record of the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub window_index: u64,
    pub start_time: f64,
    /// None only for empty windows processed before any regime exists.
    pub chosen_regime_id: Option<RegimeId>,
    pub is_new_regime: bool,
    /// Model-cost increase of the chosen option, in bits.
    pub delta_model_cost: f64,
    /// Bits needed to encode the window under the chosen regime.
    pub data_cost: f64,
    /// Bits needed to encode the window under the majority regime, clamped at
    /// zero; per event when normalization is on.
    pub anomaly_score: f64,
}
