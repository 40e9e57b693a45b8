//! The streaming update loop: fit, select, apply, score.
//!
//! The engine consumes consecutive windows. Each non-empty window is fitted
//! by Gibbs sampling under priors carried over from the active regime, priced
//! against every stored regime and against registration as a new regime, and
//! folded into the summary according to the cheapest description. The window
//! is then scored in bits against the majority regime of the updated summary,
//! so a window that forces a brand-new regime is judged by how badly the
//! dominant behavior explains it.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::math::{derive_seed, matrices_fingerprint, seed_purpose};
use crate::mdl::{data_cost, select_regime};
use crate::mixture::{
    decompose, initial_priors, posterior_from_state, priors_from_matrices, refit_time_mixture,
    Priors,
};
use crate::types::{
    AttributeSchema, Regime, RegimeId, ScoredWindow, StreamSummary, SwitchRecord, Window,
};
use crate::{Error, Result};

/// Serializable engine state, sufficient to resume a stream bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub summary: StreamSummary,
    pub next_regime_id: u32,
    pub prev_window_events: u64,
    pub vocab_sizes: Vec<usize>,
}

/// Incremental model of one event stream.
#[derive(Debug, Clone)]
pub struct StreamEngine {
    cfg: ModelConfig,
    master_seed: u64,
    schema: AttributeSchema,
    n_ticks: usize,
    summary: StreamSummary,
    next_regime_id: u32,
    /// Event count of the last non-empty window; scales the prior strength.
    prev_window_events: u64,
}

impl StreamEngine {
    /// A fresh engine for a stream whose windows all span `n_ticks` ticks.
    /// The schema's dictionary sizes may start at zero; the engine grows them
    /// as units are observed.
    pub fn new(
        schema: AttributeSchema,
        n_ticks: usize,
        cfg: ModelConfig,
        master_seed: u64,
    ) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::InvalidParameter("component count must be at least 1".into()));
        }
        if n_ticks == 0 {
            return Err(Error::InvalidParameter("tick count must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            master_seed,
            schema,
            n_ticks,
            summary: StreamSummary::default(),
            next_regime_id: 0,
            prev_window_events: 0,
        })
    }

    /// Rebuilds an engine from exported state.
    pub fn from_state(
        schema: AttributeSchema,
        n_ticks: usize,
        cfg: ModelConfig,
        master_seed: u64,
        state: EngineState,
    ) -> Result<Self> {
        let mut engine = Self::new(schema, n_ticks, cfg, master_seed)?;
        if state.vocab_sizes.len() != engine.schema.vocab_sizes.len() {
            return Err(Error::Snapshot(format!(
                "state carries {} dictionaries, schema has {}",
                state.vocab_sizes.len(),
                engine.schema.vocab_sizes.len()
            )));
        }
        let problems = state.summary.validate();
        if !problems.is_empty() {
            return Err(Error::Snapshot(format!("inconsistent summary: {}", problems.join("; "))));
        }
        engine.schema.vocab_sizes = state.vocab_sizes;
        engine.summary = state.summary;
        engine.next_regime_id = state.next_regime_id;
        engine.prev_window_events = state.prev_window_events;
        Ok(engine)
    }

    /// Copies out everything needed to resume this stream elsewhere.
    pub fn export_state(&self) -> EngineState {
        EngineState {
            summary: self.summary.clone(),
            next_regime_id: self.next_regime_id,
            prev_window_events: self.prev_window_events,
            vocab_sizes: self.schema.vocab_sizes.clone(),
        }
    }

    pub fn summary(&self) -> &StreamSummary {
        &self.summary
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.schema.vocab_sizes
    }

    fn grow_vocab(&mut self, window: &Window) {
        for ev in &window.events {
            for (m1, &u) in ev.cat_values.iter().enumerate() {
                let needed = u as usize + 1;
                if self.schema.vocab_sizes[m1] < needed {
                    self.schema.vocab_sizes[m1] = needed;
                }
            }
        }
    }

    fn carry_over_priors(&self) -> Result<Priors> {
        match self.summary.active_regime() {
            Some(active) => {
                let strength = self.cfg.beta * self.prev_window_events as f64;
                if strength <= 0.0 {
                    return Err(Error::InvalidState(
                        "a regime is active but no events were carried over".into(),
                    ));
                }
                priors_from_matrices(
                    &active.matrices,
                    &self.schema.vocab_sizes,
                    self.n_ticks,
                    strength,
                    self.cfg.prior_floor,
                )
            }
            None => initial_priors(&self.schema, self.cfg.k, self.n_ticks),
        }
    }

    /// Consumes the next window and returns its verdict. Windows must arrive
    /// in order: the index has to equal the number of windows processed.
    pub fn process_window(&mut self, window: &Window) -> Result<ScoredWindow> {
        if window.window_index != self.summary.windows_processed {
            return Err(Error::InvalidState(format!(
                "window {} arrived but {} windows were processed so far",
                window.window_index, self.summary.windows_processed
            )));
        }
        if window.n_ticks() != self.n_ticks {
            return Err(Error::InvalidParameter(format!(
                "window spans {} ticks, the stream uses {}",
                window.n_ticks(),
                self.n_ticks
            )));
        }
        if window.is_empty() {
            // Nothing to fit or encode: the description is unchanged and the
            // window is only counted as seen.
            self.summary.windows_processed += 1;
            return Ok(ScoredWindow {
                window_index: window.window_index,
                start_time: window.start_time,
                chosen_regime_id: self.summary.active_regime().map(|r| r.id),
                is_new_regime: false,
                delta_model_cost: 0.0,
                data_cost: 0.0,
                anomaly_score: 0.0,
            });
        }
        self.grow_vocab(window);
        let priors = self.carry_over_priors()?;
        let seed = derive_seed(self.master_seed, window.window_index, seed_purpose::DECOMPOSE, 0);
        let decomposition = decompose(window, &priors, &self.cfg, seed)?;
        let selection = select_regime(
            window,
            &decomposition.matrices,
            &self.summary,
            &self.schema.vocab_sizes,
            &self.cfg,
            self.master_seed,
        )?;
        let active = self.summary.active_regime().map(|r| r.id);
        let (chosen_id, is_new) = match selection.regime_id {
            None => {
                let id = RegimeId(self.next_regime_id);
                self.next_regime_id += 1;
                self.summary.regimes.push(Regime {
                    id,
                    matrices: decomposition.matrices.clone(),
                    total_segment_length: 1,
                });
                self.summary
                    .switches
                    .push(SwitchRecord { switch_time: window.window_index, regime_id: id });
                (id, true)
            }
            Some(id) if active == Some(id) => {
                let regime = self.summary.regime_mut(id).expect("winner is stored");
                regime.total_segment_length += 1;
                if self.cfg.refresh_regimes {
                    // The decomposition ran under this regime's own priors, so
                    // its matrices are the posterior update of the regime.
                    regime.matrices = decomposition.matrices.clone();
                }
                (id, false)
            }
            Some(id) => {
                self.summary
                    .switches
                    .push(SwitchRecord { switch_time: window.window_index, regime_id: id });
                let refresh = if self.cfg.refresh_regimes {
                    let refit = selection.refit.as_ref().expect("stored winner carries a refit");
                    Some(posterior_from_state(&refit.state, &refit.priors)?)
                } else {
                    None
                };
                let regime = self.summary.regime_mut(id).expect("winner is stored");
                regime.total_segment_length += 1;
                if let Some(matrices) = refresh {
                    regime.matrices = matrices;
                }
                (id, false)
            }
        };
        self.summary.windows_processed += 1;
        self.summary.windows_assigned += 1;
        self.prev_window_events = window.events.len() as u64;
        let anomaly_score = self.score_against_majority(window)?;
        Ok(ScoredWindow {
            window_index: window.window_index,
            start_time: window.start_time,
            chosen_regime_id: Some(chosen_id),
            is_new_regime: is_new,
            delta_model_cost: selection.breakdown.delta_model_cost,
            data_cost: selection.breakdown.data_cost,
            anomaly_score,
        })
    }

    /// The regime that has explained the most windows so far.
    pub fn majority_regime(&self) -> Result<&Regime> {
        self.summary
            .majority_regime()
            .ok_or_else(|| Error::InvalidState("no regime has been fitted yet".into()))
    }

    fn score_against_majority(&self, window: &Window) -> Result<f64> {
        let majority = self.majority_regime()?;
        let seed = derive_seed(
            self.master_seed,
            window.window_index,
            seed_purpose::REFIT,
            matrices_fingerprint(&majority.matrices),
        );
        let refit = refit_time_mixture(
            window,
            &majority.matrices,
            &self.schema.vocab_sizes,
            &self.cfg,
            seed,
        )?;
        let bits = data_cost(window, &refit.matrices)?;
        let score = if self.cfg.per_event_normalization {
            bits / window.events.len() as f64
        } else {
            bits
        };
        // Continuous densities above one can push the raw bit count negative.
        Ok(score.max(0.0))
    }

    /// Scores a window against the current majority regime without touching
    /// any state. Empty windows score zero; at least one regime must exist.
    pub fn anomaly_score(&self, window: &Window) -> Result<f64> {
        if window.is_empty() {
            return Ok(0.0);
        }
        if window.n_ticks() != self.n_ticks {
            return Err(Error::InvalidParameter(format!(
                "window spans {} ticks, the stream uses {}",
                window.n_ticks(),
                self.n_ticks
            )));
        }
        self.score_against_majority(window)
    }
}
