//! Delimited log parsing and window assembly.
//!
//! Rows are bound to a declared schema by header name, categorical strings
//! are interned into growing per-attribute dictionaries, continuous values
//! are clamped to stay strictly positive, and accepted events are cut into
//! consecutive half-open windows of fixed duration. Re-parsing the same file
//! always yields the same events, dictionaries, and windows.

use std::collections::HashMap;

use chrono::NaiveDateTime;

use crate::config::SchemaConfig;
use crate::types::{AttributeSchema, Event, Window};
use crate::{Error, Result};

/// Growing string-to-index maps, one per categorical attribute. The mapping
/// is a bijection between the strings seen so far and `0..U`.
#[derive(Debug, Clone, Default)]
pub struct Dictionaries {
    names: Vec<Vec<String>>,
    indices: Vec<HashMap<String, u32>>,
}

impl Dictionaries {
    pub fn new(n_attributes: usize) -> Self {
        Self {
            names: vec![Vec::new(); n_attributes],
            indices: vec![HashMap::new(); n_attributes],
        }
    }

    /// Index of `value` in attribute `m1`'s dictionary, inserting it first if
    /// it was never seen.
    pub fn intern(&mut self, m1: usize, value: &str) -> u32 {
        if let Some(&idx) = self.indices[m1].get(value) {
            return idx;
        }
        let idx = self.names[m1].len() as u32;
        self.names[m1].push(value.to_string());
        self.indices[m1].insert(value.to_string(), idx);
        idx
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.names.iter().map(|n| n.len()).collect()
    }

    pub fn names(&self, m1: usize) -> &[String] {
        &self.names[m1]
    }

    /// The full mapping as ordered name lists, for serialization.
    pub fn to_lists(&self) -> Vec<Vec<String>> {
        self.names.clone()
    }

    pub fn from_lists(lists: Vec<Vec<String>>) -> Result<Self> {
        let mut indices = Vec::with_capacity(lists.len());
        for (m1, names) in lists.iter().enumerate() {
            let mut map = HashMap::with_capacity(names.len());
            for (i, name) in names.iter().enumerate() {
                if map.insert(name.clone(), i as u32).is_some() {
                    return Err(Error::Snapshot(format!(
                        "dictionary {m1} lists '{name}' twice"
                    )));
                }
            }
            indices.push(map);
        }
        Ok(Self { names: lists, indices })
    }
}

/// Counters describing how the input was consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParseStats {
    /// Data rows read (header excluded).
    pub rows: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Continuous values raised to the clamp epsilon.
    pub clamped_values: u64,
    /// Events discarded for arriving before an already-closed window.
    pub out_of_order: u64,
}

/// Builds the attribute schema declared by a config, with empty dictionaries.
pub fn schema_from_config(cfg: &SchemaConfig) -> Result<AttributeSchema> {
    AttributeSchema::new(cfg.categorical.clone(), cfg.continuous.clone())
}

/// Column positions of every bound field in the input header.
#[derive(Debug, Clone)]
pub struct ColumnBindings {
    pub timestamp: usize,
    pub categorical: Vec<usize>,
    pub continuous: Vec<usize>,
    pub label: Option<usize>,
}

fn find_column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Config(format!("column '{name}' not found in the input header")))
}

/// Resolves every configured column name against the header; unknown columns
/// in the input are ignored.
pub fn resolve_bindings(header: &csv::StringRecord, cfg: &SchemaConfig) -> Result<ColumnBindings> {
    Ok(ColumnBindings {
        timestamp: find_column(header, &cfg.timestamp)?,
        categorical: cfg
            .categorical
            .iter()
            .map(|n| find_column(header, n))
            .collect::<Result<_>>()?,
        continuous: cfg
            .continuous
            .iter()
            .map(|n| find_column(header, n))
            .collect::<Result<_>>()?,
        label: cfg.label.as_deref().map(|n| find_column(header, n)).transpose()?,
    })
}

#[derive(Debug, Clone)]
enum TimestampKind {
    /// Numeric epoch seconds.
    Epoch,
    /// A chrono format string, interpreted as a naive UTC datetime.
    Format(String),
}

/// One accepted row: the event plus its attack flag (false when no label
/// column is bound).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub event: Event,
    pub is_attack: bool,
}

/// Row-to-event converter; owns the dictionaries and rejection counters.
#[derive(Debug)]
pub struct RowParser {
    bindings: ColumnBindings,
    kind: TimestampKind,
    clamp_epsilon: f64,
    benign_label: String,
    pub dictionaries: Dictionaries,
    pub stats: ParseStats,
}

impl RowParser {
    pub fn new(bindings: ColumnBindings, cfg: &SchemaConfig) -> Self {
        let kind = if cfg.timestamp_format == "epoch" {
            TimestampKind::Epoch
        } else {
            TimestampKind::Format(cfg.timestamp_format.clone())
        };
        let n_cat = bindings.categorical.len();
        Self {
            bindings,
            kind,
            clamp_epsilon: cfg.clamp_epsilon,
            benign_label: cfg.benign_label.clone(),
            dictionaries: Dictionaries::new(n_cat),
            stats: ParseStats::default(),
        }
    }

    /// Replaces the dictionaries, e.g. when resuming from a snapshot.
    pub fn with_dictionaries(mut self, dicts: Dictionaries) -> Result<Self> {
        if dicts.names.len() != self.bindings.categorical.len() {
            return Err(Error::Snapshot(format!(
                "{} dictionaries for {} categorical attributes",
                dicts.names.len(),
                self.bindings.categorical.len()
            )));
        }
        self.dictionaries = dicts;
        Ok(self)
    }

    fn parse_timestamp(&self, raw: &str) -> Option<f64> {
        match &self.kind {
            TimestampKind::Epoch => raw.trim().parse::<f64>().ok().filter(|t| t.is_finite()),
            TimestampKind::Format(fmt) => {
                let dt = NaiveDateTime::parse_from_str(raw.trim(), fmt).ok()?;
                Some(dt.and_utc().timestamp_micros() as f64 / 1e6)
            }
        }
    }

    /// Converts one data row. Returns None (and counts a rejection) when the
    /// timestamp or any continuous value fails to parse.
    pub fn parse(&mut self, record: &csv::StringRecord) -> Option<ParsedRow> {
        self.stats.rows += 1;
        let reject = |stats: &mut ParseStats| {
            stats.rejected += 1;
            None
        };
        let Some(raw_ts) = record.get(self.bindings.timestamp) else {
            return reject(&mut self.stats);
        };
        let Some(time) = self.parse_timestamp(raw_ts) else {
            return reject(&mut self.stats);
        };
        let mut cont_values = Vec::with_capacity(self.bindings.continuous.len());
        let mut clamped = 0u64;
        for &col in &self.bindings.continuous {
            let Some(raw) = record.get(col) else {
                return reject(&mut self.stats);
            };
            let Ok(x) = raw.trim().parse::<f64>() else {
                return reject(&mut self.stats);
            };
            if !x.is_finite() {
                return reject(&mut self.stats);
            }
            if x <= 0.0 {
                clamped += 1;
                cont_values.push(self.clamp_epsilon);
            } else {
                cont_values.push(x);
            }
        }
        let mut cat_values = Vec::with_capacity(self.bindings.categorical.len());
        for (m1, &col) in self.bindings.categorical.iter().enumerate() {
            let Some(raw) = record.get(col) else {
                return reject(&mut self.stats);
            };
            cat_values.push(self.dictionaries.intern(m1, raw.trim()));
        }
        let is_attack = match self.bindings.label {
            Some(col) => match record.get(col) {
                Some(raw) => raw.trim() != self.benign_label,
                None => return reject(&mut self.stats),
            },
            None => false,
        };
        self.stats.accepted += 1;
        self.stats.clamped_values += clamped;
        Some(ParsedRow { event: Event { time, cat_values, cont_values }, is_attack })
    }
}

/// Per-window label tallies, aligned with the emitted windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLabel {
    pub window_index: u64,
    pub events: u64,
    pub attack_events: u64,
}

/// Cuts a nondecreasing event stream into consecutive half-open windows of
/// duration tau. Windows with no events are emitted so indices stay aligned
/// with elapsed time.
///
/// Window boundaries are computed as origin + index * tau rather than by
/// accumulation, so the grid stays exact for arbitrarily long streams.
#[derive(Debug)]
pub struct Windower {
    tau: f64,
    tick_seconds: f64,
    origin: Option<f64>,
    next_index: u64,
    events: Vec<Event>,
    attack_events: u64,
    pub out_of_order: u64,
}

impl Windower {
    /// `start`: explicit stream origin; None starts at the first event's time.
    pub fn new(tau: f64, tick_seconds: f64, start: Option<f64>) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Config(format!("window duration must be positive, got {tau}")));
        }
        if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
            return Err(Error::Config(format!(
                "tick duration must be positive, got {tick_seconds}"
            )));
        }
        if let Some(s) = start {
            if !s.is_finite() {
                return Err(Error::Config("stream start time must be finite".into()));
            }
        }
        Ok(Self {
            tau,
            tick_seconds,
            origin: start,
            next_index: 0,
            events: Vec::new(),
            attack_events: 0,
            out_of_order: 0,
        })
    }

    fn start_of(&self, index: u64) -> f64 {
        self.origin.expect("origin is set") + index as f64 * self.tau
    }

    fn close_current(&mut self) -> Result<(Window, WindowLabel)> {
        let start = self.start_of(self.next_index);
        let events = std::mem::take(&mut self.events);
        let label = WindowLabel {
            window_index: self.next_index,
            events: events.len() as u64,
            attack_events: self.attack_events,
        };
        let window =
            Window::new(self.next_index, start, self.tau, self.tick_seconds, events)?;
        self.next_index += 1;
        self.attack_events = 0;
        Ok((window, label))
    }

    /// Feeds one event; returns every window that closed before it. An event
    /// earlier than the open window is dropped and counted.
    pub fn push(&mut self, event: Event, is_attack: bool) -> Result<Vec<(Window, WindowLabel)>> {
        if !event.time.is_finite() {
            self.out_of_order += 1;
            return Ok(Vec::new());
        }
        if self.origin.is_none() {
            self.origin = Some(event.time);
        }
        let mut closed = Vec::new();
        // The close predicate reuses exactly the start + tau value the window
        // itself validates against, so no event can straddle the boundary.
        while event.time >= self.start_of(self.next_index) + self.tau {
            closed.push(self.close_current()?);
        }
        if event.time < self.start_of(self.next_index) {
            self.out_of_order += 1;
            return Ok(closed);
        }
        self.events.push(event);
        if is_attack {
            self.attack_events += 1;
        }
        Ok(closed)
    }

    /// Closes the trailing window. None when no event was ever accepted and
    /// the trailing window is empty.
    pub fn finish(&mut self) -> Result<Option<(Window, WindowLabel)>> {
        if self.origin.is_none() || self.events.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.close_current()?))
    }

    /// Epoch of window 0, once fixed by configuration or the first event.
    pub fn origin(&self) -> Option<f64> {
        self.origin
    }
}

///// Convenience wrapper: windows an in-memory event sequence in one call.
pub fn window_stream(
    events: impl IntoIterator<Item = (Event, bool)>,
    tau: f64,
    tick_seconds: f64,
    start: Option<f64>,
) -> Result<(Vec<(Window, WindowLabel)>, u64)> {
    let mut windower = Windower::new(tau, tick_seconds, start)?;
    let mut out = Vec::new();
    for (event, is_attack) in events {
        out.extend(windower.push(event, is_attack)?);
    }
    if let Some(last) = windower.finish()? {
        out.push(last);
    }
    Ok((out, windower.out_of_order))
}
