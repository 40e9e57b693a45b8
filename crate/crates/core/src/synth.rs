//! Forward sampler of the generative model, for oracle tests and benchmarks.
//!
//! Draws whole windows from explicit component matrices (component per event,
//! then one unit per categorical attribute and one Gamma value per continuous
//! attribute), builds multi-segment scenario streams with optional anomaly
//! windows, and writes them in the same delimited format the parser reads,
//! together with a per-window ground-truth file.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Deserialize;

use crate::math::{derive_seed, name_salt, seed_purpose};
use crate::types::{ComponentMatrices, Event, Window};
use crate::{Error, Result};

/// Smallest value a continuous draw is allowed to take; tiny-shape Gamma
/// samples can underflow to zero, which the model's support excludes.
const MIN_DRAW: f64 = 1e-12;

/// How many events to place in each tick of a sampled window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TickLoad {
    /// Exactly these many events per tick; length must match the tick count.
    PerTick(Vec<u64>),
    /// This many events in total, at times uniform over the whole window.
    TotalUniform(u64),
}

/// A drawn window plus the latent component of every event, in event order.
#[derive(Debug, Clone)]
pub struct SampledWindow {
    pub window: Window,
    pub assignments: Vec<usize>,
}

fn draw_index<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let mut target = rng.random::<f64>();
    for (i, &p) in row.iter().enumerate() {
        target -= p;
        if target < 0.0 {
            return i;
        }
    }
    row.len() - 1
}

/// Draws one window from explicit matrices. Event times are uniform within
/// their tick (or the whole window), events are emitted in time order, and
/// the returned assignments follow that order.
pub fn sample_window<R: Rng>(
    matrices: &ComponentMatrices,
    window_index: u64,
    start_time: f64,
    duration: f64,
    tick_seconds: f64,
    load: &TickLoad,
    rng: &mut R,
) -> Result<SampledWindow> {
    matrices.validate()?;
    if !(duration.is_finite() && duration > 0.0 && tick_seconds.is_finite() && tick_seconds > 0.0)
    {
        return Err(Error::InvalidParameter(
            "window and tick durations must be positive".into(),
        ));
    }
    let n_ticks = (duration / tick_seconds).ceil().max(1.0) as usize;
    if matrices.n_ticks() != n_ticks {
        return Err(Error::InvalidParameter(format!(
            "matrices carry {} ticks but the window spans {n_ticks}",
            matrices.n_ticks()
        )));
    }
    let end = start_time + duration;
    let mut times: Vec<(f64, usize)> = Vec::new();
    match load {
        TickLoad::TotalUniform(n) => {
            for _ in 0..*n {
                let mut t = start_time + rng.random::<f64>() * duration;
                while t >= end {
                    t = f64::from_bits(t.to_bits() - 1);
                }
                let tick =
                    (((t - start_time) / tick_seconds) as usize).min(n_ticks - 1);
                times.push((t, tick));
            }
        }
        TickLoad::PerTick(counts) => {
            if counts.len() != n_ticks {
                return Err(Error::InvalidParameter(format!(
                    "{} per-tick counts for {} ticks",
                    counts.len(),
                    n_ticks
                )));
            }
            for (tick, &count) in counts.iter().enumerate() {
                let lo = start_time + tick as f64 * tick_seconds;
                let hi = (lo + tick_seconds).min(end);
                for _ in 0..count {
                    let mut t = lo + rng.random::<f64>() * (hi - lo);
                    while t >= hi {
                        t = f64::from_bits(t.to_bits() - 1);
                    }
                    times.push((t, tick));
                }
            }
        }
    }
    let m2 = matrices.gamma_params.len();
    let mut events = Vec::with_capacity(times.len());
    let mut assignments = Vec::with_capacity(times.len());
    for &(t, tick) in &times {
        let z = draw_index(&matrices.time_mix[tick], rng);
        let cat_values = matrices
            .cat_dists
            .iter()
            .map(|rows| draw_index(&rows[z], rng) as u32)
            .collect();
        let mut cont_values = Vec::with_capacity(m2);
        for comps in &matrices.gamma_params {
            let g = comps[z];
            let dist = Gamma::new(g.shape, 1.0 / g.rate).map_err(|e| {
                Error::InvalidParameter(format!("invalid gamma parameters: {e}"))
            })?;
            let x: f64 = dist.sample(rng);
            cont_values.push(x.max(MIN_DRAW));
        }
        events.push(Event { time: t, cat_values, cont_values });
        assignments.push(z);
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].time.total_cmp(&events[b].time));
    let events: Vec<Event> = order.iter().map(|&i| events[i].clone()).collect();
    let assignments: Vec<usize> = order.iter().map(|&i| assignments[i]).collect();
    let window = Window::new(window_index, start_time, duration, tick_seconds, events)?;
    Ok(SampledWindow { window, assignments })
}

/// Draws random component matrices: symmetric-Dirichlet categorical and tick
/// rows, Gamma parameters uniform over the given ranges.
#[allow(clippy::too_many_arguments)]
pub fn random_matrices<R: Rng>(
    k: usize,
    vocab_sizes: &[usize],
    m2: usize,
    n_ticks: usize,
    concentration: f64,
    shape_range: (f64, f64),
    rate_range: (f64, f64),
    rng: &mut R,
) -> Result<ComponentMatrices> {
    if k == 0 || n_ticks == 0 {
        return Err(Error::InvalidParameter(
            "component and tick counts must be at least 1".into(),
        ));
    }
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "concentration must be positive, got {concentration}"
        )));
    }
    for (lo, hi) in [shape_range, rate_range] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "parameter range ({lo}, {hi}) is not a positive interval"
            )));
        }
    }
    // A symmetric Dirichlet draw is a normalized vector of Gamma(alpha, 1)
    // draws; clamping keeps rows strictly positive when alpha is small.
    let gamma_alpha = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("invalid concentration: {e}")))?;
    let dirichlet_row = |len: usize, rng: &mut R| -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let mut row: Vec<f64> =
            (0..len).map(|_| gamma_alpha.sample(rng).max(MIN_DRAW)).collect();
        let total: f64 = row.iter().sum();
        for v in &mut row {
            *v /= total;
        }
        row
    };
    let mut cat_dists = Vec::with_capacity(vocab_sizes.len());
    for &u in vocab_sizes {
        if u == 0 {
            return Err(Error::InvalidParameter("empty dictionary in vocab sizes".into()));
        }
        let mut rows = Vec::with_capacity(k);
        for _ in 0..k {
            rows.push(dirichlet_row(u, rng));
        }
        cat_dists.push(rows);
    }
    let mut time_mix = Vec::with_capacity(n_ticks);
    for _ in 0..n_ticks {
        time_mix.push(dirichlet_row(k, rng));
    }
    let uniform_in = |rng: &mut R, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    };
    let mut gamma_params = Vec::with_capacity(m2);
    for _ in 0..m2 {
        let comps = (0..k)
            .map(|_| crate::types::GammaParams {
                shape: uniform_in(rng, shape_range),
                rate: uniform_in(rng, rate_range),
            })
            .collect();
        gamma_params.push(comps);
    }
    let matrices = ComponentMatrices { k, cat_dists, gamma_params, time_mix };
    matrices.validate()?;
    Ok(matrices)
}

fn default_concentration() -> f64 {
    1.0
}
fn default_shape_range() -> [f64; 2] {
    // Right-skewed defaults: shapes at or below 2 put most mass near zero.
    [0.3, 2.0]
}
fn default_rate_range() -> [f64; 2] {
    [0.5, 3.0]
}
fn default_skip_first() -> u64 {
    1
}
fn default_events_per_window() -> u64 {
    500
}
fn default_tau() -> f64 {
    60.0
}
fn default_tick_seconds() -> f64 {
    1.0
}
fn default_k() -> usize {
    2
}

/// One categorical attribute of a scenario.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CatSpec {
    pub name: String,
    pub vocab: usize,
}

/// A run of consecutive windows drawn from one named regime.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub regime: String,
    pub windows: u64,
}

/// Replaces a fraction of windows with draws from a different regime.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub fraction: f64,
    pub regime: String,
    /// Windows at the head of the stream that are never replaced, so the
    /// model sees normal data first.
    #[serde(default = "default_skip_first")]
    pub skip_first: u64,
}

/// Declarative description of a synthetic stream.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
    #[serde(default)]
    pub start_time: f64,
    #[serde(default = "default_events_per_window")]
    pub events_per_window: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub categorical: Vec<CatSpec>,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_shape_range")]
    pub shape_range: [f64; 2],
    #[serde(default = "default_rate_range")]
    pub rate_range: [f64; 2],
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub anomaly: Option<AnomalySpec>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return bad(format!("tick_seconds must be positive, got {}", self.tick_seconds));
        }
        if !self.start_time.is_finite() {
            return bad("start_time must be finite".into());
        }
        if self.events_per_window == 0 {
            return bad("events_per_window must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.categorical.is_empty() && self.continuous.is_empty() {
            return bad("a scenario needs at least one attribute".into());
        }
        for spec in &self.categorical {
            if spec.name.is_empty() || spec.vocab == 0 {
                return bad(format!("categorical attribute '{}' needs a nonzero vocab", spec.name));
            }
        }
        if self.segments.is_empty() {
            return bad("a scenario needs at least one segment".into());
        }
        for seg in &self.segments {
            if seg.regime.is_empty() || seg.windows == 0 {
                return bad("every segment needs a regime name and at least one window".into());
            }
        }
        for [lo, hi] in [self.shape_range, self.rate_range] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("parameter range ({lo}, {hi}) is not a positive interval"));
            }
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return bad("concentration must be positive".into());
        }
        if let Some(a) = &self.anomaly {
            if !(0.0..=1.0).contains(&a.fraction) {
                return bad(format!("anomaly fraction must be in [0, 1], got {}", a.fraction));
            }
            if a.regime.is_empty() {
                return bad("the anomaly regime needs a name".into());
            }
        }
        Ok(())
    }

    pub fn total_windows(&self) -> u64 {
        self.segments.iter().map(|s| s.windows).sum()
    }

    fn n_ticks(&self) -> usize {
        (self.tau / self.tick_seconds).ceil().max(1.0) as usize
    }
}

/// What a generation run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSummary {
    pub windows: u64,
    pub events: u64,
    pub anomalous_windows: u64,
    /// Distinct regime names in first-appearance order; the position is the
    /// regime id written to the truth file.
    pub regime_names: Vec<String>,
}

/// Picks which windows are anomalous: a seeded partial shuffle of all
/// eligible indices, taking round(fraction * total) of them.
fn anomaly_windows(spec: &AnomalySpec, total: u64, master_seed: u64) -> BTreeSet<u64> {
    let mut eligible: Vec<u64> = (spec.skip_first.min(total)..total).collect();
    let want = ((spec.fraction * total as f64).round() as usize).min(eligible.len());
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 0, seed_purpose::SYNTH_ANOMALY, 0));
    let mut chosen = BTreeSet::new();
    for i in 0..want {
        let j = rng.random_range(i..eligible.len());
        eligible.swap(i, j);
        chosen.insert(eligible[i]);
    }
    chosen
}

/// Samples the whole scenario and writes the event and truth files.
/// Deterministic: the same scenario and seed produce byte-identical output.
pub fn generate(
    scenario: &Scenario,
    master_seed: u64,
    events_out: &mut dyn Write,
    truth_out: &mut dyn Write,
) -> Result<GenerationSummary> {
    scenario.validate()?;
    let mut regime_names: Vec<String> = Vec::new();
    let remember = |name: &str, regime_names: &mut Vec<String>| {
        if !regime_names.iter().any(|n| n == name) {
            regime_names.push(name.to_string());
        }
    };
    for seg in &scenario.segments {
        remember(&seg.regime, &mut regime_names);
    }
    if let Some(a) = &scenario.anomaly {
        remember(&a.regime, &mut regime_names);
    }
    let vocab_sizes: Vec<usize> = scenario.categorical.iter().map(|c| c.vocab).collect();
    let n_ticks = scenario.n_ticks();
    let mut matrices = Vec::with_capacity(regime_names.len());
    for (ordinal, name) in regime_names.iter().enumerate() {
        let seed = derive_seed(
            master_seed,
            ordinal as u64,
            seed_purpose::SYNTH_MATRICES,
            name_salt(name),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        matrices.push(random_matrices(
            scenario.k,
            &vocab_sizes,
            scenario.continuous.len(),
            n_ticks,
            scenario.concentration,
            (scenario.shape_range[0], scenario.shape_range[1]),
            (scenario.rate_range[0], scenario.rate_range[1]),
            &mut rng,
        )?);
    }
    let total = scenario.total_windows();
    let anomalous = match &scenario.anomaly {
        Some(a) => anomaly_windows(a, total, master_seed),
        None => BTreeSet::new(),
    };
    let mut header = vec!["timestamp".to_string()];
    header.extend(scenario.categorical.iter().map(|c| c.name.clone()));
    header.extend(scenario.continuous.iter().cloned());
    header.push("label".to_string());
    writeln!(events_out, "{}", header.join(","))?;
    writeln!(truth_out, "window_index,regime_id,is_anomaly")?;
    let mut events_written = 0u64;
    let mut window_index = 0u64;
    for seg in &scenario.segments {
        for _ in 0..seg.windows {
            let is_anomaly = anomalous.contains(&window_index);
            let name = if is_anomaly {
                &scenario.anomaly.as_ref().expect("anomaly set is nonempty").regime
            } else {
                &seg.regime
            };
            let regime_id = regime_names.iter().position(|n| n == name).expect("remembered");
            let seed = derive_seed(
                master_seed,
                window_index,
                seed_purpose::SYNTH_WINDOW,
                name_salt(name),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = scenario.start_time + window_index as f64 * scenario.tau;
            let sampled = sample_window(
                &matrices[regime_id],
                window_index,
                start,
                scenario.tau,
                scenario.tick_seconds,
                &TickLoad::TotalUniform(scenario.events_per_window),
                &mut rng,
            )?;
            let label = if is_anomaly { "ATTACK" } else { "BENIGN" };
            for ev in &sampled.window.events {
                let mut fields = Vec::with_capacity(header.len());
                fields.push(ev.time.to_string());
                for &u in &ev.cat_values {
                    fields.push(format!("v{u}"));
                }
                for &x in &ev.cont_values {
                    fields.push(x.to_string());
                }
                fields.push(label.to_string());
                writeln!(events_out, "{}", fields.join(","))?;
            }
            events_written += sampled.window.events.len() as u64;
            writeln!(truth_out, "{window_index},{regime_id},{}", u8::from(is_anomaly))?;
            window_index += 1;
        }
    }
    Ok(GenerationSummary {
        windows: total,
        events: events_written,
        anomalous_windows: anomalous.len() as u64,
        regime_names,
    })
}

/// Samples the scenario into `events_path` and `truth_path`.
pub fn generate_to_files(
    scenario: &Scenario,
    master_seed: u64,
    events_path: &std::path::Path,
    truth_path: &std::path::Path,
) -> Result<GenerationSummary> {
    let mut events_out = std::io::BufWriter::new(std::fs::File::create(events_path)?);
    let mut truth_out = std::io::BufWriter::new(std::fs::File::create(truth_path)?);
    let summary = generate(scenario, master_seed, &mut events_out, &mut truth_out)?;
    events_out.flush()?;
    truth_out.flush()?;
    Ok(summary)
}
