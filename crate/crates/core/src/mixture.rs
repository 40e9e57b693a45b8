//! Per-window component fitting by collapsed Gibbs sampling.
//!
//! A window is modeled as a mixture of `k` components. An event at tick `t`
//! picks a component from the tick's mixing weights, then draws one unit per
//! categorical attribute from the component's multinomial row and one value
//! per continuous attribute from its Gamma distribution. Multinomial rows and
//! the mixing weights are collapsed out against pseudo-counts carried over
//! from the previous window, so a sweep only tracks assignment counts. Gamma
//! parameters are re-estimated once per sweep by a penalized
//! maximum-likelihood fixed point in which the prior enters as fictitious
//! observations.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::digamma;

use crate::config::ModelConfig;
use crate::math::{logsumexp, trigamma};
use crate::types::{AttributeSchema, ComponentMatrices, Event, GammaParams, Window};
use crate::{Error, Result};

/// Shapes above this are clamped; they arise when the effective log-variance
/// of a component is zero (all observed values equal).
pub const GAMMA_SHAPE_MAX: f64 = 1e4;

/// Sufficient statistics of Gamma observations: how many, their sum, and the
/// sum of their logs. Also used to express priors as fictitious observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaStats {
    pub count: f64,
    pub sum: f64,
    pub sum_logs: f64,
}

impl GammaStats {
    pub const ZERO: GammaStats = GammaStats { count: 0.0, sum: 0.0, sum_logs: 0.0 };

    fn add(&mut self, x: f64, ln_x: f64) {
        self.count += 1.0;
        self.sum += x;
        self.sum_logs += ln_x;
    }
}

/// Pseudo-counts mirroring the shape of [`ComponentMatrices`]: Dirichlet-style
/// pseudo-counts for every categorical row and every tick row, plus
/// pseudo-statistics for every Gamma component.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub k: usize,
    /// Indexed `[categorical attribute][component][unit]`, all entries positive.
    pub cat: Vec<Vec<Vec<f64>>>,
    /// Indexed `[continuous attribute][component]`.
    pub gamma: Vec<Vec<GammaStats>>,
    /// Indexed `[tick][component]`, all entries positive.
    pub time: Vec<Vec<f64>>,
    cat_row_sums: Vec<Vec<f64>>,
}

impl Priors {
    /// Assembles priors from raw pseudo-counts, validating positivity and
    /// caching per-row totals.
    pub fn new(
        k: usize,
        cat: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<GammaStats>>,
        time: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut priors = Self { k, cat, gamma, time, cat_row_sums: Vec::new() };
        priors.rebuild_row_sums();
        priors.validate()?;
        Ok(priors)
    }

    fn rebuild_row_sums(&mut self) {
        self.cat_row_sums = self
            .cat
            .iter()
            .map(|rows| rows.iter().map(|row| row.iter().sum()).collect())
            .collect();
    }

    /// Sum of categorical pseudo-counts for attribute `m1`, component `k`.
    pub fn cat_row_sum(&self, m1: usize, k: usize) -> f64 {
        self.cat_row_sums[m1][k]
    }

    pub fn n_ticks(&self) -> usize {
        self.time.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("prior component count is zero".into()));
        }
        if self.time.is_empty() {
            return Err(Error::InvalidParameter("priors need at least one tick row".into()));
        }
        for (m1, rows) in self.cat.iter().enumerate() {
            if rows.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "cat prior {m1} has {} rows, expected {}",
                    rows.len(),
                    self.k
                )));
            }
            for row in rows {
                if row.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "cat prior {m1} has an empty unit row"
                    )));
                }
                if row.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "cat prior {m1} has a non-positive pseudo-count"
                    )));
                }
            }
        }
        for (m2, comps) in self.gamma.iter().enumerate() {
            if comps.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "gamma prior {m2} has {} components, expected {}",
                    comps.len(),
                    self.k
                )));
            }
            for g in comps {
                let ok = g.count.is_finite()
                    && g.count > 0.0
                    && g.sum.is_finite()
                    && g.sum > 0.0
                    && g.sum_logs.is_finite();
                if !ok {
                    return Err(Error::InvalidParameter(format!(
                        "gamma prior {m2} has invalid pseudo-statistics"
                    )));
                }
                // The log of the mean can never fall below the mean of the logs.
                if g.sum_logs / g.count > (g.sum / g.count).ln() + 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "gamma prior {m2} violates the log-mean bound"
                    )));
                }
            }
        }
        for row in &self.time {
            if row.len() != self.k {
                return Err(Error::InvalidParameter("tick prior row width mismatch".into()));
            }
            if row.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(Error::InvalidParameter(
                    "tick prior has a non-positive pseudo-count".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Flat priors used before any regime exists: every categorical and tick cell
/// gets pseudo-count 1/k, every Gamma component unit pseudo-statistics
/// (one fictitious observation of value one).
pub fn initial_priors(schema: &AttributeSchema, k: usize, n_ticks: usize) -> Result<Priors> {
    if k == 0 {
        return Err(Error::InvalidParameter("component count must be at least 1".into()));
    }
    if n_ticks == 0 {
        return Err(Error::InvalidParameter("tick count must be at least 1".into()));
    }
    let fill = 1.0 / k as f64;
    let mut cat = Vec::with_capacity(schema.n_categorical());
    for (m1, &u) in schema.vocab_sizes.iter().enumerate() {
        if u == 0 {
            return Err(Error::InvalidParameter(format!(
                "categorical attribute {m1} has an empty dictionary"
            )));
        }
        cat.push(vec![vec![fill; u]; k]);
    }
    // One pseudo-observation of mean one. The log pseudo-statistic sits
    // strictly below ln(mean): a zero gap would make the penalized fit
    // degenerate and clamp empty components at the shape ceiling.
    let gamma =
        vec![vec![GammaStats { count: 1.0, sum: 1.0, sum_logs: -0.5 }; k]; schema.n_continuous()];
    let time = vec![vec![fill; k]; n_ticks];
    Priors::new(k, cat, gamma, time)
}

/// Builds priors for the next window from a fitted regime's matrices.
///
/// The matrices are rescaled so the whole prior carries `strength`
/// pseudo-events: each categorical row and each Gamma component receives
/// strength/k, each tick row strength/n_ticks. Rows are extended when the
/// dictionary has grown since the matrices were fitted; unseen units enter
/// with pseudo-count 1/k. Every cell is floored at `floor` so posteriors stay
/// strictly positive.
pub fn priors_from_matrices(
    matrices: &ComponentMatrices,
    vocab_sizes: &[usize],
    n_ticks: usize,
    strength: f64,
    floor: f64,
) -> Result<Priors> {
    if !(strength.is_finite() && strength > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prior strength must be positive, got {strength}"
        )));
    }
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::InvalidParameter(format!("prior floor must be positive, got {floor}")));
    }
    if vocab_sizes.len() != matrices.cat_dists.len() {
        return Err(Error::InvalidParameter(format!(
            "{} vocab sizes for {} categorical attributes",
            vocab_sizes.len(),
            matrices.cat_dists.len()
        )));
    }
    if matrices.n_ticks() != n_ticks {
        return Err(Error::InvalidParameter(format!(
            "matrices carry {} ticks but the stream uses {}",
            matrices.n_ticks(),
            n_ticks
        )));
    }
    let k = matrices.k;
    let per_component = strength / k as f64;
    let new_unit_mass = (1.0 / k as f64).max(floor);
    let mut cat = Vec::with_capacity(matrices.cat_dists.len());
    for (m1, rows) in matrices.cat_dists.iter().enumerate() {
        let u_new = vocab_sizes[m1];
        let u_old = rows[0].len();
        if u_new < u_old {
            return Err(Error::InvalidParameter(format!(
                "dictionary for attribute {m1} shrank from {u_old} to {u_new}"
            )));
        }
        let mut out_rows = Vec::with_capacity(k);
        for row in rows {
            let mut out = Vec::with_capacity(u_new);
            for &p in row {
                out.push((per_component * p).max(floor));
            }
            out.resize(u_new, new_unit_mass);
            out_rows.push(out);
        }
        cat.push(out_rows);
    }
    let mut gamma = Vec::with_capacity(matrices.gamma_params.len());
    for comps in &matrices.gamma_params {
        let stats = comps
            .iter()
            .map(|g| GammaStats {
                count: per_component,
                sum: per_component * g.mean(),
                sum_logs: per_component * (digamma(g.shape) - g.rate.ln()),
            })
            .collect();
        gamma.push(stats);
    }
    let per_tick = strength / n_ticks as f64;
    let time = matrices
        .time_mix
        .iter()
        .map(|row| row.iter().map(|&p| (per_tick * p).max(floor)).collect())
        .collect();
    Priors::new(k, cat, gamma, time)
}

/// Extends fitted matrices to grown dictionaries without refitting. Each
/// categorical row is renormalized against `strength` pseudo-events with mass
/// 1/k reserved for every unseen unit; Gamma parameters and the time mix are
/// untouched. A no-op clone when nothing grew.
pub fn extend_matrices(
    matrices: &ComponentMatrices,
    vocab_sizes: &[usize],
    strength: f64,
) -> Result<ComponentMatrices> {
    if vocab_sizes.len() != matrices.cat_dists.len() {
        return Err(Error::InvalidParameter(format!(
            "{} vocab sizes for {} categorical attributes",
            vocab_sizes.len(),
            matrices.cat_dists.len()
        )));
    }
    let grown = matrices
        .cat_dists
        .iter()
        .enumerate()
        .any(|(m1, rows)| rows[0].len() != vocab_sizes[m1]);
    if !grown {
        return Ok(matrices.clone());
    }
    if !(strength.is_finite() && strength > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "extension strength must be positive, got {strength}"
        )));
    }
    let k = matrices.k;
    let unit_mass = 1.0 / k as f64;
    let mut out = matrices.clone();
    for (m1, rows) in out.cat_dists.iter_mut().enumerate() {
        let u_new = vocab_sizes[m1];
        let u_old = rows[0].len();
        if u_new < u_old {
            return Err(Error::InvalidParameter(format!(
                "dictionary for attribute {m1} shrank from {u_old} to {u_new}"
            )));
        }
        if u_new == u_old {
            continue;
        }
        let added = (u_new - u_old) as f64;
        let denom = strength + added * unit_mass;
        for row in rows.iter_mut() {
            for p in row.iter_mut() {
                *p = strength * *p / denom;
            }
            row.resize(u_new, unit_mass / denom);
        }
    }
    Ok(out)
}

/// Penalized maximum-likelihood fit of Gamma shape and rate from merged data
/// and prior pseudo-statistics.
///
/// The shape solves log(a) - psi(a) = s, where s is the log of the effective
/// mean minus the effective mean of the logs, via a closed-form initializer
/// refined by Newton steps; the rate is shape over the effective mean. Zero
/// effective log-variance (s <= 0) clamps the shape at [`GAMMA_SHAPE_MAX`].
pub fn fit_gamma_shape_rate(data: GammaStats, prior: GammaStats) -> Result<GammaParams> {
    let n = data.count + prior.count;
    let sum = data.sum + prior.sum;
    let sum_logs = data.sum_logs + prior.sum_logs;
    if !(n.is_finite() && sum.is_finite() && sum_logs.is_finite()) {
        return Err(Error::InvalidParameter("non-finite gamma statistics".into()));
    }
    if n <= 0.0 {
        return Err(Error::InvalidParameter("gamma fit needs a positive effective count".into()));
    }
    let mean = sum / n;
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma fit needs a positive effective mean, got {mean}"
        )));
    }
    let s = mean.ln() - sum_logs / n;
    if !s.is_finite() {
        return Err(Error::InvalidParameter("non-finite gamma log statistic".into()));
    }
    if s <= 0.0 {
        let shape = GAMMA_SHAPE_MAX;
        return Ok(GammaParams { shape, rate: shape / mean });
    }
    let mut a = (3.0 - s + ((s - 3.0) * (s - 3.0) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..50 {
        let f = a.ln() - digamma(a) - s;
        let fp = 1.0 / a - trigamma(a);
        let mut next = a - f / fp;
        if !next.is_finite() || next <= 0.0 {
            next = a / 2.0;
        }
        let converged = ((next - a) / next).abs() < 1e-8;
        a = next;
        if converged {
            break;
        }
    }
    let shape = a.min(GAMMA_SHAPE_MAX);
    let rate = shape / mean;
    if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
        return Err(Error::Numerical(format!(
            "gamma fit diverged: shape {shape}, rate {rate}"
        )));
    }
    Ok(GammaParams { shape, rate })
}

fn posterior_gamma(stats: GammaStats, prior: GammaStats) -> Result<GammaParams> {
    // Components with fewer than two observations fall back to the
    // prior-derived parameters; the fixed point is undefined there.
    if stats.count < 2.0 {
        fit_gamma_shape_rate(GammaStats::ZERO, prior)
    } else {
        fit_gamma_shape_rate(stats, prior)
    }
}

/// Assignment state and running statistics of one window's Gibbs chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// Component of each event, parallel to the window's event list.
    pub assignments: Vec<usize>,
    /// Events per (tick, component).
    pub tick_counts: Vec<Vec<f64>>,
    /// Events per (categorical attribute, component, unit).
    pub cat_counts: Vec<Vec<Vec<f64>>>,
    /// Events per component.
    pub component_totals: Vec<f64>,
    /// Per (continuous attribute, component) observation statistics, rebuilt
    /// from assignments at sweep boundaries.
    pub cont_stats: Vec<Vec<GammaStats>>,
    /// Current Gamma estimates per (continuous attribute, component).
    pub gammas: Vec<Vec<GammaParams>>,
    /// Cached shape*ln(rate) - lnGamma(shape) per (attribute, component).
    gamma_lognorm: Vec<Vec<f64>>,
    /// Cached ln of every continuous value, laid out [event * m2 + j].
    ln_cont: Vec<f64>,
}

fn validate_events(window: &Window, cat_widths: &[usize], m2: usize) -> Result<()> {
    for (i, ev) in window.events.iter().enumerate() {
        if ev.cat_values.len() != cat_widths.len() {
            return Err(Error::InvalidParameter(format!(
                "event {i} has {} categorical values, schema expects {}",
                ev.cat_values.len(),
                cat_widths.len()
            )));
        }
        for (m1, (&u, &width)) in ev.cat_values.iter().zip(cat_widths).enumerate() {
            if u as usize >= width {
                return Err(Error::InvalidParameter(format!(
                    "event {i} uses unit {u} of attribute {m1}, dictionary holds {width}"
                )));
            }
        }
        if ev.cont_values.len() != m2 {
            return Err(Error::InvalidParameter(format!(
                "event {i} has {} continuous values, schema expects {m2}",
                ev.cont_values.len()
            )));
        }
        if ev.cont_values.iter().any(|&x| !x.is_finite() || x <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "event {i} has a non-positive continuous value"
            )));
        }
    }
    Ok(())
}

impl GibbsState {
    /// Random initial assignments with fully rebuilt statistics; Gamma
    /// estimates fitted from the initial assignment.
    pub fn init<R: Rng>(window: &Window, priors: &Priors, rng: &mut R) -> Result<Self> {
        let mut state = Self::build(window, priors, rng)?;
        state.refresh_continuous(window, priors)?;
        Ok(state)
    }

    /// Like [`GibbsState::init`] but with Gamma parameters pinned to the given
    /// values instead of being fitted; used when scoring a window under a
    /// stored regime.
    fn init_with_fixed_gammas<R: Rng>(
        window: &Window,
        priors: &Priors,
        gammas: &[Vec<GammaParams>],
        rng: &mut R,
    ) -> Result<Self> {
        let mut state = Self::build(window, priors, rng)?;
        state.set_gammas(gammas);
        state.rebuild_cont_stats(window);
        Ok(state)
    }

    fn build<R: Rng>(window: &Window, priors: &Priors, rng: &mut R) -> Result<Self> {
        let cat_widths: Vec<usize> = priors.cat.iter().map(|rows| rows[0].len()).collect();
        let m2 = priors.gamma.len();
        validate_events(window, &cat_widths, m2)?;
        if priors.n_ticks() != window.n_ticks() {
            return Err(Error::InvalidParameter(format!(
                "priors carry {} ticks but the window has {}",
                priors.n_ticks(),
                window.n_ticks()
            )));
        }
        let k = priors.k;
        let n = window.events.len();
        let mut state = Self {
            assignments: Vec::with_capacity(n),
            tick_counts: vec![vec![0.0; k]; window.n_ticks()],
            cat_counts: cat_widths.iter().map(|&w| vec![vec![0.0; w]; k]).collect(),
            component_totals: vec![0.0; k],
            cont_stats: vec![vec![GammaStats::ZERO; k]; m2],
            gammas: vec![vec![GammaParams { shape: 1.0, rate: 1.0 }; k]; m2],
            gamma_lognorm: vec![vec![0.0; k]; m2],
            ln_cont: Vec::with_capacity(n * m2),
        };
        for (i, ev) in window.events.iter().enumerate() {
            for &x in &ev.cont_values {
                state.ln_cont.push(x.ln());
            }
            let z = rng.random_range(0..k);
            state.assignments.push(z);
            let tick = window.ticks()[i] as usize;
            state.tick_counts[tick][z] += 1.0;
            for (m1, &u) in ev.cat_values.iter().enumerate() {
                state.cat_counts[m1][z][u as usize] += 1.0;
            }
            state.component_totals[z] += 1.0;
        }
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.component_totals.len()
    }

    fn m2(&self) -> usize {
        self.cont_stats.len()
    }

    fn ln_cont_slice(&self, event_idx: usize) -> &[f64] {
        let m2 = self.m2();
        &self.ln_cont[event_idx * m2..(event_idx + 1) * m2]
    }

    fn retract(&mut self, event_idx: usize, tick: usize, ev: &Event) {
        let z = self.assignments[event_idx];
        self.tick_counts[tick][z] -= 1.0;
        for (m1, &u) in ev.cat_values.iter().enumerate() {
            self.cat_counts[m1][z][u as usize] -= 1.0;
        }
        self.component_totals[z] -= 1.0;
    }

    fn place(&mut self, event_idx: usize, z: usize, tick: usize, ev: &Event) {
        self.tick_counts[tick][z] += 1.0;
        for (m1, &u) in ev.cat_values.iter().enumerate() {
            self.cat_counts[m1][z][u as usize] += 1.0;
        }
        self.component_totals[z] += 1.0;
        self.assignments[event_idx] = z;
    }

    fn set_gammas(&mut self, gammas: &[Vec<GammaParams>]) {
        self.gammas = gammas.to_vec();
        for (j, comps) in self.gammas.iter().enumerate() {
            for (k, g) in comps.iter().enumerate() {
                self.gamma_lognorm[j][k] =
                    g.shape * g.rate.ln() - statrs::function::gamma::ln_gamma(g.shape);
            }
        }
    }

    fn rebuild_cont_stats(&mut self, window: &Window) {
        let m2 = self.m2();
        for comps in self.cont_stats.iter_mut() {
            comps.fill(GammaStats::ZERO);
        }
        for (i, ev) in window.events.iter().enumerate() {
            let z = self.assignments[i];
            let lns = i * m2;
            for (j, &x) in ev.cont_values.iter().enumerate() {
                self.cont_stats[j][z].add(x, self.ln_cont[lns + j]);
            }
        }
    }

    /// Rebuilds continuous statistics from assignments and refits every Gamma
    /// component against its prior.
    fn refresh_continuous(&mut self, window: &Window, priors: &Priors) -> Result<()> {
        self.rebuild_cont_stats(window);
        let gammas: Result<Vec<Vec<GammaParams>>> = self
            .cont_stats
            .iter()
            .enumerate()
            .map(|(j, comps)| {
                comps
                    .iter()
                    .enumerate()
                    .map(|(k, &stats)| posterior_gamma(stats, priors.gamma[j][k]))
                    .collect()
            })
            .collect();
        let gammas = gammas?;
        self.set_gammas(&gammas);
        Ok(())
    }

    /// True when every count table matches a brute-force rebuild from the
    /// assignment vector.
    pub fn counts_consistent(&self, window: &Window) -> bool {
        let k = self.k();
        let mut tick = vec![vec![0.0; k]; self.tick_counts.len()];
        let mut cat: Vec<Vec<Vec<f64>>> = self
            .cat_counts
            .iter()
            .map(|rows| vec![vec![0.0; rows[0].len()]; k])
            .collect();
        let mut totals = vec![0.0; k];
        for (i, ev) in window.events.iter().enumerate() {
            let z = self.assignments[i];
            tick[window.ticks()[i] as usize][z] += 1.0;
            for (m1, &u) in ev.cat_values.iter().enumerate() {
                cat[m1][z][u as usize] += 1.0;
            }
            totals[z] += 1.0;
        }
        tick == self.tick_counts && cat == self.cat_counts && totals == self.component_totals
    }
}

/// How the categorical and Gamma terms of a sampling weight are evaluated:
/// collapsed against pseudo-counts, or frozen at stored matrix values.
enum CatTerm<'a> {
    Collapsed(&'a Priors),
    Frozen(&'a ComponentMatrices),
}

/// Fills `weights` with the unnormalized selection weights of one event and
/// returns their sum. The Gamma part is computed in log space and shifted by
/// its maximum before exponentiation.
#[allow(clippy::too_many_arguments)]
fn event_weights(
    tick: usize,
    cat_values: &[u32],
    lns: &[f64],
    cont_values: &[f64],
    state: &GibbsState,
    time_prior: &[Vec<f64>],
    cat_term: &CatTerm<'_>,
    weights: &mut [f64],
    logs: &mut [f64],
) -> f64 {
    let k = weights.len();
    let m2 = cont_values.len();
    for kk in 0..k {
        let mut w = state.tick_counts[tick][kk] + time_prior[tick][kk];
        match cat_term {
            CatTerm::Collapsed(priors) => {
                for (m1, &u) in cat_values.iter().enumerate() {
                    let num = state.cat_counts[m1][kk][u as usize] + priors.cat[m1][kk][u as usize];
                    let den = state.component_totals[kk] + priors.cat_row_sum(m1, kk);
                    w *= num / den;
                }
            }
            CatTerm::Frozen(matrices) => {
                for (m1, &u) in cat_values.iter().enumerate() {
                    w *= matrices.cat_dists[m1][kk][u as usize];
                }
            }
        }
        weights[kk] = w;
        if m2 > 0 {
            let mut g = 0.0;
            for j in 0..m2 {
                let gp = state.gammas[j][kk];
                g += (gp.shape - 1.0) * lns[j] - gp.rate * cont_values[j]
                    + state.gamma_lognorm[j][kk];
            }
            logs[kk] = g;
        }
    }
    let mut total = 0.0;
    if m2 > 0 {
        let gmax = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for kk in 0..k {
            weights[kk] *= (logs[kk] - gmax).exp();
            total += weights[kk];
        }
    } else {
        total = weights.iter().sum();
    }
    total
}

fn draw_component<R: Rng>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut target = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        target -= w;
        if target < 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

/// Draws a component for one event whose old assignment has already been
/// removed from the count tables. Falls back to a uniform draw (with a logged
/// warning) if every weight degenerates to zero or a non-finite value.
pub fn sample_assignment<R: Rng>(
    event: &Event,
    tick: usize,
    state: &GibbsState,
    priors: &Priors,
    rng: &mut R,
) -> usize {
    let k = priors.k;
    let mut weights = vec![0.0; k];
    let mut logs = vec![0.0; k];
    let lns: Vec<f64> = event.cont_values.iter().map(|&x| x.ln()).collect();
    let total = event_weights(
        tick,
        &event.cat_values,
        &lns,
        &event.cont_values,
        state,
        &priors.time,
        &CatTerm::Collapsed(priors),
        &mut weights,
        &mut logs,
    );
    if total > 0.0 && total.is_finite() {
        draw_component(&weights, total, rng)
    } else {
        log::warn!("degenerate sampling weights (total {total}); falling back to uniform");
        rng.random_range(0..k)
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_events<R: Rng>(
    window: &Window,
    state: &mut GibbsState,
    time_prior: &[Vec<f64>],
    frozen: Option<&ComponentMatrices>,
    priors: &Priors,
    rng: &mut R,
    weights: &mut [f64],
    logs: &mut [f64],
) {
    let k = priors.k;
    for i in 0..window.events.len() {
        let tick = window.ticks()[i] as usize;
        let ev = &window.events[i];
        state.retract(i, tick, ev);
        let cat_term = match frozen {
            Some(m) => CatTerm::Frozen(m),
            None => CatTerm::Collapsed(priors),
        };
        let total = event_weights(
            tick,
            &ev.cat_values,
            state.ln_cont_slice(i),
            &ev.cont_values,
            state,
            time_prior,
            &cat_term,
            weights,
            logs,
        );
        let z = if total > 0.0 && total.is_finite() {
            draw_component(weights, total, rng)
        } else {
            log::warn!(
                "degenerate sampling weights for event {i} (total {total}); uniform fallback"
            );
            rng.random_range(0..k)
        };
        state.place(i, z, tick, ev);
    }
}

/// One full Gibbs sweep: every event is reassigned once, then the Gamma
/// estimates are refreshed from the new assignment.
pub fn gibbs_sweep<R: Rng>(
    window: &Window,
    state: &mut GibbsState,
    priors: &Priors,
    rng: &mut R,
) -> Result<()> {
    let k = priors.k;
    let mut weights = vec![0.0; k];
    let mut logs = vec![0.0; k];
    sweep_events(window, state, &priors.time, None, priors, rng, &mut weights, &mut logs);
    state.refresh_continuous(window, priors)
}

fn posterior_time_rows(state: &GibbsState, time_prior: &[Vec<f64>]) -> Vec<Vec<f64>> {
    state
        .tick_counts
        .iter()
        .zip(time_prior)
        .map(|(counts, prior)| {
            let n_t: f64 = counts.iter().sum();
            let prior_sum: f64 = prior.iter().sum();
            let denom = n_t + prior_sum;
            counts.iter().zip(prior).map(|(&n, &p)| (n + p) / denom).collect()
        })
        .collect()
}

/// Posterior-mean matrices implied by the current assignment counts and the
/// priors: smoothed relative frequencies for every categorical and tick row,
/// penalized-fit parameters for every Gamma component.
pub fn posterior_from_state(state: &GibbsState, priors: &Priors) -> Result<ComponentMatrices> {
    let k = priors.k;
    let mut cat_dists = Vec::with_capacity(priors.cat.len());
    for (m1, rows) in priors.cat.iter().enumerate() {
        let mut out_rows = Vec::with_capacity(k);
        for (kk, prior_row) in rows.iter().enumerate() {
            let denom = state.component_totals[kk] + priors.cat_row_sum(m1, kk);
            let row: Vec<f64> = prior_row
                .iter()
                .zip(&state.cat_counts[m1][kk])
                .map(|(&p, &n)| (n + p) / denom)
                .collect();
            out_rows.push(row);
        }
        cat_dists.push(out_rows);
    }
    let mut gamma_params = Vec::with_capacity(priors.gamma.len());
    for (j, comps) in priors.gamma.iter().enumerate() {
        let fitted: Result<Vec<GammaParams>> = comps
            .iter()
            .enumerate()
            .map(|(kk, &prior)| posterior_gamma(state.cont_stats[j][kk], prior))
            .collect();
        gamma_params.push(fitted?);
    }
    let time_mix = posterior_time_rows(state, &priors.time);
    Ok(ComponentMatrices { k, cat_dists, gamma_params, time_mix })
}

/// A fitted window: posterior-mean matrices averaged over the sampling sweeps
/// plus the final chain state.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub matrices: ComponentMatrices,
    pub state: GibbsState,
}

fn add_matrices(acc: &mut ComponentMatrices, other: &ComponentMatrices) {
    for (a, o) in acc.cat_dists.iter_mut().zip(&other.cat_dists) {
        for (ar, or) in a.iter_mut().zip(o) {
            for (av, ov) in ar.iter_mut().zip(or) {
                *av += ov;
            }
        }
    }
    for (a, o) in acc.gamma_params.iter_mut().zip(&other.gamma_params) {
        for (ag, og) in a.iter_mut().zip(o) {
            ag.shape += og.shape;
            ag.rate += og.rate;
        }
    }
    for (ar, or) in acc.time_mix.iter_mut().zip(&other.time_mix) {
        for (av, ov) in ar.iter_mut().zip(or) {
            *av += ov;
        }
    }
}

fn scale_matrices(m: &mut ComponentMatrices, factor: f64) {
    for attr in m.cat_dists.iter_mut() {
        for row in attr.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
    }
    for attr in m.gamma_params.iter_mut() {
        for g in attr.iter_mut() {
            g.shape *= factor;
            g.rate *= factor;
        }
    }
    for row in m.time_mix.iter_mut() {
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
}

/// Fits component matrices to one window: `burn_in` discarded sweeps followed
/// by `samples` sweeps whose posterior means are averaged. Deterministic for a
/// fixed seed.
pub fn decompose(
    window: &Window,
    priors: &Priors,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Decomposition> {
    if window.is_empty() {
        return Err(Error::EmptyWindow(window.window_index));
    }
    priors.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GibbsState::init(window, priors, &mut rng)?;
    for _ in 0..cfg.burn_in {
        gibbs_sweep(window, &mut state, priors, &mut rng)?;
    }
    let samples = cfg.samples.max(1);
    let mut acc: Option<ComponentMatrices> = None;
    for _ in 0..samples {
        gibbs_sweep(window, &mut state, priors, &mut rng)?;
        let post = posterior_from_state(&state, priors)?;
        match acc.as_mut() {
            Some(a) => add_matrices(a, &post),
            None => acc = Some(post),
        }
    }
    let mut matrices = acc.expect("samples >= 1");
    scale_matrices(&mut matrices, 1.0 / samples as f64);
    matrices.validate()?;
    Ok(Decomposition { matrices, state })
}

/// A stored regime adapted to one window: categorical rows and Gamma
/// parameters frozen at (dictionary-extended) regime values, tick mixing
/// weights re-estimated on the window.
#[derive(Debug, Clone)]
pub struct Refit {
    pub matrices: ComponentMatrices,
    pub state: GibbsState,
    /// The priors derived from the regime for this window; reusable for a
    /// posterior update when the regime is chosen.
    pub priors: Priors,
}

/// Re-estimates only the tick mixing weights of stored matrices on a window,
/// holding categorical rows and Gamma parameters fixed. The prior strength of
/// the mixing weights is beta times the window's own event count.
pub fn refit_time_mixture(
    window: &Window,
    matrices: &ComponentMatrices,
    vocab_sizes: &[usize],
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Refit> {
    if window.is_empty() {
        return Err(Error::EmptyWindow(window.window_index));
    }
    let strength = cfg.beta * window.events.len() as f64;
    let frozen = extend_matrices(matrices, vocab_sizes, strength)?;
    if frozen.n_ticks() != window.n_ticks() {
        return Err(Error::InvalidParameter(format!(
            "regime carries {} ticks but the window has {}",
            frozen.n_ticks(),
            window.n_ticks()
        )));
    }
    let priors =
        priors_from_matrices(matrices, vocab_sizes, window.n_ticks(), strength, cfg.prior_floor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state =
        GibbsState::init_with_fixed_gammas(window, &priors, &frozen.gamma_params, &mut rng)?;
    let k = priors.k;
    let mut weights = vec![0.0; k];
    let mut logs = vec![0.0; k];
    for _ in 0..cfg.burn_in {
        sweep_events(window, &mut state, &priors.time, Some(&frozen), &priors, &mut rng, &mut weights, &mut logs);
    }
    let samples = cfg.samples.max(1);
    let mut time_acc: Option<Vec<Vec<f64>>> = None;
    for _ in 0..samples {
        sweep_events(window, &mut state, &priors.time, Some(&frozen), &priors, &mut rng, &mut weights, &mut logs);
        let rows = posterior_time_rows(&state, &priors.time);
        match time_acc.as_mut() {
            Some(acc) => {
                for (ar, rr) in acc.iter_mut().zip(&rows) {
                    for (av, rv) in ar.iter_mut().zip(rr) {
                        *av += rv;
                    }
                }
            }
            None => time_acc = Some(rows),
        }
    }
    let mut time_mix = time_acc.expect("samples >= 1");
    let inv = 1.0 / samples as f64;
    for row in time_mix.iter_mut() {
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    state.rebuild_cont_stats(window);
    let mut adapted = frozen;
    adapted.time_mix = time_mix;
    adapted.validate()?;
    Ok(Refit { matrices: adapted, state, priors })
}

/// Natural-log likelihood of a window under fitted matrices: for every event,
/// the log of the tick-weighted mixture of its per-component densities. Empty
/// windows yield zero.
pub fn log_likelihood(window: &Window, matrices: &ComponentMatrices) -> Result<f64> {
    if window.is_empty() {
        return Ok(0.0);
    }
    if matrices.n_ticks() != window.n_ticks() {
        return Err(Error::InvalidParameter(format!(
            "matrices carry {} ticks but the window has {}",
            matrices.n_ticks(),
            window.n_ticks()
        )));
    }
    let k = matrices.k;
    // Log tables are precomputed once; the per-event work is pure lookups.
    let ln_time: Vec<Vec<f64>> = matrices
        .time_mix
        .iter()
        .map(|row| row.iter().map(|&p| p.ln()).collect())
        .collect();
    let ln_cat: Vec<Vec<Vec<f64>>> = matrices
        .cat_dists
        .iter()
        .map(|rows| rows.iter().map(|row| row.iter().map(|&p| p.ln()).collect()).collect())
        .collect();
    let lognorm: Vec<Vec<f64>> = matrices
        .gamma_params
        .iter()
        .map(|comps| {
            comps
                .iter()
                .map(|g| g.shape * g.rate.ln() - statrs::function::gamma::ln_gamma(g.shape))
                .collect()
        })
        .collect();
    let mut buf = vec![0.0; k];
    let mut total = 0.0;
    for (i, ev) in window.events.iter().enumerate() {
        let tick = window.ticks()[i] as usize;
        for kk in 0..k {
            let mut lp = ln_time[tick][kk];
            for (m1, &u) in ev.cat_values.iter().enumerate() {
                lp += ln_cat[m1][kk][u as usize];
            }
            for (j, norms) in lognorm.iter().enumerate() {
                let g = matrices.gamma_params[j][kk];
                let x = ev.cont_values[j];
                lp += (g.shape - 1.0) * x.ln() - g.rate * x + norms[kk];
            }
            buf[kk] = lp;
        }
        let li = logsumexp(&buf);
        if !li.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite log-likelihood at event {i} of window {}",
                window.window_index
            )));
        }
        total += li;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(u: usize, m2: usize) -> AttributeSchema {
        AttributeSchema {
            categorical_names: vec!["cat".into()],
            continuous_names: (0..m2).map(|j| format!("val{j}")).collect(),
            vocab_sizes: vec![u],
        }
    }

    fn window_from(values: Vec<(f64, u32, Vec<f64>)>, duration: f64, tick: f64) -> Window {
        let events = values
            .into_iter()
            .map(|(t, u, xs)| Event { time: t, cat_values: vec![u], cont_values: xs })
            .collect();
        Window::new(0, 0.0, duration, tick, events).unwrap()
    }

    #[test]
    fn initial_priors_spread_inverse_k() {
        let p = initial_priors(&schema(4, 1), 2, 3).unwrap();
        for row in &p.cat[0] {
            assert_eq!(row, &vec![0.5; 4]);
        }
        for row in &p.time {
            assert_eq!(row, &vec![0.5; 2]);
        }
        for g in &p.gamma[0] {
            assert_eq!((g.count, g.sum, g.sum_logs), (1.0, 1.0, -0.5));
        }
    }

    #[test]
    fn initial_priors_with_single_component_are_unit() {
        let p = initial_priors(&schema(3, 0), 1, 2).unwrap();
        assert_eq!(p.cat[0][0], vec![1.0; 3]);
        assert_eq!(p.time[0], vec![1.0]);
    }

    #[test]
    fn initial_priors_reject_zero_components() {
        assert!(initial_priors(&schema(3, 0), 0, 2).is_err());
    }

    #[test]
    fn gamma_fit_recovers_parameters_from_prior_alone() {
        let (a0, b0, w) = (2.5, 1.5, 7.0);
        let prior = GammaStats {
            count: w,
            sum: w * (a0 / b0),
            sum_logs: w * (digamma(a0) - b0.ln()),
        };
        let fit = fit_gamma_shape_rate(GammaStats::ZERO, prior).unwrap();
        assert!((fit.shape - a0).abs() < 1e-8, "shape {}", fit.shape);
        assert!((fit.rate - b0).abs() < 1e-8, "rate {}", fit.rate);
    }

    #[test]
    fn gamma_fit_clamps_default_prior_without_data() {
        let prior = GammaStats { count: 1.0, sum: 1.0, sum_logs: 0.0 };
        let fit = fit_gamma_shape_rate(GammaStats::ZERO, prior).unwrap();
        assert_eq!(fit.shape, GAMMA_SHAPE_MAX);
        assert_eq!(fit.rate, GAMMA_SHAPE_MAX);
    }

    #[test]
    fn gamma_fit_matches_external_reference() {
        // Externally computed on the fixed dataset below.
        let xs = [0.5, 1.2, 0.3, 2.4, 0.9, 1.1, 0.7, 3.0];
        let data = GammaStats {
            count: xs.len() as f64,
            sum: xs.iter().sum(),
            sum_logs: xs.iter().map(|x: &f64| x.ln()).sum(),
        };
        let fit = fit_gamma_shape_rate(data, GammaStats::ZERO).unwrap();
        assert!((fit.shape - 2.180252523994422).abs() < 1e-6, "shape {}", fit.shape);
        assert!((fit.rate - 1.7269326922728092).abs() < 1e-6, "rate {}", fit.rate);
        // Fixed-point residual at the returned shape.
        let s = (data.sum / data.count).ln() - data.sum_logs / data.count;
        assert!((fit.shape.ln() - digamma(fit.shape) - s).abs() < 1e-6);
    }

    #[test]
    fn gamma_fit_recovers_exponential_draws() {
        use rand_distr::Distribution;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dist = rand_distr::Gamma::new(1.0, 1.0).unwrap();
        let mut data = GammaStats::ZERO;
        for _ in 0..100_000 {
            let x: f64 = dist.sample(&mut rng);
            data.add(x, x.ln());
        }
        let tiny = GammaStats { count: 1e-9, sum: 1e-9, sum_logs: 0.0 };
        let fit = fit_gamma_shape_rate(data, tiny).unwrap();
        assert!(fit.shape > 0.95 && fit.shape < 1.05, "shape {}", fit.shape);
        assert!(fit.rate > 0.95 && fit.rate < 1.05, "rate {}", fit.rate);
    }

    #[test]
    fn gamma_fit_clamps_constant_data() {
        let data = GammaStats { count: 10.0, sum: 30.0, sum_logs: 10.0 * 3f64.ln() };
        let fit = fit_gamma_shape_rate(data, GammaStats::ZERO).unwrap();
        assert_eq!(fit.shape, GAMMA_SHAPE_MAX);
        assert!((fit.rate - GAMMA_SHAPE_MAX / 3.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_fit_rejects_bad_input() {
        assert!(fit_gamma_shape_rate(GammaStats::ZERO, GammaStats::ZERO).is_err());
        let bad = GammaStats { count: f64::NAN, sum: 1.0, sum_logs: 0.0 };
        assert!(fit_gamma_shape_rate(bad, GammaStats::ZERO).is_err());
    }

    #[test]
    fn single_component_always_selects_zero() {
        let w = window_from(vec![(0.5, 2, vec![1.0])], 2.0, 1.0);
        let priors = initial_priors(&schema(4, 1), 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = GibbsState::init(&w, &priors, &mut rng).unwrap();
        state.retract(0, 0, &w.events[0]);
        let z = sample_assignment(&w.events[0], 0, &state, &priors, &mut rng);
        assert_eq!(z, 0);
    }

    #[test]
    fn dominant_component_wins_nearly_always() {
        // Component 0 holds all count mass for unit 1 and a far higher Gamma
        // density at x = 0.5 (mean 0.5 versus mean 50).
        let w = window_from(
            vec![(0.0, 1, vec![0.5]), (0.4, 1, vec![0.6]), (0.7, 0, vec![40.0])],
            1.0,
            1.0,
        );
        let priors = initial_priors(&schema(2, 1), 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = GibbsState::init(&w, &priors, &mut rng).unwrap();
        state.assignments = vec![0, 0, 1];
        state.tick_counts = vec![vec![2.0, 1.0]];
        state.cat_counts = vec![vec![vec![0.0, 2.0], vec![1.0, 0.0]]];
        state.component_totals = vec![2.0, 1.0];
        let gammas = vec![vec![
            GammaParams { shape: 2.0, rate: 4.0 },
            GammaParams { shape: 2.0, rate: 0.04 },
        ]];
        state.set_gammas(&gammas);
        let probe = Event { time: 0.2, cat_values: vec![1], cont_values: vec![0.5] };
        let mut hits = 0u32;
        for _ in 0..10_000 {
            if sample_assignment(&probe, 0, &state, &priors, &mut rng) == 0 {
                hits += 1;
            }
        }
        assert!(hits > 9_900, "component 0 drawn {hits}/10000 times");
    }

    #[test]
    fn symmetric_components_split_evenly() {
        let w = window_from(vec![(0.1, 0, vec![1.0]), (0.2, 0, vec![1.0])], 1.0, 1.0);
        let priors = initial_priors(&schema(2, 1), 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = GibbsState::init(&w, &priors, &mut rng).unwrap();
        state.assignments = vec![0, 1];
        state.tick_counts = vec![vec![1.0, 1.0]];
        state.cat_counts = vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]]];
        state.component_totals = vec![1.0, 1.0];
        let gammas = vec![vec![GammaParams { shape: 2.0, rate: 2.0 }; 2]];
        state.set_gammas(&gammas);
        let probe = Event { time: 0.5, cat_values: vec![0], cont_values: vec![1.0] };
        let mut hits = 0u32;
        for _ in 0..10_000 {
            if sample_assignment(&probe, 0, &state, &priors, &mut rng) == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn sweep_on_empty_window_is_identity() {
        let w = Window::empty(0, 0.0, 2.0, 1.0);
        let priors = initial_priors(&schema(3, 1), 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = GibbsState::init(&w, &priors, &mut rng).unwrap();
        let before = state.clone();
        gibbs_sweep(&w, &mut state, &priors, &mut rng).unwrap();
        assert_eq!(state, before);
    }

    #[test]
    fn sweep_with_single_event_and_component_is_stable() {
        let w = window_from(vec![(0.5, 0, vec![])], 1.0, 1.0);
        let priors = initial_priors(&schema(2, 0), 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut state = GibbsState::init(&w, &priors, &mut rng).unwrap();
        gibbs_sweep(&w, &mut state, &priors, &mut rng).unwrap();
        assert_eq!(state.assignments, vec![0]);
        assert_eq!(state.component_totals, vec![1.0]);
        assert!(state.counts_consistent(&w));
    }

    #[test]
    fn decompose_concentrates_on_observed_unit() {
        let events: Vec<(f64, u32, Vec<f64>)> =
            (0..100).map(|i| (i as f64 / 100.0, 3, vec![])).collect();
        let w = window_from(events, 1.0, 1.0);
        let priors = initial_priors(&schema(5, 0), 1, 1).unwrap();
        let cfg = ModelConfig::default();
        let dec = decompose(&w, &priors, &cfg, 17).unwrap();
        assert!(
            dec.matrices.cat_dists[0][0][3] > 0.9,
            "mass on unit 3 is {}",
            dec.matrices.cat_dists[0][0][3]
        );
    }

    #[test]
    fn decompose_is_deterministic_for_a_seed() {
        let events: Vec<(f64, u32, Vec<f64>)> = (0..50)
            .map(|i| (i as f64 / 10.0, (i % 3) as u32, vec![0.5 + (i % 7) as f64]))
            .collect();
        let w = window_from(events, 5.0, 1.0);
        let priors = initial_priors(&schema(3, 1), 2, 5).unwrap();
        let cfg = ModelConfig { burn_in: 3, samples: 2, ..ModelConfig::default() };
        let a = decompose(&w, &priors, &cfg, 99).unwrap();
        let b = decompose(&w, &priors, &cfg, 99).unwrap();
        assert_eq!(a.matrices, b.matrices);
        assert_eq!(a.state.assignments, b.state.assignments);
    }

    #[test]
    fn decompose_rejects_empty_windows() {
        let w = Window::empty(4, 0.0, 1.0, 1.0);
        let priors = initial_priors(&schema(2, 0), 2, 1).unwrap();
        let err = decompose(&w, &priors, &ModelConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::EmptyWindow(4)));
    }

    #[test]
    fn refit_with_single_component_pins_time_rows_to_one() {
        let events: Vec<(f64, u32, Vec<f64>)> =
            (0..20).map(|i| (i as f64 / 10.0, 0, vec![1.0])).collect();
        let w = window_from(events, 2.0, 1.0);
        let matrices = ComponentMatrices {
            k: 1,
            cat_dists: vec![vec![vec![0.6, 0.4]]],
            gamma_params: vec![vec![GammaParams { shape: 2.0, rate: 2.0 }]],
            time_mix: vec![vec![1.0], vec![1.0]],
        };
        let cfg = ModelConfig { burn_in: 2, samples: 2, ..ModelConfig::default() };
        let refit = refit_time_mixture(&w, &matrices, &[2], &cfg, 5).unwrap();
        for row in &refit.matrices.time_mix {
            assert_eq!(row, &vec![1.0]);
        }
        assert_eq!(refit.matrices.cat_dists, matrices.cat_dists);
        assert_eq!(refit.matrices.gamma_params, matrices.gamma_params);
    }

    #[test]
    fn likelihood_of_empty_window_is_zero() {
        let w = Window::empty(0, 0.0, 1.0, 1.0);
        let m = ComponentMatrices {
            k: 1,
            cat_dists: vec![],
            gamma_params: vec![],
            time_mix: vec![vec![1.0]],
        };
        assert_eq!(log_likelihood(&w, &m).unwrap(), 0.0);
    }

    #[test]
    fn likelihood_of_certain_event_is_zero() {
        let w = window_from(vec![(0.5, 1, vec![])], 1.0, 1.0);
        let m = ComponentMatrices {
            k: 1,
            cat_dists: vec![vec![vec![0.0, 1.0]]],
            gamma_params: vec![],
            time_mix: vec![vec![1.0]],
        };
        assert_eq!(log_likelihood(&w, &m).unwrap(), 0.0);
    }

    #[test]
    fn likelihood_matches_external_two_component_value() {
        // Externally computed mixture log-likelihood for this exact setup.
        let w = window_from(vec![(0.1, 0, vec![0.7]), (0.5, 1, vec![3.0])], 1.0, 1.0);
        let m = ComponentMatrices {
            k: 2,
            cat_dists: vec![vec![vec![0.2, 0.8], vec![0.9, 0.1]]],
            gamma_params: vec![vec![
                GammaParams { shape: 2.0, rate: 1.0 },
                GammaParams { shape: 0.5, rate: 2.0 },
            ]],
            time_mix: vec![vec![0.3, 0.7]],
        };
        let ll = log_likelihood(&w, &m).unwrap();
        assert!((ll - (-5.104058738824228)).abs() < 1e-9, "ll {ll}");
    }

    #[test]
    fn priors_from_matrices_recover_source_distributions() {
        let matrices = ComponentMatrices {
            k: 2,
            cat_dists: vec![vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]],
            gamma_params: vec![vec![
                GammaParams { shape: 2.0, rate: 1.0 },
                GammaParams { shape: 0.5, rate: 4.0 },
            ]],
            time_mix: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        };
        let priors = priors_from_matrices(&matrices, &[3], 2, 100.0, 1e-6).unwrap();
        // With no data the posterior mean reproduces the source rows.
        for (kk, row) in matrices.cat_dists[0].iter().enumerate() {
            let total = priors.cat_row_sum(0, kk);
            for (u, &p) in row.iter().enumerate() {
                assert!((priors.cat[0][kk][u] / total - p).abs() < 1e-9);
            }
        }
        // The gamma pseudo-statistics reproduce the source parameters exactly.
        for (kk, g) in matrices.gamma_params[0].iter().enumerate() {
            let fit = fit_gamma_shape_rate(GammaStats::ZERO, priors.gamma[0][kk]).unwrap();
            assert!((fit.shape - g.shape).abs() < 1e-6, "shape {}", fit.shape);
            assert!((fit.rate - g.rate).abs() < 1e-6, "rate {}", fit.rate);
        }
    }

    #[test]
    fn priors_extend_to_grown_dictionaries() {
        let matrices = ComponentMatrices {
            k: 2,
            cat_dists: vec![vec![vec![0.5, 0.5], vec![0.9, 0.1]]],
            gamma_params: vec![],
            time_mix: vec![vec![0.5, 0.5]],
        };
        let priors = priors_from_matrices(&matrices, &[4], 1, 50.0, 1e-3).unwrap();
        assert_eq!(priors.cat[0][0].len(), 4);
        assert_eq!(priors.cat[0][0][2], 0.5);
        assert_eq!(priors.cat[0][0][3], 0.5);
        assert!(priors.cat[0][1][1] >= 1e-3);
    }

    #[test]
    fn extend_matrices_keeps_rows_stochastic() {
        let matrices = ComponentMatrices {
            k: 4,
            cat_dists: vec![vec![vec![0.25, 0.75]; 4]],
            gamma_params: vec![],
            time_mix: vec![vec![0.25; 4]],
        };
        let out = extend_matrices(&matrices, &[5], 200.0).unwrap();
        for row in &out.cat_dists[0] {
            assert_eq!(row.len(), 5);
            assert!(crate::types::is_row_stochastic(row));
            // New units carry only the reserved smoothing mass.
            assert!(row[4] < 0.002, "new unit mass {}", row[4]);
        }
        let noop = extend_matrices(&matrices, &[2], 200.0).unwrap();
        assert_eq!(noop, matrices);
    }

    fn positive_values() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..50.0, 3..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gamma_fit_is_scale_equivariant(xs in positive_values(), c in 0.02f64..50.0) {
            let stats = |vals: &[f64]| GammaStats {
                count: vals.len() as f64,
                sum: vals.iter().sum(),
                sum_logs: vals.iter().map(|x| x.ln()).sum(),
            };
            let base = fit_gamma_shape_rate(stats(&xs), GammaStats::ZERO);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            prop_assume!(base.shape < GAMMA_SHAPE_MAX * 0.99);
            let scaled_vals: Vec<f64> = xs.iter().map(|&x| x * c).collect();
            let scaled = fit_gamma_shape_rate(stats(&scaled_vals), GammaStats::ZERO).unwrap();
            prop_assert!(((scaled.shape - base.shape) / base.shape).abs() < 1e-6);
            prop_assert!(((scaled.rate - base.rate / c) / (base.rate / c)).abs() < 1e-6);
        }

        #[test]
        fn sweeps_preserve_count_consistency(seed in 0u64..500, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events: Vec<(f64, u32, Vec<f64>)> = (0..n)
                .map(|i| {
                    let t = (i as f64 + 0.5) / n as f64 * 4.0;
                    (t, rng.random_range(0..3), vec![0.1 + rng.random::<f64>() * 5.0])
                })
                .collect();
            let w = window_from(events, 4.0, 1.0);
            let priors = initial_priors(&schema(3, 1), 3, 4).unwrap();
            let mut state = GibbsState::init(&w, &priors, &mut rng).unwrap();
            for _ in 0..3 {
                gibbs_sweep(&w, &mut state, &priors, &mut rng).unwrap();
            }
            prop_assert!(state.counts_consistent(&w));
            prop_assert_eq!(
                state.component_totals.iter().sum::<f64>() as usize,
                w.events.len()
            );
        }

        #[test]
        fn posterior_rows_are_stochastic(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events: Vec<(f64, u32, Vec<f64>)> = (0..25)
                .map(|i| {
                    let t = (i as f64 + 0.5) / 25.0 * 3.0;
                    (t, rng.random_range(0..4), vec![0.2 + rng.random::<f64>() * 2.0])
                })
                .collect();
            let w = window_from(events, 3.0, 1.0);
            let priors = initial_priors(&schema(4, 1), 2, 3).unwrap();
            let cfg = ModelConfig { burn_in: 2, samples: 2, ..ModelConfig::default() };
            let dec = decompose(&w, &priors, &cfg, seed).unwrap();
            for rows in &dec.matrices.cat_dists {
                for row in rows {
                    prop_assert!(crate::types::is_row_stochastic(row));
                }
            }
            for row in &dec.matrices.time_mix {
                prop_assert!(crate::types::is_row_stochastic(row));
            }
        }
    }
}
