//! File-to-file orchestration: parse a delimited log, window it, stream the
//! windows through the engine, and write scores plus run metadata. Also owns
//! the snapshot format used to stop a stream and resume it later.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::engine::{EngineState, StreamEngine};
use crate::ingest::{
    resolve_bindings, schema_from_config, Dictionaries, ParseStats, RowParser, WindowLabel,
    Windower,
};
use crate::types::{ScoredWindow, Window};
use crate::{Error, Result};

/// Bump when the snapshot layout changes incompatibly.
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Upper edges of the per-window latency histogram, in milliseconds. An
/// implicit overflow bucket catches everything beyond the last edge.
pub const LATENCY_EDGES_MS: [f64; 11] =
    [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];

/// Everything needed to resume a stream: engine state, the dictionaries that
/// map raw values to unit indices, the window grid origin, and the config the
/// run was started with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub config: Config,
    pub engine: EngineState,
    pub dictionaries: Vec<Vec<String>>,
    /// Epoch of window 0; None when the stream never produced an event.
    pub origin: Option<f64>,
}

impl Snapshot {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Snapshot(format!("cannot read snapshot {}: {e}", path.display()))
        })?;
        let snap: Snapshot = serde_json::from_str(&text)
            .map_err(|e| Error::Snapshot(format!("cannot decode snapshot: {e}")))?;
        if snap.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::Snapshot(format!(
                "snapshot format {} is not supported (expected {})",
                snap.format_version, SNAPSHOT_FORMAT_VERSION
            )));
        }
        Ok(snap)
    }

    /// Writes the snapshot through a temp file so an interrupted write never
    /// leaves a truncated snapshot behind.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Inputs of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Config,
    pub input: PathBuf,
    pub output: PathBuf,
    /// Resume from this snapshot instead of starting fresh.
    pub snapshot_in: Option<PathBuf>,
    /// Where to write snapshots (final, plus periodic per io.snapshot_every).
    pub snapshot_out: Option<PathBuf>,
}

/// One histogram bucket; `le_ms = None` is the overflow bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBucket {
    pub le_ms: Option<f64>,
    pub count: u64,
}

/// Run metadata written next to the score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: Config,
    pub input: String,
    pub parse: ParseStats,
    /// Windows the engine has seen over the stream's whole life.
    pub windows_total: u64,
    /// Windows processed (and score rows written) by this run.
    pub windows_this_run: u64,
    pub events_this_run: u64,
    pub regimes: usize,
    pub switches: usize,
    pub elapsed_seconds: f64,
    pub window_latency: Vec<LatencyBucket>,
    pub max_window_latency_ms: f64,
}

/// Numbers the CLI prints after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub parse: ParseStats,
    pub windows_total: u64,
    pub windows_this_run: u64,
    pub events_this_run: u64,
    pub regimes: usize,
    pub switches: usize,
    pub elapsed_seconds: f64,
    pub meta_path: PathBuf,
    pub labels_path: Option<PathBuf>,
}

struct LatencyHistogram {
    counts: [u64; LATENCY_EDGES_MS.len() + 1],
    max_ms: f64,
}

impl LatencyHistogram {
    fn new() -> Self {
        Self { counts: [0; LATENCY_EDGES_MS.len() + 1], max_ms: 0.0 }
    }

    fn record(&mut self, ms: f64) {
        let slot = LATENCY_EDGES_MS
            .iter()
            .position(|&edge| ms <= edge)
            .unwrap_or(LATENCY_EDGES_MS.len());
        self.counts[slot] += 1;
        if ms > self.max_ms {
            self.max_ms = ms;
        }
    }

    fn buckets(&self) -> Vec<LatencyBucket> {
        let mut out: Vec<LatencyBucket> = LATENCY_EDGES_MS
            .iter()
            .zip(&self.counts)
            .map(|(&edge, &count)| LatencyBucket { le_ms: Some(edge), count })
            .collect();
        out.push(LatencyBucket { le_ms: None, count: self.counts[LATENCY_EDGES_MS.len()] });
        out
    }
}

fn ensure_resumable(snapshot: &Config, current: &Config) -> Result<()> {
    // Output handling may change between runs; everything that shapes the
    // model or the window grid must not.
    if snapshot.stream != current.stream {
        return Err(Error::Snapshot("stream settings differ from the snapshot's".into()));
    }
    if snapshot.schema != current.schema {
        return Err(Error::Snapshot("schema settings differ from the snapshot's".into()));
    }
    if snapshot.model != current.model {
        return Err(Error::Snapshot("model settings differ from the snapshot's".into()));
    }
    Ok(())
}

fn score_line(s: &ScoredWindow) -> String {
    let regime = s.chosen_regime_id.map(|id| id.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{}\n",
        s.window_index,
        s.start_time,
        regime,
        u8::from(s.is_new_regime),
        s.delta_model_cost,
        s.data_cost,
        s.anomaly_score
    )
}

/// Default sibling path for per-window label tallies.
pub fn default_labels_path(output: &Path) -> PathBuf {
    output.with_extension("labels.csv")
}

/// Sibling path for run metadata.
pub fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Streams `input` through the engine and writes scores to `output`, one row
/// per window in arrival order. Returns counters for reporting.
///
/// With a snapshot the run resumes: rows are re-parsed to rebuild the window
/// grid and dictionaries, windows the engine already processed are skipped,
/// and only the remaining windows are scored and written. The remaining rows
/// come out byte-identical to the tail of an uninterrupted run.
pub fn run(opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    opts.config.validate()?;
    let snapshot = match &opts.snapshot_in {
        Some(path) => {
            let snap = Snapshot::from_path(path)?;
            ensure_resumable(&snap.config, &opts.config)?;
            Some(snap)
        }
        None => None,
    };

    let schema = schema_from_config(&opts.config.schema)?;
    let n_ticks = opts.config.n_ticks();
    let mut engine = match &snapshot {
        Some(snap) => StreamEngine::from_state(
            schema,
            n_ticks,
            opts.config.model.clone(),
            opts.config.model.seed,
            snap.engine.clone(),
        )?,
        None => {
            StreamEngine::new(schema, n_ticks, opts.config.model.clone(), opts.config.model.seed)?
        }
    };
    let skip_before = engine.summary().windows_processed;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.config.schema.delimiter.as_bytes()[0])
        .flexible(true)
        .from_path(&opts.input)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", opts.input.display())))?;
    let bindings = resolve_bindings(reader.headers()?, &opts.config.schema)?;
    let mut parser = RowParser::new(bindings, &opts.config.schema);
    if let Some(snap) = &snapshot {
        parser = parser.with_dictionaries(Dictionaries::from_lists(snap.dictionaries.clone())?)?;
    }

    let origin = opts
        .config
        .stream
        .start_time
        .or_else(|| snapshot.as_ref().and_then(|s| s.origin));
    let mut windower =
        Windower::new(opts.config.stream.tau, opts.config.stream.tick_seconds, origin)?;

    let mut scores = BufWriter::new(File::create(&opts.output)?);
    scores.write_all(
        b"window_index,start_time,chosen_regime_id,is_new_regime,delta_model_cost,data_cost,anomaly_score\n",
    )?;
    let labels_path = if opts.config.schema.label.is_some() {
        Some(
            opts.config
                .io
                .labels_output
                .as_ref()
                .map(PathBuf::from)
                .unwrap_or_else(|| default_labels_path(&opts.output)),
        )
    } else {
        None
    };
    let mut labels = match &labels_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(b"window_index,events,attack_events\n")?;
            Some(w)
        }
        None => None,
    };

    let mut latency = LatencyHistogram::new();
    let mut windows_this_run = 0u64;
    let mut events_this_run = 0u64;
    let snapshot_every = opts.config.io.snapshot_every;

    let mut handle = |window: Window,
                      label: WindowLabel,
                      engine: &mut StreamEngine,
                      windower: &Windower,
                      parser: &RowParser,
                      scores: &mut BufWriter<File>,
                      labels: &mut Option<BufWriter<File>>,
                      latency: &mut LatencyHistogram|
     -> Result<()> {
        if window.window_index < skip_before {
            return Ok(());
        }
        let t0 = Instant::now();
        let scored = engine.process_window(&window)?;
        latency.record(t0.elapsed().as_secs_f64() * 1e3);
        scores.write_all(score_line(&scored).as_bytes())?;
        if let Some(w) = labels {
            writeln!(w, "{},{},{}", label.window_index, label.events, label.attack_events)?;
        }
        windows_this_run += 1;
        events_this_run += window.events.len() as u64;
        if snapshot_every > 0 && (window.window_index + 1).is_multiple_of(snapshot_every) {
            if let Some(path) = &opts.snapshot_out {
                write_snapshot(path, &opts.config, engine, parser, windower)?;
            }
        }
        Ok(())
    };

    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let Some(parsed) = parser.parse(&record) else { continue };
        for (window, label) in windower.push(parsed.event, parsed.is_attack)? {
            handle(
                window,
                label,
                &mut engine,
                &windower,
                &parser,
                &mut scores,
                &mut labels,
                &mut latency,
            )?;
        }
    }
    if let Some((window, label)) = windower.finish()? {
        handle(
            window,
            label,
            &mut engine,
            &windower,
            &parser,
            &mut scores,
            &mut labels,
            &mut latency,
        )?;
    }
    scores.flush()?;
    if let Some(w) = &mut labels {
        w.flush()?;
    }

    if let Some(path) = &opts.snapshot_out {
        write_snapshot(path, &opts.config, &engine, &parser, &windower)?;
    }

    let mut parse = parser.stats;
    parse.out_of_order += windower.out_of_order;

    let meta = RunMeta {
        config: opts.config.clone(),
        input: opts.input.display().to_string(),
        parse,
        windows_total: engine.summary().windows_processed,
        windows_this_run,
        events_this_run,
        regimes: engine.summary().regimes.len(),
        switches: engine.summary().switches.len(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        window_latency: latency.buckets(),
        max_window_latency_ms: latency.max_ms,
    };
    let meta_file = meta_path(&opts.output);
    std::fs::write(&meta_file, serde_json::to_string_pretty(&meta)?)?;

    Ok(RunReport {
        parse,
        windows_total: meta.windows_total,
        windows_this_run,
        events_this_run,
        regimes: meta.regimes,
        switches: meta.switches,
        elapsed_seconds: meta.elapsed_seconds,
        meta_path: meta_file,
        labels_path,
    })
}

fn write_snapshot(
    path: &Path,
    config: &Config,
    engine: &StreamEngine,
    parser: &RowParser,
    windower: &Windower,
) -> Result<()> {
    Snapshot {
        format_version: SNAPSHOT_FORMAT_VERSION,
        config: config.clone(),
        engine: engine.export_state(),
        dictionaries: parser.dictionaries.to_lists(),
        origin: windower.origin(),
    }
    .write_to(path)
}
