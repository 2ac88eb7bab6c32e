//! Experiment grids: frame size x QBER x latency, with parallel sessions.
//!
//! Output files, written to the results directory:
//!
//! - `frames.csv`: one row per reconciled (or aborted) frame, columns listed in [`FRAME_COLUMNS`].
//! - `cells.csv`: one row per grid cell, columns of [`CellSummary`].
//! - `results.json`: `{"config": ..., "cells": [...]}`.
//!
//! Config files are TOML:
//!
//! ```toml
//! frame_sizes = [1000000]
//! qbers = [0.01, 0.05]
//! schedule = "original"        # or "high-eff"
//! latencies_ms = [0.0, 1.0]
//! sessions = 1
//! frames = 100
//! seed = 1
//! ```

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel_sim::{generate_pair, ChannelConfig};
use crate::error::{Error, Result};
use crate::harness::metrics::SessionMetrics;
use crate::harness::simulate::{simulate, SimOptions};
use crate::protocol::schedule::ScheduleVariant;
use crate::protocol::session::Outcome;

fn default_sessions() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub frame_sizes: Vec<usize>,
    pub qbers: Vec<f64>,
    pub schedule: ScheduleVariant,
    pub latencies_ms: Vec<f64>,
    #[serde(default = "default_sessions")]
    pub sessions: usize,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Check every flip against the generated pair.
    #[serde(default = "default_true")]
    pub check_flips: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::contract(format!("bad experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_sizes.is_empty() || self.qbers.is_empty() || self.latencies_ms.is_empty() {
            return Err(Error::contract("frame_sizes, qbers and latencies_ms must be non-empty"));
        }
        if self.frames == 0 || self.sessions == 0 {
            return Err(Error::contract("frames and sessions must be at least 1"));
        }
        if let Some(q) = self.qbers.iter().find(|q| !(**q > 0.0 && **q <= 0.5)) {
            return Err(Error::contract(format!("qber {q} outside (0, 0.5]")));
        }
        if let Some(l) = self.latencies_ms.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::contract(format!("latency {l} ms is invalid")));
        }
        if let Some(n) = self.frame_sizes.iter().find(|n| **n < 2) {
            return Err(Error::contract(format!("frame size {n} is below 2 bits")));
        }
        Ok(())
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub qber: f64,
    pub latency_ms: f64,
    pub schedule: ScheduleVariant,
    pub sessions: usize,
}

/// Row of `frames.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub n: usize,
    pub qber: f64,
    pub latency_ms: f64,
    pub schedule: ScheduleVariant,
    pub session: usize,
    pub frame: usize,
    pub seed: u64,
    /// Empty when the session completed.
    pub error: String,
    /// The session ended because the two parties' states diverged.
    pub corruption: bool,
    pub metrics: Option<SessionMetrics>,
}

/// Columns of `frames.csv`. Metric columns are empty for aborted frames.
pub const FRAME_COLUMNS: [&str; 26] = [
    "n",
    "qber",
    "latency_ms",
    "schedule",
    "session",
    "frame",
    "seed",
    "error",
    "qber_true",
    "leaked_bits",
    "round_trips",
    "parity_exchanges",
    "search_round_trips",
    "lookback_exchanges",
    "nominal_round_trips",
    "messages",
    "bytes",
    "flips",
    "wrong_flips",
    "wall_time_s",
    "compute_time_s",
    "comm_time_s",
    "outcome",
    "efficiency",
    "throughput_bps",
    "state_bytes",
];

impl FrameRecord {
    fn csv_fields(&self) -> Vec<String> {
        let mut row = vec![
            self.n.to_string(),
            self.qber.to_string(),
            self.latency_ms.to_string(),
            self.schedule.to_string(),
            self.session.to_string(),
            self.frame.to_string(),
            self.seed.to_string(),
            self.error.clone(),
        ];
        match &self.metrics {
            Some(m) => row.extend([
                m.qber_true.to_string(),
                m.leaked_bits.to_string(),
                m.round_trips.to_string(),
                m.parity_exchanges.to_string(),
                m.search_round_trips.to_string(),
                m.lookback_exchanges.to_string(),
                m.nominal_round_trips.to_string(),
                m.messages.to_string(),
                m.bytes.to_string(),
                m.flips.to_string(),
                m.wrong_flips.to_string(),
                m.wall_time_s.to_string(),
                m.compute_time_s.to_string(),
                m.comm_time_s.to_string(),
                match m.outcome {
                    Outcome::Corrected => "corrected".to_string(),
                    Outcome::FrameFailed => "frame-failed".to_string(),
                },
                m.efficiency.to_string(),
                m.throughput_bps.to_string(),
                m.state_bytes.to_string(),
            ]),
            None => row.resize(FRAME_COLUMNS.len(), String::new()),
        }
        row
    }
}

/// Row of `cells.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub qber: f64,
    pub latency_ms: f64,
    pub schedule: ScheduleVariant,
    pub sessions: usize,
    pub frames: usize,
    pub aborted: usize,
    pub corrupted: usize,
    pub failed: usize,
    pub fer: f64,
    pub mean_efficiency: f64,
    pub mean_leaked_bits: f64,
    pub mean_round_trips: f64,
    pub mean_nominal_round_trips: f64,
    pub mean_lookback_exchanges: f64,
    pub mean_wall_time_s: f64,
    pub mean_compute_time_s: f64,
    pub mean_comm_time_s: f64,
    /// Mean of per-session `n / wall time`.
    pub mean_throughput_bps: f64,
    /// All frame bits reconciled by the cell divided by its elapsed time.
    pub aggregate_throughput_bps: f64,
    pub max_state_bytes: usize,
    pub wrong_flips: usize,
}

/// Seed of frame `frame` of a cell, derived from the run seed and the cell's position.
pub fn frame_seed(seed: u64, cell: usize, frame: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((cell as u64) << 40)
        ^ (frame as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Runs `frames` frames of one cell over `cell.sessions` concurrent sessions.
/// Frame `f` goes to session `f % sessions`. Aborted frames are recorded, not fatal.
pub fn run_cell(cell: &Cell, frames: usize, seed: u64, cell_index: usize, check_flips: bool) -> (Vec<FrameRecord>, CellSummary) {
    let sessions = cell.sessions.max(1);
    let started = Instant::now();
    let mut records: Vec<FrameRecord> = std::thread::scope(|s| {
        let workers: Vec<_> = (0..sessions)
            .map(|worker| {
                s.spawn(move || {
                    (worker..frames)
                        .step_by(sessions)
                        .map(|f| run_frame(cell, worker, f, frame_seed(seed, cell_index, f), check_flips))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("session worker panicked"))
            .collect()
    });
    let elapsed = started.elapsed();
    records.sort_by_key(|r| r.frame);
    let summary = summarize(cell, &records, elapsed);
    (records, summary)
}

fn run_frame(cell: &Cell, worker: usize, frame: usize, seed: u64, check_flips: bool) -> FrameRecord {
    let mut record = FrameRecord {
        n: cell.n,
        qber: cell.qber,
        latency_ms: cell.latency_ms,
        schedule: cell.schedule,
        session: worker,
        frame,
        seed,
        error: String::new(),
        corruption: false,
        metrics: None,
    };
    let result = generate_pair(&ChannelConfig::new(cell.n, cell.qber, seed)).and_then(|pair| {
        let opts = SimOptions {
            one_way_latency: Duration::from_secs_f64(cell.latency_ms / 1e3),
            session_seed: (seed as u128) << 64 | frame as u128,
            session_id: worker as u16,
            check_flips,
            ..SimOptions::new(cell.qber, cell.schedule)
        };
        simulate(&pair, &opts)
    });
    match result {
        Ok(run) => record.metrics = Some(run.metrics),
        Err(e) => {
            record.corruption = matches!(e, Error::ProtocolCorruption(_));
            record.error = e.to_string();
        }
    }
    record
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

pub fn summarize(cell: &Cell, records: &[FrameRecord], elapsed: Duration) -> CellSummary {
    let done: Vec<&SessionMetrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let aborted = records.len() - done.len();
    let failed = done.iter().filter(|m| m.outcome == Outcome::FrameFailed).count();
    let m = |f: fn(&SessionMetrics) -> f64| mean(done.iter().map(|x| f(x)));
    CellSummary {
        n: cell.n,
        qber: cell.qber,
        latency_ms: cell.latency_ms,
        schedule: cell.schedule,
        sessions: cell.sessions,
        frames: records.len(),
        aborted,
        corrupted: records.iter().filter(|r| r.corruption).count(),
        failed,
        fer: if records.is_empty() {
            0.0
        } else {
            (failed + aborted) as f64 / records.len() as f64
        },
        mean_efficiency: m(|x| x.efficiency),
        mean_leaked_bits: m(|x| x.leaked_bits as f64),
        mean_round_trips: m(|x| x.round_trips as f64),
        mean_nominal_round_trips: m(|x| x.nominal_round_trips as f64),
        mean_lookback_exchanges: m(|x| x.lookback_exchanges as f64),
        mean_wall_time_s: m(|x| x.wall_time_s),
        mean_compute_time_s: m(|x| x.compute_time_s),
        mean_comm_time_s: m(|x| x.comm_time_s),
        mean_throughput_bps: m(|x| x.throughput_bps),
        aggregate_throughput_bps: done.iter().map(|x| x.n as f64).sum::<f64>() / elapsed.as_secs_f64().max(1e-9),
        max_state_bytes: done.iter().map(|x| x.state_bytes).max().unwrap_or(0),
        wrong_flips: done.iter().map(|x| x.wrong_flips).sum(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    #[serde(skip)]
    pub frames: Vec<FrameRecord>,
}

impl ExperimentReport {
    /// Writes `frames.csv`, `cells.csv` and `results.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("frames.csv")).map_err(csv_error)?;
        w.write_record(FRAME_COLUMNS).map_err(csv_error)?;
        for f in &self.frames {
            w.write_record(f.csv_fields()).map_err(csv_error)?;
        }
        w.flush()?;
        write_csv(&dir.join("cells.csv"), &self.cells)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::contract(e.to_string()))?;
        fs::write(dir.join("results.json"), json)?;
        Ok(())
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::contract(format!("csv: {other:?}")),
    }
}

/// Runs every cell of the grid in order: frame sizes, then QBERs, then latencies.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut frames = Vec::new();
    let mut index = 0;
    for &n in &cfg.frame_sizes {
        for &qber in &cfg.qbers {
            for &latency_ms in &cfg.latencies_ms {
                let cell = Cell {
                    n,
                    qber,
                    latency_ms,
                    schedule: cfg.schedule,
                    sessions: cfg.sessions,
                };
                let (records, summary) = run_cell(&cell, cfg.frames, cfg.seed, index, cfg.check_flips);
                frames.extend(records);
                cells.push(summary);
                index += 1;
            }
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        cells,
        frames,
    })
}

/// Published efficiencies of the original schedule with block-registry look-back.
pub const TARGET_EFFICIENCY: [(f64, f64); 5] = [(0.01, 0.989), (0.03, 0.960), (0.05, 0.9231), (0.10, 0.7839), (0.15, 0.5597)];

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub qber: f64,
    pub schedule: ScheduleVariant,
    pub frames: usize,
    pub efficiency: f64,
    /// Published value for this row, if there is one.
    pub target: Option<f64>,
    pub fer: f64,
    pub mean_round_trips: f64,
    pub mean_lookback_exchanges: f64,
}

/// Efficiency table over QBER 1, 3, 5, 10 and 15 % with the original schedule,
/// optionally followed by high-efficiency rows at 1 % and 5 %.
pub fn table_one(frames: usize, n: usize, seed: u64, with_high_efficiency: bool) -> Result<Vec<TableRow>> {
    if frames == 0 || n < 2 {
        return Err(Error::contract("need at least one frame of at least 2 bits"));
    }
    let mut rows = Vec::new();
    let mut plan: Vec<(f64, ScheduleVariant, Option<f64>)> = TARGET_EFFICIENCY
        .iter()
        .map(|&(q, a)| (q, ScheduleVariant::Original, Some(a)))
        .collect();
    if with_high_efficiency {
        plan.push((0.01, ScheduleVariant::HighEfficiency, Some(0.9907)));
        plan.push((0.05, ScheduleVariant::HighEfficiency, Some(0.9465)));
    }
    for (i, (qber, schedule, target)) in plan.into_iter().enumerate() {
        let cell = Cell {
            n,
            qber,
            latency_ms: 0.0,
            schedule,
            sessions: 1,
        };
        let (_, s) = run_cell(&cell, frames, seed, i, true);
        rows.push(TableRow {
            qber,
            schedule,
            frames,
            efficiency: s.mean_efficiency,
            target,
            fer: s.fer,
            mean_round_trips: s.mean_round_trips,
            mean_lookback_exchanges: s.mean_lookback_exchanges,
        });
    }
    Ok(rows)
}
