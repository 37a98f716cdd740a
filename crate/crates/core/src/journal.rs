//! Run-directory logs and offline replay.
//!
//! A run directory holds `events.jsonl` (one [`WalkEvent`] per line),
//! `snapshots/` with the raw collector bodies plus `snapshots/log.jsonl`,
//! and `run.json`. The snapshot log records, in the order the aggregator
//! applied them, every snapshot, sample tick and interval change, each
//! tagged with the seq of the last walk event applied before it. Replaying
//! both logs through a fresh [`Aggregator`] rebuilds the same state.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{self, AggregationError, Aggregator, CoverageSource};
use crate::formats::FormatError;
use crate::model::ModelSuite;
use crate::walker::WalkEvent;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_LOG: &str = "log.jsonl";
pub const RUN_META_FILE: &str = "run.json";
pub const SUITE_FILE: &str = "suite.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_HTML: &str = "report.html";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Snapshot {
        t_ms: u64,
        after_seq: Option<u64>,
        source: CoverageSource,
        collector: String,
        /// Raw body, relative to the log's directory.
        file: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content_type: Option<String>,
    },
    Sample {
        t_ms: u64,
        after_seq: Option<u64>,
    },
    Interval {
        t_ms: u64,
        after_seq: Option<u64>,
        seconds: f64,
    },
}

impl JournalEntry {
    pub fn after_seq(&self) -> Option<u64> {
        match self {
            JournalEntry::Snapshot { after_seq, .. }
            | JournalEntry::Sample { after_seq, .. }
            | JournalEntry::Interval { after_seq, .. } => *after_seq,
        }
    }
}

/// Parameters of a run that are not in the logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub stop: String,
    pub refresh_interval_s: f64,
    pub suite_file: String,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    BadLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("snapshot {file}: {source}")]
    Payload { file: String, source: FormatError },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReplayError + '_ {
    move |source| ReplayError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReplayError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReplayError::BadLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<WalkEvent>, ReplayError> {
    read_jsonl(path)
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, ReplayError> {
    read_jsonl(path)
}

pub fn read_run_meta(path: &Path) -> Result<RunMeta, ReplayError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ReplayError::BadLine {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Sample ticks at every multiple of the interval up to the last event,
/// plus one after it, for logs recorded without a snapshot log.
pub fn synthesize_samples(events: &[WalkEvent], interval_s: f64) -> Vec<JournalEntry> {
    let step = ((interval_s * 1000.0).round() as u64).max(1);
    let mut out = Vec::new();
    let mut next = 0u64;
    let mut last_seq = None;
    for ev in events {
        while next < ev.t_ms {
            out.push(JournalEntry::Sample {
                t_ms: next,
                after_seq: last_seq,
            });
            next += step;
        }
        last_seq = Some(ev.seq);
    }
    let end = events.last().map_or(0, |e| e.t_ms);
    out.push(JournalEntry::Sample {
        t_ms: end,
        after_seq: last_seq,
    });
    out
}

/// Applies one journal entry; `load` returns the raw body for a file name.
pub fn apply_entry(
    agg: &mut Aggregator,
    entry: &JournalEntry,
    load: &mut dyn FnMut(&str) -> io::Result<String>,
) -> Result<(), ReplayError> {
    match entry {
        JournalEntry::Snapshot {
            t_ms,
            source,
            collector,
            file,
            content_type,
            ..
        } => {
            let body = load(file).map_err(|source| ReplayError::Io {
                path: file.into(),
                source,
            })?;
            let snap = aggregation::snapshot_from_payload(*source, collector, *t_ms, content_type.as_deref(), &body)
                .map_err(|source| ReplayError::Payload {
                    file: file.clone(),
                    source,
                })?;
            agg.ingest_snapshot(&snap);
        }
        JournalEntry::Sample { t_ms, .. } => {
            agg.sample_metrics(*t_ms);
        }
        JournalEntry::Interval { seconds, .. } => agg.set_refresh_interval(*seconds)?,
    }
    Ok(())
}

/// Interleaves journal entries after the events they followed live and
/// feeds both through a fresh aggregator.
pub fn replay(
    suite: &ModelSuite,
    refresh_interval_s: f64,
    events: &[WalkEvent],
    journal: &[JournalEntry],
    mut load: impl FnMut(&str) -> io::Result<String>,
) -> Result<Aggregator, ReplayError> {
    let mut agg = Aggregator::new(suite);
    agg.set_refresh_interval(refresh_interval_s)?;
    let mut pending = journal.iter().peekable();
    let mut drain = |agg: &mut Aggregator,
                     upto: Option<u64>,
                     pending: &mut std::iter::Peekable<std::slice::Iter<'_, JournalEntry>>| {
        while let Some(entry) = pending.peek() {
            if entry.after_seq() > upto {
                break;
            }
            apply_entry(agg, entry, &mut load)?;
            pending.next();
        }
        Ok::<_, ReplayError>(())
    };
    drain(&mut agg, None, &mut pending)?;
    for ev in events {
        agg.ingest_walk_event(ev)?;
        drain(&mut agg, Some(ev.seq), &mut pending)?;
    }
    // Entries tagged past the last event (a truncated log) still apply.
    for entry in pending {
        apply_entry(&mut agg, entry, &mut load)?;
    }
    Ok(agg)
}

/// Replays a run directory. `snapshot_log` defaults to the directory's own
/// log when present; without one, samples are synthesized.
pub fn replay_dir(
    suite: &ModelSuite,
    refresh_interval_s: f64,
    events_path: &Path,
    snapshot_log: Option<&Path>,
) -> Result<Aggregator, ReplayError> {
    let events = read_events(events_path)?;
    let default_log = events_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(SNAPSHOT_DIR)
        .join(SNAPSHOT_LOG);
    let log_path = match snapshot_log {
        Some(p) => Some(p.to_path_buf()),
        None => default_log.exists().then_some(default_log),
    };
    match log_path {
        Some(log) => {
            let journal = read_journal(&log)?;
            let base = log.parent().unwrap_or(Path::new(".")).to_path_buf();
            replay(suite, refresh_interval_s, &events, &journal, |f| {
                fs::read_to_string(base.join(f))
            })
        }
        None => {
            let journal = synthesize_samples(&events, refresh_interval_s);
            replay(suite, refresh_interval_s, &events, &journal, |f| {
                Err(io::Error::new(io::ErrorKind::NotFound, f.to_string()))
            })
        }
    }
}
