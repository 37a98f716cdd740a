//! One live run: walker thread, collectors, sample scheduler and the single
//! aggregator writer, plus the HTTP API over them.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use mbtcover_core::aggregation::{AggregationError, Aggregator, CoverageSource, MetricPoint};
use mbtcover_core::journal::{
    JournalEntry, RunMeta, EVENTS_FILE, REPORT_HTML, REPORT_JSON, RUN_META_FILE, SNAPSHOT_DIR, SNAPSHOT_LOG, SUITE_FILE,
};
use mbtcover_core::model::{suite_stats, ModelSuite, SuiteStats};
use mbtcover_core::report::RunReport;
use mbtcover_core::sim::{SimAdapter, SimConfig, SimHandle};
use mbtcover_core::walker::{
    execute_walk_with_clock, Adapter, EventKind, FnSink, RunStatus, StopCondition, WalkError, WalkEvent, WalkOutcome,
    WallClock,
};
use parking_lot::RwLock;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::api;
use crate::collector::{poll_once, run_http_poll_collector, CollectorStats, HttpCollector, Polled};
use crate::http_adapter::HttpAdapter;
use crate::sim_server::{sim_serve, SimServer};

const STREAM_CAPACITY: usize = 4096;

#[derive(Debug, Clone)]
pub enum AdapterChoice {
    /// In-process simulated SUT, also served over HTTP for the collectors.
    Sim,
    /// A SUT exposing `POST /sim/action` at this base URL.
    Http { sut_url: String },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub suite: ModelSuite,
    pub stop: StopCondition,
    pub seed: u64,
    pub refresh_interval_s: f64,
    /// Collector poll period; defaults to the refresh interval.
    pub poll_interval: Option<Duration>,
    pub adapter: AdapterChoice,
    pub sim_config: Option<SimConfig>,
    pub fe_collector: Option<String>,
    pub be_collector: Option<String>,
    pub out_dir: PathBuf,
    pub host: String,
    pub port: u16,
    /// Pause before each adapter action.
    pub step_delay: Duration,
}

impl RunConfig {
    pub fn new(suite: ModelSuite, stop: StopCondition, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            suite,
            stop,
            seed: 0,
            refresh_interval_s: mbtcover_core::aggregation::DEFAULT_REFRESH_INTERVAL_S,
            poll_interval: None,
            adapter: AdapterChoice::Sim,
            sim_config: None,
            fe_collector: None,
            be_collector: None,
            out_dir: out_dir.into(),
            host: "127.0.0.1".into(),
            port: 0,
            step_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn io_ctx(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// One server-sent event.
#[derive(Debug, Clone)]
pub struct StreamMsg {
    pub event: &'static str,
    pub data: String,
}

/// Fixed facts about the run.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub seed: u64,
    pub stop: String,
    pub suite: SuiteStats,
    pub run_dir: PathBuf,
    pub adapter: String,
}

/// Writer commands. Everything that changes the aggregator goes through
/// one queue, in order.
pub enum Input {
    Event(WalkEvent),
    Snapshot(Polled),
    Sample(u64),
    Interval {
        seconds: f64,
        reply: oneshot::Sender<Result<(), AggregationError>>,
    },
    Flush(oneshot::Sender<()>),
    Finish(oneshot::Sender<()>),
}

pub struct RunShared {
    pub agg: RwLock<Aggregator>,
    pub info: RunInfo,
    pub stream: broadcast::Sender<StreamMsg>,
    pub inputs: mpsc::UnboundedSender<Input>,
    pub interval_tx: watch::Sender<f64>,
    origin: OnceLock<Instant>,
    finished: watch::Sender<bool>,
}

impl RunShared {
    /// Milliseconds since the walk started; 0 before that.
    pub fn now_ms(&self) -> u64 {
        self.origin.get().map_or(0, |o| o.elapsed().as_millis() as u64)
    }

    pub fn is_finished(&self) -> bool {
        *self.finished.borrow()
    }

    pub fn status_json(&self) -> serde_json::Value {
        let agg = self.agg.read();
        json!({
            "status": agg.phase().as_str(),
            "seed": self.info.seed,
            "stop": self.info.stop,
            "adapter": self.info.adapter,
            "suite": self.info.suite,
            "run_dir": self.info.run_dir,
            "refresh_interval_s": agg.refresh_interval_s(),
            "elapsed_ms": self.now_ms(),
            "events": agg.events_seen(),
            "last_seq": agg.last_seq(),
            "current_page": agg.current_page(),
            "model_coverage": agg.model_stats(),
            "finished": self.is_finished(),
        })
    }

    fn broadcast(&self, event: &'static str, data: impl Serialize) {
        let data = serde_json::to_string(&data).expect("stream payload serializes");
        let _ = self.stream.send(StreamMsg { event, data });
    }

    fn broadcast_points(&self, t_ms: u64, points: &[MetricPoint]) {
        if !points.is_empty() {
            self.broadcast("metric", json!({ "t_ms": t_ms, "points": points }));
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportPaths {
    pub json_path: PathBuf,
    pub html_path: PathBuf,
}

/// Writes `report.json` and `report.html` from the current state.
pub fn export_report(shared: &RunShared) -> Result<(RunReport, ExportPaths), RunError> {
    let report = {
        let agg = shared.agg.read();
        RunReport::build(&agg, shared.info.suite, shared.info.seed, &shared.info.stop)
    };
    let paths = ExportPaths {
        json_path: shared.info.run_dir.join(REPORT_JSON),
        html_path: shared.info.run_dir.join(REPORT_HTML),
    };
    write_atomic(&paths.json_path, report.to_canonical_json().as_bytes())?;
    write_atomic(&paths.html_path, report.render_html().as_bytes())?;
    Ok((report, paths))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_ctx(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_ctx(format!("writing {}", path.display())))
}

struct Journal {
    events: BufWriter<File>,
    log: BufWriter<File>,
    snapshot_dir: PathBuf,
    next_snapshot: u64,
}

impl Journal {
    fn create(run_dir: &Path) -> Result<Self, RunError> {
        let snapshot_dir = run_dir.join(SNAPSHOT_DIR);
        fs::create_dir_all(&snapshot_dir).map_err(io_ctx(format!("creating {}", snapshot_dir.display())))?;
        let open = |p: PathBuf| {
            File::create(&p)
                .map(BufWriter::new)
                .map_err(io_ctx(format!("creating {}", p.display())))
        };
        Ok(Journal {
            events: open(run_dir.join(EVENTS_FILE))?,
            log: open(snapshot_dir.join(SNAPSHOT_LOG))?,
            snapshot_dir,
            next_snapshot: 1,
        })
    }

    fn line(w: &mut BufWriter<File>, value: &impl Serialize) -> io::Result<()> {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")
    }

    fn store_body(&mut self, polled: &Polled) -> io::Result<String> {
        let ext = match (polled.snapshot.source, polled.content_type.as_deref()) {
            (CoverageSource::Frontend, _) => "json",
            (_, Some(ct)) if ct.starts_with("text/plain") => "info",
            _ => "xml",
        };
        let name = format!("{:06}.{ext}", self.next_snapshot);
        self.next_snapshot += 1;
        fs::write(self.snapshot_dir.join(&name), &polled.body)?;
        Ok(name)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.events.flush()?;
        self.log.flush()
    }
}

async fn writer_loop(shared: Arc<RunShared>, mut rx: mpsc::UnboundedReceiver<Input>, mut journal: Journal) {
    while let Some(input) = rx.recv().await {
        if let Err(e) = apply_input(&shared, &mut journal, input) {
            tracing::error!(error = %e, "journal write failed");
        }
    }
    let _ = journal.flush();
}

fn apply_input(shared: &RunShared, journal: &mut Journal, input: Input) -> io::Result<()> {
    match input {
        Input::Event(ev) => {
            let result = shared.agg.write().ingest_walk_event(&ev);
            match result {
                Ok(points) => {
                    Journal::line(&mut journal.events, &ev)?;
                    shared.broadcast("walk", &ev);
                    match ev.kind {
                        EventKind::Navigation => {
                            shared.broadcast("page", json!({ "seq": ev.seq, "t_ms": ev.t_ms, "page_url": ev.page }));
                        }
                        EventKind::RunStarted => {
                            shared.broadcast("status", json!({ "status": "running", "t_ms": ev.t_ms }));
                        }
                        _ => {}
                    }
                    shared.broadcast_points(ev.t_ms, &points);
                }
                Err(e) => tracing::warn!(seq = ev.seq, error = %e, "walk event rejected"),
            }
        }
        Input::Snapshot(polled) => {
            let file = journal.store_body(&polled)?;
            let after_seq = {
                let mut agg = shared.agg.write();
                agg.ingest_snapshot(&polled.snapshot);
                agg.last_seq()
            };
            let snap = &polled.snapshot;
            Journal::line(
                &mut journal.log,
                &JournalEntry::Snapshot {
                    t_ms: snap.t_ms,
                    after_seq,
                    source: snap.source,
                    collector: snap.collector_id.clone(),
                    file,
                    content_type: polled.content_type.clone(),
                },
            )?;
        }
        Input::Sample(t_ms) => {
            let (points, after_seq) = {
                let mut agg = shared.agg.write();
                (agg.sample_metrics(t_ms), agg.last_seq())
            };
            Journal::line(&mut journal.log, &JournalEntry::Sample { t_ms, after_seq })?;
            let t = points.first().map_or(t_ms, |p| p.t_ms);
            shared.broadcast_points(t, &points);
        }
        Input::Interval { seconds, reply } => {
            let t_ms = shared.now_ms();
            let (result, after_seq) = {
                let mut agg = shared.agg.write();
                (agg.set_refresh_interval(seconds), agg.last_seq())
            };
            if result.is_ok() {
                Journal::line(
                    &mut journal.log,
                    &JournalEntry::Interval {
                        t_ms,
                        after_seq,
                        seconds,
                    },
                )?;
                shared.interval_tx.send_replace(seconds);
            }
            let _ = reply.send(result);
        }
        Input::Flush(reply) => {
            journal.flush()?;
            let _ = reply.send(());
        }
        Input::Finish(reply) => {
            journal.flush()?;
            shared.finished.send_replace(true);
            let phase = shared.agg.read().phase();
            shared.broadcast(
                "status",
                json!({ "status": phase.as_str(), "t_ms": shared.now_ms(), "final": true }),
            );
            let _ = reply.send(());
        }
    }
    Ok(())
}

async fn scheduler(
    inputs: mpsc::UnboundedSender<Input>,
    origin: Instant,
    mut interval_rx: watch::Receiver<f64>,
    mut stop: watch::Receiver<bool>,
) {
    let mut first = true;
    loop {
        let period = Duration::from_secs_f64(*interval_rx.borrow_and_update());
        let start = if first {
            tokio::time::Instant::now()
        } else {
            tokio::time::Instant::now() + period
        };
        first = false;
        let mut ticker = tokio::time::interval_at(start, period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = ticker.tick() => {
                    let _ = inputs.send(Input::Sample(origin.elapsed().as_millis() as u64));
                }
                changed = interval_rx.changed() => {
                    if changed.is_err() {
                        return;
                    }
                    break;
                }
                _ = stop.changed() => return,
            }
        }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub status: RunStatus,
    pub outcome: Option<WalkOutcome>,
    pub error: Option<String>,
    pub report: RunReport,
    pub paths: ExportPaths,
    pub run_dir: PathBuf,
    pub collectors: Vec<(String, Arc<CollectorStats>)>,
}

/// A run whose API is already listening but whose walk has not started.
pub struct PreparedRun {
    config: RunConfig,
    shared: Arc<RunShared>,
    addr: SocketAddr,
    server: JoinHandle<()>,
    writer: JoinHandle<()>,
    sim: Option<SimServer>,
    collectors: Vec<HttpCollector>,
}

impl PreparedRun {
    pub async fn prepare(config: RunConfig) -> Result<Self, RunError> {
        if !(mbtcover_core::aggregation::MIN_REFRESH_INTERVAL_S..=mbtcover_core::aggregation::MAX_REFRESH_INTERVAL_S)
            .contains(&config.refresh_interval_s)
        {
            return Err(AggregationError::OutOfRange(config.refresh_interval_s).into());
        }
        let run_dir = config.out_dir.clone();
        fs::create_dir_all(&run_dir).map_err(io_ctx(format!("creating {}", run_dir.display())))?;
        let meta = RunMeta {
            seed: config.seed,
            stop: config.stop.to_string(),
            refresh_interval_s: config.refresh_interval_s,
            suite_file: SUITE_FILE.into(),
        };
        write_atomic(&run_dir.join(SUITE_FILE), config.suite.to_json().as_bytes())?;
        write_atomic(
            &run_dir.join(RUN_META_FILE),
            serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes(),
        )?;
        let journal = Journal::create(&run_dir)?;

        let mut agg = Aggregator::new(&config.suite);
        agg.set_refresh_interval(config.refresh_interval_s)?;
        let (inputs, rx) = mpsc::unbounded_channel();
        let (stream, _) = broadcast::channel(STREAM_CAPACITY);
        let (interval_tx, _) = watch::channel(config.refresh_interval_s);
        let (finished, _) = watch::channel(false);
        let shared = Arc::new(RunShared {
            agg: RwLock::new(agg),
            info: RunInfo {
                seed: config.seed,
                stop: config.stop.to_string(),
                suite: suite_stats(&config.suite),
                run_dir: run_dir.clone(),
                adapter: match &config.adapter {
                    AdapterChoice::Sim => "sim".into(),
                    AdapterChoice::Http { .. } => "http".into(),
                },
            },
            stream,
            inputs,
            interval_tx,
            origin: OnceLock::new(),
            finished,
        });
        let writer = tokio::spawn(writer_loop(shared.clone(), rx, journal));

        let listener = TcpListener::bind((config.host.as_str(), config.port))
            .await
            .map_err(io_ctx(format!("binding {}:{}", config.host, config.port)))?;
        let addr = listener.local_addr().map_err(io_ctx("reading bound address"))?;
        let app = api::router(shared.clone());
        let server = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!(error = %e, "api server stopped");
            }
        });

        let sim = match &config.adapter {
            AdapterChoice::Sim => {
                let sim_config = config
                    .sim_config
                    .clone()
                    .unwrap_or_else(|| SimConfig::for_suite(&config.suite, config.seed));
                let handle = SimHandle::new(sim_config).map_err(|e| RunError::Config(e.to_string()))?;
                Some(
                    sim_serve(handle, "127.0.0.1", 0)
                        .await
                        .map_err(io_ctx("starting sim server"))?,
                )
            }
            AdapterChoice::Http { .. } => None,
        };
        let poll = config
            .poll_interval
            .unwrap_or_else(|| Duration::from_secs_f64(config.refresh_interval_s));
        let fe = config
            .fe_collector
            .clone()
            .or_else(|| sim.as_ref().map(|s| s.frontend_url()));
        let be = config
            .be_collector
            .clone()
            .or_else(|| sim.as_ref().map(|s| s.backend_url()));
        let mut collectors = Vec::new();
        if let Some(url) = fe {
            collectors.push(HttpCollector::new("frontend", url, CoverageSource::Frontend, poll));
        }
        if let Some(url) = be {
            collectors.push(HttpCollector::new("backend", url, CoverageSource::Backend, poll));
        }
        tracing::info!(%addr, run_dir = %run_dir.display(), "service listening");
        Ok(PreparedRun {
            config,
            shared,
            addr,
            server,
            writer,
            sim,
            collectors,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shared(&self) -> Arc<RunShared> {
        self.shared.clone()
    }

    pub fn sim_base_url(&self) -> Option<String> {
        self.sim.as_ref().map(|s| s.base_url())
    }

    /// Runs the walk to completion, then polls once more, samples once
    /// more and exports the report.
    pub async fn run(self) -> Result<RunSummary, RunError> {
        let PreparedRun {
            config,
            shared,
            server,
            writer,
            sim,
            collectors,
            ..
        } = self;
        let origin = Instant::now();
        let _ = shared.origin.set(origin);

        let (stop_tx, stop_rx) = watch::channel(false);
        let mut stats = Vec::new();
        let mut tasks = Vec::new();
        for c in &collectors {
            let s = Arc::new(CollectorStats::default());
            stats.push((c.id().to_string(), s.clone()));
            let inputs = shared.inputs.clone();
            tasks.push(tokio::spawn(run_http_poll_collector(
                c.clone(),
                origin,
                s,
                stop_rx.clone(),
                move |p| {
                    let _ = inputs.send(Input::Snapshot(p));
                },
            )));
        }
        let sched = tokio::spawn(scheduler(
            shared.inputs.clone(),
            origin,
            shared.interval_tx.subscribe(),
            stop_rx.clone(),
        ));

        let mut adapter: Box<dyn Adapter + Send> = match (&config.adapter, &sim) {
            (AdapterChoice::Sim, Some(server)) => {
                Box::new(SimAdapter::new(server.sim.clone()).with_step_delay(config.step_delay))
            }
            (AdapterChoice::Http { sut_url }, _) => {
                let url = sut_url.clone();
                let delay = config.step_delay;
                let built =
                    tokio::task::spawn_blocking(move || HttpAdapter::new(&url).map(|a| a.with_step_delay(delay)))
                        .await
                        .expect("adapter construction");
                Box::new(built.map_err(|e| RunError::Config(e.to_string()))?)
            }
            (AdapterChoice::Sim, None) => unreachable!("sim server started in prepare"),
        };
        let inputs = shared.inputs.clone();
        let suite = config.suite.clone();
        let stop = config.stop.clone();
        let seed = config.seed;
        let walk = tokio::task::spawn_blocking(move || {
            let clock = WallClock::since(origin);
            let mut sink = FnSink(|ev| {
                let _ = inputs.send(Input::Event(ev));
            });
            let result = execute_walk_with_clock(&suite, &mut *adapter, &stop, seed, &mut sink, &clock);
            // The HTTP adapter owns a blocking client that must not be
            // dropped on an async worker.
            drop(adapter);
            result
        })
        .await
        .expect("walker thread panicked");

        let _ = stop_tx.send(true);
        for t in tasks {
            let _ = t.await;
        }
        let _ = sched.await;
        for (c, (_, s)) in collectors.iter().zip(&stats) {
            let inputs = shared.inputs.clone();
            poll_once(c, origin, s, &mut move |p| {
                let _ = inputs.send(Input::Snapshot(p));
            })
            .await;
        }
        let _ = shared.inputs.send(Input::Sample(origin.elapsed().as_millis() as u64));
        let (tx, rx) = oneshot::channel();
        let _ = shared.inputs.send(Input::Flush(tx));
        let _ = rx.await;

        let (report, paths) = export_report(&shared)?;
        let (tx, rx) = oneshot::channel();
        let _ = shared.inputs.send(Input::Finish(tx));
        let _ = rx.await;

        let (status, outcome, error) = match walk {
            Ok(o) => (o.status, Some(o), None),
            Err(WalkError::AdapterFailure(msg)) => (RunStatus::Stopped, None, Some(format!("adapter failure: {msg}"))),
            Err(e) => (RunStatus::Stopped, None, Some(e.to_string())),
        };
        drop(sim);
        server.abort();
        drop(shared);
        writer.abort();
        Ok(RunSummary {
            status,
            outcome,
            error,
            report,
            paths,
            run_dir: config.out_dir,
            collectors: stats,
        })
    }
}
