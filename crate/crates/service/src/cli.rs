//! Command-line entry points.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mbtcover_core::aggregation::{self, parse_frontend_payload, DEFAULT_REFRESH_INTERVAL_S};
use mbtcover_core::formats::{parse_jacoco_xml, parse_lcov, parse_v8_coverage, UnifiedCoverage};
use mbtcover_core::generator::{gen_suite, GenParams};
use mbtcover_core::journal::{self, REPORT_HTML, REPORT_JSON, RUN_META_FILE};
use mbtcover_core::model::{load_model_suite, suite_stats, validate_suite, ModelSuite, Severity};
use mbtcover_core::report::RunReport;
use mbtcover_core::sim::{SimConfig, SimHandle};
use mbtcover_core::walker::{RunStatus, StopCondition};

use crate::pipeline::{AdapterChoice, PreparedRun, RunConfig};
use crate::sim_server::sim_serve;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STALLED: i32 = 2;
pub const EXIT_STOPPED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "mbtcover",
    version,
    about = "Model-based test walks with live code and requirement coverage"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Walk a suite against a SUT while collecting coverage.
    Run(RunArgs),
    /// Convert a coverage document to the unified line-coverage JSON.
    Parse(ParseArgs),
    /// Rebuild the report of a recorded run from its logs.
    Replay(ReplayArgs),
    /// Generate a random strongly connected suite.
    GenSuite(GenArgs),
    /// Serve the simulated SUT.
    Sim(SimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdapterKind {
    Sim,
    Http,
}

fn parse_refresh(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (aggregation::MIN_REFRESH_INTERVAL_S..=aggregation::MAX_REFRESH_INTERVAL_S).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be within [0.5, 3600], got {v}"))
    }
}

fn parse_stop(s: &str) -> Result<StopCondition, String> {
    s.parse()
        .map_err(|e: mbtcover_core::walker::StopParseError| e.to_string())
}

fn parse_positive_secs(s: &str) -> Result<Duration, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Duration::from_secs_f64(v)),
        _ => Err(format!("`{s}` is not a positive number of seconds")),
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Suite file, or a directory of model files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, value_enum, default_value = "sim")]
    pub adapter: AdapterKind,
    /// e.g. `edge_coverage(100)`; defaults to the entry model's generator.
    #[arg(long, value_parser = parse_stop)]
    pub stop: Option<StopCondition>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seconds between metric samples.
    #[arg(long, value_parser = parse_refresh, default_value_t = DEFAULT_REFRESH_INTERVAL_S)]
    pub refresh_interval: f64,
    /// Seconds between collector polls; defaults to the refresh interval.
    #[arg(long, value_parser = parse_positive_secs)]
    pub poll_interval: Option<Duration>,
    #[arg(long, env = "MBTCOV_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub fe_collector: Option<String>,
    #[arg(long)]
    pub be_collector: Option<String>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Sim config: `shape` or a JSON file. Defaults to one derived from the suite.
    #[arg(long)]
    pub sim_config: Option<String>,
    /// Base URL of the SUT for `--adapter http`.
    #[arg(long)]
    pub sut_url: Option<String>,
    /// Milliseconds to pause before each adapter action.
    #[arg(long, default_value_t = 0)]
    pub step_delay_ms: u64,
    /// Maximum executed elements before the run is stopped.
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatKind {
    V8,
    Jacoco,
    Lcov,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long, value_enum)]
    pub format: FormatKind,
    #[arg(long)]
    pub input: PathBuf,
    /// Directory holding script sources (v8 only).
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Snapshot log; defaults to `snapshots/log.jsonl` beside the events.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Suite to replay against; defaults to the one recorded with the run.
    #[arg(long)]
    pub models: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub models: usize,
    #[arg(long)]
    pub vertices: usize,
    #[arg(long)]
    pub edges: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 8090)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// `shape` or a JSON file.
    #[arg(long, default_value = "shape")]
    pub config: String,
}

/// An error and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn error(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_ERROR,
            message: message.into(),
        }
    }
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::error(format!("starting runtime: {e}")))
}

pub fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Replay(a) => cmd_replay(a),
        Command::GenSuite(a) => cmd_gen_suite(a),
        Command::Sim(a) => cmd_sim(a),
    }
}

fn load_suite(path: &Path) -> Result<ModelSuite, Failure> {
    let suite = load_model_suite(path).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
    for d in validate_suite(&suite) {
        match d.severity {
            Severity::Error => return Err(Failure::error(d.to_string())),
            Severity::Warning => tracing::warn!("{d}"),
        }
    }
    Ok(suite)
}

fn load_sim_config(spec: &str) -> Result<SimConfig, Failure> {
    if let Some(c) = SimConfig::named(spec) {
        return Ok(c);
    }
    let text = fs::read_to_string(spec).map_err(|e| Failure::error(format!("{spec}: {e}")))?;
    SimConfig::from_json(&text).map_err(|e| Failure::error(format!("{spec}: {e}")))
}

fn cmd_run(a: RunArgs) -> Result<i32, Failure> {
    let suite = load_suite(&a.models)?;
    let mut stop = match a.stop {
        Some(s) => s,
        None => {
            let generator = suite
                .models()
                .first()
                .map(|m| m.generator().to_string())
                .unwrap_or_default();
            parse_stop(&generator).map_err(|e| {
                Failure::usage(format!(
                    "no --stop given and entry generator `{generator}` is unusable: {e}"
                ))
            })?
        }
    };
    if let Some(cap) = a.max_steps {
        stop = stop.with_safety_cap(cap);
    }
    let adapter = match a.adapter {
        AdapterKind::Sim => AdapterChoice::Sim,
        AdapterKind::Http => AdapterChoice::Http {
            sut_url: a
                .sut_url
                .clone()
                .ok_or_else(|| Failure::usage("--adapter http requires --sut-url"))?,
        },
    };
    let sim_config = a.sim_config.as_deref().map(load_sim_config).transpose()?;
    let mut config = RunConfig::new(suite, stop, a.out);
    config.seed = a.seed;
    config.refresh_interval_s = a.refresh_interval;
    config.poll_interval = a.poll_interval;
    config.adapter = adapter;
    config.sim_config = sim_config;
    config.fe_collector = a.fe_collector;
    config.be_collector = a.be_collector;
    config.host = a.host;
    config.port = a.port;
    config.step_delay = Duration::from_millis(a.step_delay_ms);

    let rt = runtime()?;
    let summary = rt
        .block_on(async move {
            let prepared = PreparedRun::prepare(config).await?;
            eprintln!("serving on http://{}", prepared.addr());
            prepared.run().await
        })
        .map_err(|e| Failure::error(e.to_string()))?;
    let m = &summary.report.metrics;
    let mc = &summary.report.model_coverage;
    println!(
        "status={} fe={:.1}% be={:.1}% req={:.1}% edges={}/{} vertices={}/{} models={}/{}",
        summary.report.status,
        m.fe_cumulative_pct,
        m.be_cumulative_pct,
        m.req_pct,
        mc.edges_covered,
        mc.edges_total,
        mc.vertices_covered,
        mc.vertices_total,
        mc.models_reached,
        mc.models_total
    );
    println!("report: {}", summary.paths.json_path.display());
    println!("html:   {}", summary.paths.html_path.display());
    if let Some(err) = summary.error {
        eprintln!("error: {err}");
        return Ok(EXIT_ERROR);
    }
    Ok(match summary.status {
        RunStatus::Completed => EXIT_OK,
        RunStatus::Stalled => EXIT_STALLED,
        RunStatus::Stopped => EXIT_STOPPED,
    })
}

/// Reads every file under `dir`, keyed by its `/`-separated relative path.
fn read_source_tree(dir: &Path) -> Result<HashMap<String, String>, Failure> {
    let mut out = HashMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Failure::error(format!("{}: {e}", d.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| Failure::error(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(text) = fs::read_to_string(&path) {
                let rel = path.strip_prefix(dir).unwrap_or(&path);
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, text);
            }
        }
    }
    Ok(out)
}

/// Finds the source for a script url: exact relative path, then the url's
/// path without scheme and host, then a unique file-name match.
fn resolve_source<'a>(tree: &'a HashMap<String, String>, url: &str) -> Option<&'a String> {
    let no_scheme = url
        .split_once("://")
        .map_or(url, |(_, rest)| rest.split_once('/').map_or("", |(_, p)| p));
    let path = no_scheme.split(['?', '#']).next().unwrap_or("").trim_start_matches('/');
    if let Some(s) = tree.get(url).or_else(|| tree.get(path)) {
        return Some(s);
    }
    let name = path.rsplit('/').next()?;
    let mut hits = tree.iter().filter(|(k, _)| k.rsplit('/').next() == Some(name));
    match (hits.next(), hits.next()) {
        (Some((_, s)), None) => Some(s),
        _ => None,
    }
}

fn cmd_parse(a: ParseArgs) -> Result<i32, Failure> {
    let input = fs::read_to_string(&a.input).map_err(|e| Failure::error(format!("{}: {e}", a.input.display())))?;
    let files = match a.format {
        FormatKind::Jacoco => parse_jacoco_xml(&input).map_err(|e| Failure::error(e.to_string()))?,
        FormatKind::Lcov => parse_lcov(&input).map_err(|e| Failure::error(e.to_string()))?,
        FormatKind::V8 => {
            let doc: serde_json::Value =
                serde_json::from_str(&input).map_err(|e| Failure::error(format!("malformed document: {e}")))?;
            if doc.get("scripts").is_some() {
                // A collector payload carries its own sources.
                parse_frontend_payload(&input)
                    .map_err(|e| Failure::error(e.to_string()))?
                    .1
            } else {
                let tree = match &a.sources {
                    Some(dir) => read_source_tree(dir)?,
                    None => HashMap::new(),
                };
                let mut sources = HashMap::new();
                for script in doc.get("result").and_then(|r| r.as_array()).into_iter().flatten() {
                    if let Some(url) = script.get("url").and_then(|u| u.as_str()) {
                        if let Some(src) = resolve_source(&tree, url) {
                            sources.insert(url.to_string(), src.clone());
                        }
                    }
                }
                let parsed = parse_v8_coverage(&input, &sources).map_err(|e| Failure::error(e.to_string()))?;
                for url in &parsed.missing_sources {
                    eprintln!("warning: no source for {url}; skipped");
                }
                parsed.files
            }
        }
    };
    let doc = UnifiedCoverage::new(files);
    let mut text = serde_json::to_string_pretty(&doc).expect("coverage serializes");
    text.push('\n');
    fs::write(&a.output, text).map_err(|e| Failure::error(format!("{}: {e}", a.output.display())))?;
    Ok(EXIT_OK)
}

fn cmd_replay(a: ReplayArgs) -> Result<i32, Failure> {
    let run_dir = a.events.parent().unwrap_or(Path::new(".")).to_path_buf();
    let meta_path = run_dir.join(RUN_META_FILE);
    let meta = meta_path
        .exists()
        .then(|| journal::read_run_meta(&meta_path))
        .transpose()
        .map_err(|e| Failure::error(e.to_string()))?;
    let suite_path = match (&a.models, &meta) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => run_dir.join(&m.suite_file),
        (None, None) => {
            return Err(Failure::usage(format!(
                "{} not found; pass --models to name the suite",
                meta_path.display()
            )))
        }
    };
    let suite = load_suite(&suite_path)?;
    let (seed, stop, interval) = match &meta {
        Some(m) => (m.seed, m.stop.clone(), m.refresh_interval_s),
        None => (0, String::new(), DEFAULT_REFRESH_INTERVAL_S),
    };
    let agg = journal::replay_dir(&suite, interval, &a.events, a.snapshots.as_deref())
        .map_err(|e| Failure::error(e.to_string()))?;
    let report = RunReport::build(&agg, suite_stats(&suite), seed, &stop);
    fs::create_dir_all(&a.out).map_err(|e| Failure::error(format!("{}: {e}", a.out.display())))?;
    let json_path = a.out.join(REPORT_JSON);
    let html_path = a.out.join(REPORT_HTML);
    fs::write(&json_path, report.to_canonical_json()).map_err(|e| Failure::error(e.to_string()))?;
    fs::write(&html_path, report.render_html()).map_err(|e| Failure::error(e.to_string()))?;
    println!("report: {}", json_path.display());
    println!("html:   {}", html_path.display());
    Ok(EXIT_OK)
}

fn cmd_gen_suite(a: GenArgs) -> Result<i32, Failure> {
    let suite = gen_suite(GenParams {
        models: a.models,
        vertices: a.vertices,
        edges: a.edges,
        seed: a.seed,
    })
    .map_err(|e| Failure::usage(e.to_string()))?;
    fs::write(&a.out, suite.to_json()).map_err(|e| Failure::error(format!("{}: {e}", a.out.display())))?;
    let s = suite_stats(&suite);
    println!(
        "models={} vertices={} edges={} requirements={}",
        s.model_count, s.vertex_count, s.edge_count, s.requirement_count
    );
    Ok(EXIT_OK)
}

fn cmd_sim(a: SimArgs) -> Result<i32, Failure> {
    let config = load_sim_config(&a.config)?;
    let handle = SimHandle::new(config).map_err(|e| Failure::error(e.to_string()))?;
    let rt = runtime()?;
    rt.block_on(async move {
        let mut server = sim_serve(handle, &a.host, a.port)
            .await
            .map_err(|e| Failure::error(format!("binding {}:{}: {e}", a.host, a.port)))?;
        println!("sim listening on {}", server.base_url());
        tokio::select! {
            _ = server.wait() => {}
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(EXIT_OK)
    })
}
