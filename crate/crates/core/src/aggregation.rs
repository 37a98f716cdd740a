//! Live metric state fed by walk events and collector snapshots.
//!
//! One [`Aggregator`] owns everything the charts show: cumulative front-end
//! coverage, coverage of the current page session, cumulative back-end
//! coverage, covered requirements and the model counters. It is a plain
//! single-writer value; the service wraps it in a lock and funnels all
//! inputs through one queue.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::v8::{self, FunctionCoverage};
use crate::formats::{self, CoverageStore, FileLineCoverage, FormatError, Ratio};
use crate::model::{build_requirement_registry, ModelSuite, RequirementRegistry};
use crate::walker::{EventKind, ModelCoverageStats, RunStatus, StatsTracker, WalkError, WalkEvent};

pub const DEFAULT_REFRESH_INTERVAL_S: f64 = 5.0;
pub const MIN_REFRESH_INTERVAL_S: f64 = 0.5;
pub const MAX_REFRESH_INTERVAL_S: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSource {
    Frontend,
    Backend,
}

/// One collector poll.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageSnapshot {
    pub source: CoverageSource,
    pub collector_id: String,
    pub t_ms: u64,
    pub page_url: Option<String>,
    pub files: Vec<FileLineCoverage>,
}

impl CoverageSnapshot {
    /// Builds a snapshot, merging any repeated file ids.
    pub fn new(
        source: CoverageSource,
        collector_id: impl Into<String>,
        t_ms: u64,
        page_url: Option<String>,
        files: Vec<FileLineCoverage>,
    ) -> Self {
        CoverageSnapshot {
            source,
            collector_id: collector_id.into(),
            t_ms,
            page_url,
            files: files.into_iter().collect::<CoverageStore>().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    FeCumulativePct,
    FePagePct,
    BeCumulativePct,
    ReqPct,
    ModelsReached,
    VerticesCovered,
    VerticesExecuted,
    EdgesCovered,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::FeCumulativePct,
        MetricKind::FePagePct,
        MetricKind::BeCumulativePct,
        MetricKind::ReqPct,
        MetricKind::ModelsReached,
        MetricKind::VerticesCovered,
        MetricKind::VerticesExecuted,
        MetricKind::EdgesCovered,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub t_ms: u64,
    pub metric: MetricKind,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_url: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_data: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggDiagnostic {
    /// The back-end instrumented-line total moved away from its baseline.
    DenominatorDrift { t_ms: u64, baseline: u64, now: u64 },
    /// A walk event carried a tag the registry does not know.
    UnknownRequirement { seq: u64, requirement: String },
    /// A snapshot was older than the previous one from the same collector.
    SnapshotOutOfOrder {
        collector: String,
        t_ms: u64,
        previous: u64,
    },
    /// A front-end snapshot described another page than the walker's.
    PageMismatch { t_ms: u64, expected: String, got: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("run already finished; event {0} rejected")]
    RunFinished(u64),
    #[error("refresh interval {0}s outside [0.5, 3600]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pending,
    Running,
    Completed,
    Stalled,
    Stopped,
}

impl Phase {
    pub fn is_finished(self) -> bool {
        matches!(self, Phase::Completed | Phase::Stalled | Phase::Stopped)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pending => "pending",
            Phase::Running => "running",
            Phase::Completed => "completed",
            Phase::Stalled => "stalled",
            Phase::Stopped => "stopped",
        }
    }
}

impl From<RunStatus> for Phase {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Completed => Phase::Completed,
            RunStatus::Stalled => Phase::Stalled,
            RunStatus::Stopped => Phase::Stopped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionFailure {
    pub seq: u64,
    pub model: String,
    pub element: String,
    pub detail: String,
}

/// The four percentages at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Headline {
    pub fe_cumulative: Ratio,
    pub fe_page: Ratio,
    pub be_cumulative: Ratio,
    pub requirements: Ratio,
}

#[derive(Debug, Clone)]
pub struct Aggregator {
    registry: RequirementRegistry,
    tracker: StatsTracker,
    fe_cumulative: CoverageStore,
    fe_page_session: CoverageStore,
    current_page: Option<String>,
    be_cumulative: CoverageStore,
    be_total_baseline: Option<u64>,
    covered_requirements: BTreeSet<String>,
    series: Vec<MetricPoint>,
    last_sample_t: u64,
    refresh_interval_s: f64,
    phase: Phase,
    failures: Vec<AssertionFailure>,
    diagnostics: Vec<AggDiagnostic>,
    last_snapshot_t: BTreeMap<String, u64>,
    events_seen: u64,
}

impl Aggregator {
    pub fn new(suite: &ModelSuite) -> Self {
        Aggregator {
            registry: build_requirement_registry(suite),
            tracker: StatsTracker::new(suite),
            fe_cumulative: CoverageStore::new(),
            fe_page_session: CoverageStore::new(),
            current_page: None,
            be_cumulative: CoverageStore::new(),
            be_total_baseline: None,
            covered_requirements: BTreeSet::new(),
            series: Vec::new(),
            last_sample_t: 0,
            refresh_interval_s: DEFAULT_REFRESH_INTERVAL_S,
            phase: Phase::Pending,
            failures: Vec::new(),
            diagnostics: Vec::new(),
            last_snapshot_t: BTreeMap::new(),
            events_seen: 0,
        }
    }

    /// Applies one walk event. A navigation starts a new page session and
    /// records a zero point for the per-page metric, which is returned.
    pub fn ingest_walk_event(&mut self, event: &WalkEvent) -> Result<Vec<MetricPoint>, AggregationError> {
        if self.phase.is_finished() {
            return Err(AggregationError::RunFinished(event.seq));
        }
        self.tracker.apply_event(event)?;
        self.events_seen += 1;
        for tag in &event.reqs {
            if self.registry.contains(tag) {
                self.covered_requirements.insert(tag.clone());
            } else {
                self.diagnostics.push(AggDiagnostic::UnknownRequirement {
                    seq: event.seq,
                    requirement: tag.clone(),
                });
            }
        }
        let mut points = Vec::new();
        match event.kind {
            EventKind::RunStarted => self.phase = Phase::Running,
            EventKind::RunFinished => {
                self.phase = event.status.map(Phase::from).unwrap_or(Phase::Stopped);
            }
            EventKind::Navigation => {
                self.fe_page_session.clear();
                self.current_page = event.page.clone();
                let t = self.advance_clock(event.t_ms);
                let point = MetricPoint {
                    t_ms: t,
                    metric: MetricKind::FePagePct,
                    value: 0.0,
                    page_url: self.current_page.clone(),
                    no_data: true,
                };
                self.series.push(point.clone());
                points.push(point);
            }
            EventKind::VertexExecuted => {
                if let Some(detail) = &event.fail {
                    self.failures.push(AssertionFailure {
                        seq: event.seq,
                        model: event.model.clone().unwrap_or_default(),
                        element: event.element.clone().unwrap_or_default(),
                        detail: detail.clone(),
                    });
                }
            }
            EventKind::ModelEntered | EventKind::EdgeExecuted => {}
        }
        Ok(points)
    }

    /// Merges a snapshot into the cumulative store of its source and, for
    /// front-end snapshots, into the current page session.
    pub fn ingest_snapshot(&mut self, snap: &CoverageSnapshot) {
        if let Some(prev) = self.last_snapshot_t.get(&snap.collector_id) {
            if snap.t_ms < *prev {
                self.diagnostics.push(AggDiagnostic::SnapshotOutOfOrder {
                    collector: snap.collector_id.clone(),
                    t_ms: snap.t_ms,
                    previous: *prev,
                });
            }
        }
        let latest = self
            .last_snapshot_t
            .entry(snap.collector_id.clone())
            .or_insert(snap.t_ms);
        *latest = (*latest).max(snap.t_ms);

        match snap.source {
            CoverageSource::Frontend => {
                self.fe_cumulative.merge_all(&snap.files);
                match (&self.current_page, &snap.page_url) {
                    (None, Some(url)) => {
                        // Before the first navigation the collector is the
                        // only witness of the landing page.
                        self.current_page = Some(url.clone());
                        self.fe_page_session.merge_all(&snap.files);
                    }
                    (Some(cur), Some(url)) if cur != url => {
                        self.diagnostics.push(AggDiagnostic::PageMismatch {
                            t_ms: snap.t_ms,
                            expected: cur.clone(),
                            got: url.clone(),
                        });
                    }
                    _ => self.fe_page_session.merge_all(&snap.files),
                }
            }
            CoverageSource::Backend => {
                let before = self.be_cumulative.instrumented_total();
                self.be_cumulative.merge_all(&snap.files);
                let now = self.be_cumulative.instrumented_total();
                match self.be_total_baseline {
                    None => {
                        self.be_total_baseline = Some(snap.files.iter().map(|f| f.instrumented().len() as u64).sum());
                    }
                    Some(baseline) if now != baseline && now != before => {
                        self.diagnostics.push(AggDiagnostic::DenominatorDrift {
                            t_ms: snap.t_ms,
                            baseline,
                            now,
                        });
                        self.be_total_baseline = Some(now);
                    }
                    _ => {}
                }
            }
        }
    }

    fn advance_clock(&mut self, t_ms: u64) -> u64 {
        self.last_sample_t = self.last_sample_t.max(t_ms);
        self.last_sample_t
    }

    pub fn headline(&self) -> Headline {
        Headline {
            fe_cumulative: self.fe_cumulative.ratio(),
            fe_page: self.fe_page_session.ratio(),
            be_cumulative: self.be_cumulative.ratio(),
            requirements: Ratio::from_counts(self.covered_requirements.len() as u64, self.registry.len() as u64),
        }
    }

    /// Computes one point per metric from the current state and appends
    /// them to the series. Timestamps never go backwards.
    pub fn sample_metrics(&mut self, now_ms: u64) -> Vec<MetricPoint> {
        let t = self.advance_clock(now_ms);
        let h = self.headline();
        let stats = self.tracker.stats();
        let pct = |metric, r: Ratio, page_url: Option<String>| MetricPoint {
            t_ms: t,
            metric,
            value: r.percent,
            page_url,
            no_data: r.no_data,
        };
        let count = |metric, v: u64| MetricPoint {
            t_ms: t,
            metric,
            value: v as f64,
            page_url: None,
            no_data: false,
        };
        let points = vec![
            pct(MetricKind::FeCumulativePct, h.fe_cumulative, None),
            pct(MetricKind::FePagePct, h.fe_page, self.current_page.clone()),
            pct(MetricKind::BeCumulativePct, h.be_cumulative, None),
            pct(MetricKind::ReqPct, h.requirements, None),
            count(MetricKind::ModelsReached, stats.models_reached),
            count(MetricKind::VerticesCovered, stats.vertices_covered),
            count(MetricKind::VerticesExecuted, stats.vertices_executed),
            count(MetricKind::EdgesCovered, stats.edges_covered),
        ];
        self.series.extend(points.iter().cloned());
        points
    }

    pub fn set_refresh_interval(&mut self, seconds: f64) -> Result<(), AggregationError> {
        if !(MIN_REFRESH_INTERVAL_S..=MAX_REFRESH_INTERVAL_S).contains(&seconds) {
            return Err(AggregationError::OutOfRange(seconds));
        }
        self.refresh_interval_s = seconds;
        Ok(())
    }

    pub fn refresh_interval_s(&self) -> f64 {
        self.refresh_interval_s
    }

    pub fn registry(&self) -> &RequirementRegistry {
        &self.registry
    }

    pub fn covered_requirements(&self) -> &BTreeSet<String> {
        &self.covered_requirements
    }

    pub fn model_stats(&self) -> ModelCoverageStats {
        self.tracker.stats()
    }

    pub fn fe_cumulative(&self) -> &CoverageStore {
        &self.fe_cumulative
    }

    pub fn fe_page_session(&self) -> &CoverageStore {
        &self.fe_page_session
    }

    pub fn current_page(&self) -> Option<&str> {
        self.current_page.as_deref()
    }

    pub fn be_cumulative(&self) -> &CoverageStore {
        &self.be_cumulative
    }

    pub fn be_total_baseline(&self) -> Option<u64> {
        self.be_total_baseline
    }

    pub fn series(&self) -> &[MetricPoint] {
        &self.series
    }

    pub fn points_since(&self, from_ms: u64) -> impl Iterator<Item = &MetricPoint> {
        self.series.iter().filter(move |p| p.t_ms >= from_ms)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.tracker.last_seq()
    }

    pub fn events_seen(&self) -> u64 {
        self.events_seen
    }

    pub fn assertion_failures(&self) -> &[AssertionFailure] {
        &self.failures
    }

    pub fn diagnostics(&self) -> &[AggDiagnostic] {
        &self.diagnostics
    }
}

// ---- collector wire format ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionsPayload {
    pub functions: Vec<FunctionCoverage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptPayload {
    pub url: String,
    pub source: String,
    pub coverage: FunctionsPayload,
}

/// Body served by a front-end coverage endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrontendPayload {
    pub page_url: String,
    pub scripts: Vec<ScriptPayload>,
}

pub fn parse_frontend_payload(body: &str) -> Result<(String, Vec<FileLineCoverage>), FormatError> {
    let payload: FrontendPayload =
        serde_json::from_str(body).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
    let files = payload
        .scripts
        .iter()
        .map(|s| v8::script_line_coverage(&s.url, &s.source, &s.coverage.functions))
        .collect::<CoverageStore>()
        .to_vec();
    Ok((payload.page_url, files))
}

/// Back-end bodies are JaCoCo XML, or LCOV when served as `text/plain`.
/// Without a content type the body is sniffed.
pub fn parse_backend_payload(content_type: Option<&str>, body: &str) -> Result<Vec<FileLineCoverage>, FormatError> {
    let mime = content_type
        .map(|c| c.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
        .unwrap_or_default();
    match mime.as_str() {
        "application/xml" | "text/xml" => formats::parse_jacoco_xml(body),
        "text/plain" => formats::parse_lcov(body),
        _ if body.trim_start().starts_with('<') => formats::parse_jacoco_xml(body),
        _ => formats::parse_lcov(body),
    }
}

/// Parses a raw collector body into a snapshot.
pub fn snapshot_from_payload(
    source: CoverageSource,
    collector_id: &str,
    t_ms: u64,
    content_type: Option<&str>,
    body: &str,
) -> Result<CoverageSnapshot, FormatError> {
    match source {
        CoverageSource::Frontend => {
            let (page, files) = parse_frontend_payload(body)?;
            Ok(CoverageSnapshot::new(source, collector_id, t_ms, Some(page), files))
        }
        CoverageSource::Backend => {
            let files = parse_backend_payload(content_type, body)?;
            Ok(CoverageSnapshot::new(source, collector_id, t_ms, None, files))
        }
    }
}
