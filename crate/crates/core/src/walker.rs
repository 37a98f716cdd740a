//! Random-walk execution of a model suite through an [`Adapter`].
//!
//! The walk emits an ordered stream of [`WalkEvent`]s. That stream is the
//! ground truth for everything downstream: model-coverage counters, the
//! requirements metric and page attribution can all be rebuilt from it with
//! a [`StatsTracker`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_requirement_registry, Edge, ModelSuite, TestModel, Vertex, VertexRef};

pub const DEFAULT_SAFETY_STEP_CAP: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    EdgeCoverage,
    VertexCoverage,
    RequirementCoverage,
    Time,
    Length,
}

impl StopKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StopKind::EdgeCoverage => "edge_coverage",
            StopKind::VertexCoverage => "vertex_coverage",
            StopKind::RequirementCoverage => "requirement_coverage",
            StopKind::Time => "time",
            StopKind::Length => "length",
        }
    }

    fn is_percent(self) -> bool {
        matches!(
            self,
            StopKind::EdgeCoverage | StopKind::VertexCoverage | StopKind::RequirementCoverage
        )
    }
}

/// When a walk ends. `threshold` is a percentage for the coverage kinds,
/// seconds for `time` and executed elements for `length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCondition {
    pub kind: StopKind,
    pub threshold: f64,
    pub safety_step_cap: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum StopParseError {
    #[error("unknown stop condition kind `{0}`")]
    UnknownKind(String),
    #[error("malformed stop condition `{0}`: expected kind(number)")]
    MalformedSpec(String),
    #[error("threshold {threshold} out of range for {kind}")]
    ThresholdOutOfRange { kind: &'static str, threshold: f64 },
}

impl StopCondition {
    pub fn new(kind: StopKind, threshold: f64) -> Result<Self, StopParseError> {
        let ok = if kind.is_percent() {
            threshold > 0.0 && threshold <= 100.0
        } else {
            threshold > 0.0 && threshold.is_finite()
        };
        if !ok {
            return Err(StopParseError::ThresholdOutOfRange {
                kind: kind.as_str(),
                threshold,
            });
        }
        Ok(StopCondition {
            kind,
            threshold,
            safety_step_cap: DEFAULT_SAFETY_STEP_CAP,
        })
    }

    pub fn with_safety_cap(mut self, cap: u64) -> Self {
        self.safety_step_cap = cap.max(1);
        self
    }
}

impl FromStr for StopCondition {
    type Err = StopParseError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let malformed = || StopParseError::MalformedSpec(spec.to_string());
        let s = spec.trim();
        let open = s.find('(').ok_or_else(malformed)?;
        let body = s[open + 1..].strip_suffix(')').ok_or_else(malformed)?;
        let kind = match s[..open].trim() {
            "edge_coverage" => StopKind::EdgeCoverage,
            "vertex_coverage" => StopKind::VertexCoverage,
            "requirement_coverage" => StopKind::RequirementCoverage,
            "time" => StopKind::Time,
            "length" => StopKind::Length,
            "" => return Err(malformed()),
            other => return Err(StopParseError::UnknownKind(other.to_string())),
        };
        let threshold: f64 = body.trim().parse().map_err(|_| malformed())?;
        if !threshold.is_finite() {
            return Err(malformed());
        }
        StopCondition::new(kind, threshold)
    }
}

impl fmt::Display for StopCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind.as_str(), self.threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStarted,
    ModelEntered,
    VertexExecuted,
    EdgeExecuted,
    Navigation,
    RunFinished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Stalled,
    Stopped,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Stalled => "stalled",
            RunStatus::Stopped => "stopped",
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkEvent {
    pub seq: u64,
    pub t_ms: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub reqs: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
    /// Assertion failure detail; only on `vertex_executed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

impl WalkEvent {
    pub fn new(seq: u64, t_ms: u64, kind: EventKind) -> Self {
        WalkEvent {
            seq,
            t_ms,
            kind,
            model: None,
            element: None,
            page: None,
            reqs: BTreeSet::new(),
            status: None,
            fail: None,
        }
    }

    /// The event without its timestamp, for determinism comparisons.
    pub fn untimed(&self) -> WalkEvent {
        WalkEvent {
            t_ms: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssertionOutcome {
    Pass,
    Fail(String),
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct AdapterError(pub String);

/// Executes model elements against the system under test.
pub trait Adapter {
    fn execute_vertex(&mut self, model: &TestModel, vertex: &Vertex) -> Result<AssertionOutcome, AdapterError>;

    /// Returns the new page URL when the transition navigated.
    fn execute_edge(&mut self, model: &TestModel, edge: &Edge) -> Result<Option<String>, AdapterError>;
}

/// Adapter that passes every assertion and never navigates.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullAdapter;

impl Adapter for NullAdapter {
    fn execute_vertex(&mut self, _: &TestModel, _: &Vertex) -> Result<AssertionOutcome, AdapterError> {
        Ok(AssertionOutcome::Pass)
    }

    fn execute_edge(&mut self, _: &TestModel, _: &Edge) -> Result<Option<String>, AdapterError> {
        Ok(None)
    }
}

pub trait EventSink {
    fn emit(&mut self, event: WalkEvent);
}

impl EventSink for Vec<WalkEvent> {
    fn emit(&mut self, event: WalkEvent) {
        self.push(event);
    }
}

impl EventSink for std::sync::mpsc::Sender<WalkEvent> {
    fn emit(&mut self, event: WalkEvent) {
        let _ = self.send(event);
    }
}

/// Wraps a closure as a sink.
pub struct FnSink<F>(pub F);

impl<F: FnMut(WalkEvent)> EventSink for FnSink<F> {
    fn emit(&mut self, event: WalkEvent) {
        (self.0)(event)
    }
}

pub trait Clock {
    fn elapsed(&self) -> Duration;
}

#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }

    /// A clock sharing another component's time origin.
    pub fn since(origin: Instant) -> Self {
        WallClock(origin)
    }
}

impl Clock for WallClock {
    fn elapsed(&self) -> Duration {
        self.0.elapsed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelCoverageStats {
    pub models_reached: u64,
    pub models_total: u64,
    pub vertices_covered: u64,
    pub vertices_total: u64,
    pub vertices_executed: u64,
    pub edges_covered: u64,
    pub edges_total: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error("adapter failure: {0}")]
    AdapterFailure(String),
    #[error("event {got} arrived after event {previous}")]
    OutOfOrderEvent { previous: u64, got: u64 },
    #[error("event {seq} references unknown element {model}/{element}")]
    UnknownElement { seq: u64, model: String, element: String },
    #[error("{0} ratio is undefined: the suite has none")]
    UndefinedRatio(&'static str),
}

/// `true` once the stop condition's measure has reached its threshold.
pub fn evaluate_stop(
    stop: &StopCondition,
    stats: &ModelCoverageStats,
    covered_reqs: u64,
    total_reqs: u64,
    elapsed: Duration,
    steps: u64,
) -> Result<bool, WalkError> {
    let reached = |covered: u64, total: u64, what| {
        if total == 0 {
            return Err(WalkError::UndefinedRatio(what));
        }
        Ok(covered as f64 * 100.0 >= stop.threshold * total as f64)
    };
    match stop.kind {
        StopKind::EdgeCoverage => reached(stats.edges_covered, stats.edges_total, "edge"),
        StopKind::VertexCoverage => reached(stats.vertices_covered, stats.vertices_total, "vertex"),
        StopKind::RequirementCoverage => reached(covered_reqs, total_reqs, "requirement"),
        StopKind::Time => Ok(elapsed.as_secs_f64() >= stop.threshold),
        StopKind::Length => Ok(steps as f64 >= stop.threshold),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Visit {
    Vertex(usize, usize),
    Edge(usize, usize),
}

/// Mutable state owned by the walk loop.
pub struct WalkerState {
    pub current: VertexRef,
    pub context: BTreeMap<String, bool>,
    visit_count: HashMap<Visit, u64>,
    models_reached: BTreeSet<usize>,
    covered_reqs: BTreeSet<String>,
    undefined_guards: BTreeSet<(usize, usize, String)>,
    counters: ModelCoverageStats,
    totals: Option<ModelCoverageStats>,
    rng: ChaCha8Rng,
}

impl WalkerState {
    pub fn new(current: VertexRef, seed: u64) -> Self {
        WalkerState {
            current,
            context: BTreeMap::new(),
            visit_count: HashMap::new(),
            models_reached: BTreeSet::new(),
            covered_reqs: BTreeSet::new(),
            undefined_guards: BTreeSet::new(),
            counters: ModelCoverageStats::default(),
            totals: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn vertex_visits(&self, model: usize, vertex: usize) -> u64 {
        self.visit_count
            .get(&Visit::Vertex(model, vertex))
            .copied()
            .unwrap_or(0)
    }

    pub fn edge_visits(&self, model: usize, edge: usize) -> u64 {
        self.visit_count.get(&Visit::Edge(model, edge)).copied().unwrap_or(0)
    }

    fn visit(&mut self, v: Visit) {
        let n = self.visit_count.entry(v).or_default();
        *n += 1;
        let first = *n == 1;
        match v {
            Visit::Vertex(..) => {
                self.counters.vertices_executed += 1;
                self.counters.vertices_covered += u64::from(first);
            }
            Visit::Edge(..) => self.counters.edges_covered += u64::from(first),
        }
    }

    /// Current counters against the suite's totals.
    pub fn stats(&self, suite: &ModelSuite) -> ModelCoverageStats {
        let t = self.totals.unwrap_or_else(|| totals(suite));
        ModelCoverageStats {
            models_reached: self.models_reached.len() as u64,
            models_total: t.models_total,
            vertices_total: t.vertices_total,
            edges_total: t.edges_total,
            ..self.counters
        }
    }
}

fn totals(suite: &ModelSuite) -> ModelCoverageStats {
    ModelCoverageStats {
        models_total: suite.models().len() as u64,
        vertices_total: suite.models().iter().map(|m| m.vertices().len() as u64).sum(),
        edges_total: suite.models().iter().map(|m| m.edges().len() as u64).sum(),
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPlan {
    /// Index of an outgoing edge of the current vertex.
    Edge(usize),
    SharedJump(VertexRef),
    Stalled,
}

/// Picks the next move: a uniformly chosen enabled outgoing edge, else a
/// uniformly chosen other vertex sharing the current vertex's shared state,
/// else stalled.
pub fn plan_next_step(suite: &ModelSuite, state: &mut WalkerState) -> StepPlan {
    let cur = state.current;
    let model = suite.model(cur.model);
    let mut enabled = Vec::new();
    for &e in model.outgoing(cur.vertex) {
        let edge = &model.edges()[e];
        let open = match &edge.guard {
            None => true,
            Some(g) => match g.evaluate(&state.context) {
                Some(v) => v,
                None => {
                    state.undefined_guards.insert((cur.model, e, g.variable.clone()));
                    false
                }
            },
        };
        if open {
            enabled.push(e);
        }
    }
    if !enabled.is_empty() {
        return StepPlan::Edge(enabled[state.rng.random_range(0..enabled.len())]);
    }
    if let Some(name) = &suite.vertex(cur).shared_state {
        let targets: Vec<VertexRef> = suite
            .shared_state_vertices(name)
            .iter()
            .copied()
            .filter(|r| *r != cur)
            .collect();
        if !targets.is_empty() {
            return StepPlan::SharedJump(targets[state.rng.random_range(0..targets.len())]);
        }
    }
    StepPlan::Stalled
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkOutcome {
    pub status: RunStatus,
    pub stats: ModelCoverageStats,
    pub steps: u64,
    pub covered_requirements: BTreeSet<String>,
    pub assertion_failures: u64,
    pub diagnostics: Vec<String>,
}

struct Emitter<'a, S: ?Sized> {
    sink: &'a mut S,
    clock: &'a dyn Clock,
    next_seq: u64,
}

impl<S: EventSink + ?Sized> Emitter<'_, S> {
    fn emit(&mut self, kind: EventKind, fill: impl FnOnce(&mut WalkEvent)) {
        let mut ev = WalkEvent::new(self.next_seq, self.clock.elapsed().as_millis() as u64, kind);
        fill(&mut ev);
        self.next_seq += 1;
        self.sink.emit(ev);
    }
}

pub fn execute_walk<A, S>(
    suite: &ModelSuite,
    adapter: &mut A,
    stop: &StopCondition,
    seed: u64,
    sink: &mut S,
) -> Result<WalkOutcome, WalkError>
where
    A: Adapter + ?Sized,
    S: EventSink + ?Sized,
{
    execute_walk_with_clock(suite, adapter, stop, seed, sink, &WallClock::start())
}

/// Runs one walk from the first model's start vertex until the stop
/// condition holds, no move is possible, or the safety cap is hit.
pub fn execute_walk_with_clock<A, S>(
    suite: &ModelSuite,
    adapter: &mut A,
    stop: &StopCondition,
    seed: u64,
    sink: &mut S,
    clock: &dyn Clock,
) -> Result<WalkOutcome, WalkError>
where
    A: Adapter + ?Sized,
    S: EventSink + ?Sized,
{
    let entry = suite
        .models()
        .first()
        .ok_or_else(|| WalkError::InvalidSuite("suite has no models".into()))?;
    let start = entry
        .start_vertex()
        .ok_or_else(|| WalkError::InvalidSuite(format!("entry model `{}` has no start vertex", entry.id())))?;
    let total_reqs = build_requirement_registry(suite).len() as u64;
    // Reject stop conditions whose ratio can never be computed before any
    // event is emitted.
    evaluate_stop(stop, &totals(suite), 0, total_reqs, Duration::ZERO, 0)?;

    let mut out = Emitter {
        sink,
        clock,
        next_seq: 0,
    };
    let mut state = WalkerState::new(
        VertexRef {
            model: 0,
            vertex: start,
        },
        seed,
    );
    state.totals = Some(totals(suite));
    let mut steps = 0u64;
    let mut failures = 0u64;

    let check_end = |state: &WalkerState, steps: u64| -> Result<Option<RunStatus>, WalkError> {
        let met = evaluate_stop(
            stop,
            &state.stats(suite),
            state.covered_reqs.len() as u64,
            total_reqs,
            clock.elapsed(),
            steps,
        )?;
        Ok(if met {
            Some(RunStatus::Completed)
        } else if steps >= stop.safety_step_cap {
            Some(RunStatus::Stopped)
        } else {
            None
        })
    };

    out.emit(EventKind::RunStarted, |_| {});
    let result = (|| -> Result<RunStatus, WalkError> {
        loop {
            {
                let cur = state.current;
                if state.models_reached.insert(cur.model) {
                    let id = suite.model(cur.model).id().to_string();
                    out.emit(EventKind::ModelEntered, |e| e.model = Some(id));
                }
                let model = suite.model(cur.model);
                let vertex = &model.vertices()[cur.vertex];
                let outcome = adapter
                    .execute_vertex(model, vertex)
                    .map_err(|e| WalkError::AdapterFailure(e.0))?;
                state.visit(Visit::Vertex(cur.model, cur.vertex));
                state.covered_reqs.extend(vertex.requirement_tags.iter().cloned());
                steps += 1;
                let fail = match outcome {
                    AssertionOutcome::Pass => None,
                    AssertionOutcome::Fail(detail) => {
                        failures += 1;
                        Some(detail)
                    }
                };
                out.emit(EventKind::VertexExecuted, |e| {
                    e.model = Some(model.id().to_string());
                    e.element = Some(vertex.id.clone());
                    e.reqs = vertex.requirement_tags.clone();
                    e.fail = fail;
                });
            }
            if let Some(status) = check_end(&state, steps)? {
                return Ok(status);
            }
            match plan_next_step(suite, &mut state) {
                StepPlan::Edge(e) => {
                    let cur = state.current;
                    let model = suite.model(cur.model);
                    let edge = &model.edges()[e];
                    let page = adapter
                        .execute_edge(model, edge)
                        .map_err(|err| WalkError::AdapterFailure(err.0))?;
                    for action in &edge.actions {
                        state.context.insert(action.variable.clone(), action.value);
                    }
                    state.visit(Visit::Edge(cur.model, e));
                    state.covered_reqs.extend(edge.requirement_tags.iter().cloned());
                    steps += 1;
                    out.emit(EventKind::EdgeExecuted, |ev| {
                        ev.model = Some(model.id().to_string());
                        ev.element = Some(edge.id.clone());
                        ev.reqs = edge.requirement_tags.clone();
                    });
                    if let Some(url) = page {
                        out.emit(EventKind::Navigation, |ev| {
                            ev.model = Some(model.id().to_string());
                            ev.element = Some(edge.id.clone());
                            ev.page = Some(url);
                        });
                    }
                    if let Some(status) = check_end(&state, steps)? {
                        return Ok(status);
                    }
                    state.current = VertexRef {
                        model: cur.model,
                        vertex: model.edge_target(e),
                    };
                }
                StepPlan::SharedJump(target) => state.current = target,
                StepPlan::Stalled => return Ok(RunStatus::Stalled),
            }
        }
    })();

    let status = match &result {
        Ok(s) => *s,
        Err(_) => RunStatus::Stopped,
    };
    out.emit(EventKind::RunFinished, |e| e.status = Some(status));
    result?;

    let diagnostics = state
        .undefined_guards
        .iter()
        .map(|(m, e, var)| {
            let model = suite.model(*m);
            format!(
                "guard on edge {}/{} uses undefined variable `{var}`; treated as false",
                model.id(),
                model.edges()[*e].id
            )
        })
        .collect();
    Ok(WalkOutcome {
        status,
        stats: state.stats(suite),
        steps,
        covered_requirements: state.covered_reqs,
        assertion_failures: failures,
        diagnostics,
    })
}

/// Rebuilds model-coverage counters from an event stream.
#[derive(Debug, Clone)]
pub struct StatsTracker {
    totals: ModelCoverageStats,
    known_vertices: HashSet<(String, String)>,
    known_edges: HashSet<(String, String)>,
    models: BTreeSet<String>,
    vertex_visits: BTreeMap<(String, String), u64>,
    edges: BTreeSet<(String, String)>,
    requirements: BTreeSet<String>,
    last_seq: Option<u64>,
    status: Option<RunStatus>,
}

impl StatsTracker {
    pub fn new(suite: &ModelSuite) -> Self {
        let mut known_vertices = HashSet::new();
        let mut known_edges = HashSet::new();
        for m in suite.models() {
            for v in m.vertices() {
                known_vertices.insert((m.id().to_string(), v.id.clone()));
            }
            for e in m.edges() {
                known_edges.insert((m.id().to_string(), e.id.clone()));
            }
        }
        StatsTracker {
            totals: totals(suite),
            known_vertices,
            known_edges,
            models: BTreeSet::new(),
            vertex_visits: BTreeMap::new(),
            edges: BTreeSet::new(),
            requirements: BTreeSet::new(),
            last_seq: None,
            status: None,
        }
    }

    pub fn apply_event(&mut self, event: &WalkEvent) -> Result<(), WalkError> {
        if let Some(prev) = self.last_seq {
            if event.seq <= prev {
                return Err(WalkError::OutOfOrderEvent {
                    previous: prev,
                    got: event.seq,
                });
            }
        }
        let key = || {
            (
                event.model.clone().unwrap_or_default(),
                event.element.clone().unwrap_or_default(),
            )
        };
        let unknown = |(model, element): (String, String)| WalkError::UnknownElement {
            seq: event.seq,
            model,
            element,
        };
        match event.kind {
            EventKind::ModelEntered => {
                self.models.insert(event.model.clone().unwrap_or_default());
            }
            EventKind::VertexExecuted => {
                let k = key();
                if !self.known_vertices.contains(&k) {
                    return Err(unknown(k));
                }
                *self.vertex_visits.entry(k).or_default() += 1;
                self.requirements.extend(event.reqs.iter().cloned());
            }
            EventKind::EdgeExecuted => {
                let k = key();
                if !self.known_edges.contains(&k) {
                    return Err(unknown(k));
                }
                self.edges.insert(k);
                self.requirements.extend(event.reqs.iter().cloned());
            }
            EventKind::RunFinished => self.status = event.status,
            EventKind::RunStarted | EventKind::Navigation => {}
        }
        self.last_seq = Some(event.seq);
        Ok(())
    }

    pub fn stats(&self) -> ModelCoverageStats {
        ModelCoverageStats {
            models_reached: self.models.len() as u64,
            vertices_covered: self.vertex_visits.len() as u64,
            vertices_executed: self.vertex_visits.values().sum(),
            edges_covered: self.edges.len() as u64,
            ..self.totals
        }
    }

    pub fn covered_requirements(&self) -> &BTreeSet<String> {
        &self.requirements
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    pub fn finished(&self) -> Option<RunStatus> {
        self.status
    }
}
