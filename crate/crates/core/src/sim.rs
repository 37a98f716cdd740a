//! A deterministic stand-in for a web application under test.
//!
//! Pages reference scripts with generated source text; non-navigating edges
//! cover more lines of the current page's scripts, and every edge covers a
//! few more back-end lines. [`SimState`] renders both collector payloads, and
//! [`SimAdapter`] drives it from the walker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{FrontendPayload, FunctionsPayload, ScriptPayload};
use crate::formats::v8::{CoverageRange, FunctionCoverage, LineIndex};
use crate::model::{Edge, ModelSuite, TestModel, Vertex};
use crate::walker::{Adapter, AdapterError, AssertionOutcome};

pub const GOTO_PREFIX: &str = "goto:";
const BACKEND_LINES_PER_FILE: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptConfig {
    pub url: String,
    pub line_count: u32,
    pub lines_covered_per_visit: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageConfig {
    pub url: String,
    pub scripts: Vec<ScriptConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub total_lines: u64,
    pub lines_covered_per_action: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// The first page is where the browser starts.
    pub pages: Vec<PageConfig>,
    pub backend: BackendConfig,
    pub seed: u64,
    /// Vertex ids, or `model/vertex`, whose assertions fail.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fail_vertices: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("unknown page `{0}`")]
    UnknownPage(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.pages.is_empty() {
            return bad("at least one page is required".into());
        }
        let mut urls = BTreeSet::new();
        let mut scripts: BTreeMap<&str, &ScriptConfig> = BTreeMap::new();
        for page in &self.pages {
            if !urls.insert(page.url.as_str()) {
                return bad(format!("duplicate page `{}`", page.url));
            }
            for s in &page.scripts {
                if s.line_count == 0 {
                    return bad(format!("script `{}` has no lines", s.url));
                }
                if s.lines_covered_per_visit > s.line_count {
                    return bad(format!(
                        "script `{}`: lines_covered_per_visit {} > line_count {}",
                        s.url, s.lines_covered_per_visit, s.line_count
                    ));
                }
                if let Some(prev) = scripts.insert(&s.url, s) {
                    if prev.line_count != s.line_count {
                        return bad(format!("script `{}` declared with two sizes", s.url));
                    }
                }
            }
        }
        if self.backend.lines_covered_per_action > self.backend.total_lines {
            return bad("backend lines_covered_per_action exceeds total_lines".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let config: SimConfig = serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Resolves a built-in config by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "shape" => Some(Self::shape()),
            _ => None,
        }
    }

    /// Page A has one 100-line script, page B one 200-line script. Three
    /// actions on A reach 45/100; after moving to B the cumulative
    /// denominator triples.
    pub fn shape() -> Self {
        let script = |url: &str, line_count, per_visit| ScriptConfig {
            url: url.into(),
            line_count,
            lines_covered_per_visit: per_visit,
        };
        SimConfig {
            pages: vec![
                PageConfig {
                    url: "/a".into(),
                    scripts: vec![script("/static/a.js", 100, 15)],
                },
                PageConfig {
                    url: "/b".into(),
                    scripts: vec![script("/static/b.js", 200, 10)],
                },
            ],
            backend: BackendConfig {
                total_lines: 400,
                lines_covered_per_action: 12,
            },
            seed: 1,
            fail_vertices: Vec::new(),
        }
    }

    /// A config with a landing page `/` plus one page per distinct `goto:`
    /// target in the suite. Every page loads a shared script and its own.
    pub fn for_suite(suite: &ModelSuite, seed: u64) -> Self {
        let mut urls: Vec<String> = vec!["/".into()];
        for model in suite.models() {
            for edge in model.edges() {
                if let Some(url) = edge.name.strip_prefix(GOTO_PREFIX) {
                    if !urls.iter().any(|u| u == url) {
                        urls.push(url.to_string());
                    }
                }
            }
        }
        let pages = urls
            .into_iter()
            .enumerate()
            .map(|(i, url)| PageConfig {
                scripts: vec![
                    ScriptConfig {
                        url: "/static/common.js".into(),
                        line_count: 240,
                        lines_covered_per_visit: 4,
                    },
                    ScriptConfig {
                        url: format!("/static/page{i}.js"),
                        line_count: 60 + (i as u32 * 37) % 90,
                        lines_covered_per_visit: 6,
                    },
                ],
                url,
            })
            .collect();
        SimConfig {
            pages,
            backend: BackendConfig {
                total_lines: 2000,
                lines_covered_per_action: 3,
            },
            seed,
            fail_vertices: Vec::new(),
        }
    }
}

/// Body of `POST /sim/action`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimAction {
    Vertex {
        model: String,
        element: String,
        name: String,
    },
    Edge {
        model: String,
        element: String,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
}

#[derive(Debug, Clone)]
struct Script {
    source: String,
    index: LineIndex,
    line_count: u32,
    covered: BTreeSet<u32>,
    open: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    config: SimConfig,
    page: usize,
    scripts: BTreeMap<String, Script>,
    backend_covered: BTreeSet<u64>,
    backend_open: Vec<u64>,
    rng: ChaCha8Rng,
    pending_faults: u32,
}

/// Plausible JavaScript with varied line lengths; a few lines carry
/// non-ASCII text so offsets exercise UTF-16 handling.
pub fn generate_source(url: &str, line_count: u32) -> String {
    let stem: String = url
        .rsplit('/')
        .next()
        .unwrap_or("s")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let mut out = String::new();
    for n in 1..=line_count {
        let _ = match n % 7 {
            0 => writeln!(out, "// {stem} step {n}: état ✓"),
            1 => writeln!(out, "function {stem}_{n}(x) {{ return x + {n}; }}"),
            2 => writeln!(out, "const v{n} = {stem}_{}(v{});", n - 1, n.saturating_sub(2)),
            3 => writeln!(out, "if (v{} > {n}) {{ render('#{stem}-{n}'); }}", n - 1),
            4 => writeln!(out, "document.title = \"{stem} {n}\";"),
            5 => writeln!(out, "let s{n} = [{n}, {}, {}].map((y) => y * 2);", n * 2, n * 3),
            _ => writeln!(out, "emit('{stem}', {n});"),
        };
    }
    out
}

impl SimState {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut scripts = BTreeMap::new();
        for page in &config.pages {
            for s in &page.scripts {
                scripts.entry(s.url.clone()).or_insert_with(|| {
                    let source = generate_source(&s.url, s.line_count);
                    Script {
                        index: LineIndex::new(&source),
                        source,
                        line_count: s.line_count,
                        covered: BTreeSet::new(),
                        open: (1..=s.line_count).collect(),
                    }
                });
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let backend_open = (0..config.backend.total_lines).collect();
        Ok(SimState {
            backend_open,
            config,
            page: 0,
            scripts,
            backend_covered: BTreeSet::new(),
            rng,
            pending_faults: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn current_page(&self) -> &str {
        &self.config.pages[self.page].url
    }

    pub fn navigate(&mut self, url: &str) -> Result<(), SimError> {
        self.page = self
            .config
            .pages
            .iter()
            .position(|p| p.url == url)
            .ok_or_else(|| SimError::UnknownPage(url.to_string()))?;
        Ok(())
    }

    /// Moves up to `k` random entries from `open` into `covered`.
    fn pick<T: Copy + Ord>(rng: &mut ChaCha8Rng, open: &mut Vec<T>, covered: &mut BTreeSet<T>, k: usize) {
        for _ in 0..k.min(open.len()) {
            let i = rng.random_range(0..open.len());
            covered.insert(open.swap_remove(i));
        }
    }

    /// Covers `lines_covered_per_visit` more lines of each current-page script.
    pub fn accrue_page(&mut self) {
        let page = &self.config.pages[self.page];
        for sc in &page.scripts {
            let script = self.scripts.get_mut(&sc.url).expect("script registered");
            Self::pick(
                &mut self.rng,
                &mut script.open,
                &mut script.covered,
                sc.lines_covered_per_visit as usize,
            );
        }
    }

    pub fn accrue_backend(&mut self) {
        Self::pick(
            &mut self.rng,
            &mut self.backend_open,
            &mut self.backend_covered,
            self.config.backend.lines_covered_per_action as usize,
        );
    }

    fn fails(&self, model: &str, vertex: &str) -> bool {
        self.config
            .fail_vertices
            .iter()
            .any(|f| f == vertex || f.split_once('/') == Some((model, vertex)))
    }

    pub fn apply(&mut self, action: &SimAction) -> Result<ActionResponse, SimError> {
        match action {
            SimAction::Vertex { model, element, name } => Ok(ActionResponse {
                fail: self
                    .fails(model, element)
                    .then(|| format!("assertion failed at {model}/{element} ({name})")),
                page: None,
            }),
            SimAction::Edge { name, .. } => {
                let page = match name.strip_prefix(GOTO_PREFIX) {
                    Some(url) => {
                        self.navigate(url)?;
                        Some(url.to_string())
                    }
                    None => {
                        self.accrue_page();
                        None
                    }
                };
                self.accrue_backend();
                Ok(ActionResponse { fail: None, page })
            }
        }
    }

    /// Queues one failing response for the next collector request.
    pub fn inject_fault(&mut self) {
        self.pending_faults += 1;
    }

    pub fn take_fault(&mut self) -> bool {
        if self.pending_faults > 0 {
            self.pending_faults -= 1;
            true
        } else {
            false
        }
    }

    pub fn frontend_payload(&self) -> FrontendPayload {
        let page = &self.config.pages[self.page];
        let scripts = page
            .scripts
            .iter()
            .map(|sc| {
                let script = &self.scripts[&sc.url];
                ScriptPayload {
                    url: sc.url.clone(),
                    source: script.source.clone(),
                    coverage: FunctionsPayload {
                        functions: vec![FunctionCoverage {
                            function_name: String::new(),
                            ranges: script_ranges(script),
                            is_block_coverage: true,
                        }],
                    },
                }
            })
            .collect();
        FrontendPayload {
            page_url: page.url.clone(),
            scripts,
        }
    }

    pub fn frontend_json(&self) -> String {
        serde_json::to_string(&self.frontend_payload()).expect("payload serializes")
    }

    /// JaCoCo XML over `total_lines` lines split into 100-line files.
    pub fn backend_xml(&self) -> String {
        let total = self.config.backend.total_lines;
        let mut xml = String::from(
            "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n<report name=\"sim\">\n<package name=\"app\">\n",
        );
        let files = total.div_ceil(BACKEND_LINES_PER_FILE);
        for f in 0..files {
            let _ = writeln!(xml, "<sourcefile name=\"Module{}.java\">", f + 1);
            let lo = f * BACKEND_LINES_PER_FILE;
            let hi = (lo + BACKEND_LINES_PER_FILE).min(total);
            for g in lo..hi {
                let hit = self.backend_covered.contains(&g);
                let _ = writeln!(
                    xml,
                    "<line nr=\"{}\" mi=\"{}\" ci=\"{}\" mb=\"0\" cb=\"0\"/>",
                    g - lo + 1,
                    u8::from(!hit),
                    u8::from(hit)
                );
            }
            xml.push_str("</sourcefile>\n");
        }
        xml.push_str("</package>\n</report>\n");
        xml
    }

    pub fn backend_covered_count(&self) -> u64 {
        self.backend_covered.len() as u64
    }
}

/// One whole-script range with count 1, and count-0 ranges over each run of
/// uncovered lines (newline included).
fn script_ranges(script: &Script) -> Vec<CoverageRange> {
    let len = script.index.len();
    let mut ranges = vec![CoverageRange {
        start_offset: 0,
        end_offset: len,
        count: 1,
    }];
    let mut line = 1;
    while line <= script.line_count {
        if script.covered.contains(&line) {
            line += 1;
            continue;
        }
        let first = line;
        while line <= script.line_count && !script.covered.contains(&line) {
            line += 1;
        }
        let start = script.index.line_start(first).unwrap_or(len);
        let end = script.index.line_start(line).unwrap_or(len).min(len);
        ranges.push(CoverageRange {
            start_offset: start,
            end_offset: end,
            count: 0,
        });
    }
    ranges
}

/// Shared, lock-protected sim state; actions and payload reads are
/// serialized through the lock.
#[derive(Debug, Clone)]
pub struct SimHandle(Arc<Mutex<SimState>>);

impl SimHandle {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        Ok(SimHandle(Arc::new(Mutex::new(SimState::new(config)?))))
    }

    pub fn lock(&self) -> MutexGuard<'_, SimState> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// In-process adapter. `step_delay` is slept before each action.
#[derive(Debug, Clone)]
pub struct SimAdapter {
    sim: SimHandle,
    step_delay: Duration,
}

impl SimAdapter {
    pub fn new(sim: SimHandle) -> Self {
        SimAdapter {
            sim,
            step_delay: Duration::ZERO,
        }
    }

    pub fn with_step_delay(mut self, delay: Duration) -> Self {
        self.step_delay = delay;
        self
    }

    fn act(&mut self, action: SimAction) -> Result<ActionResponse, AdapterError> {
        if !self.step_delay.is_zero() {
            std::thread::sleep(self.step_delay);
        }
        self.sim.lock().apply(&action).map_err(|e| AdapterError(e.to_string()))
    }
}

pub fn vertex_action(model: &TestModel, vertex: &Vertex) -> SimAction {
    SimAction::Vertex {
        model: model.id().to_string(),
        element: vertex.id.clone(),
        name: vertex.name.clone(),
    }
}

pub fn edge_action(model: &TestModel, edge: &Edge) -> SimAction {
    SimAction::Edge {
        model: model.id().to_string(),
        element: edge.id.clone(),
        name: edge.name.clone(),
    }
}

impl Adapter for SimAdapter {
    fn execute_vertex(&mut self, model: &TestModel, vertex: &Vertex) -> Result<AssertionOutcome, AdapterError> {
        let resp = self.act(vertex_action(model, vertex))?;
        Ok(match resp.fail {
            Some(detail) => AssertionOutcome::Fail(detail),
            None => AssertionOutcome::Pass,
        })
    }

    fn execute_edge(&mut self, model: &TestModel, edge: &Edge) -> Result<Option<String>, AdapterError> {
        Ok(self.act(edge_action(model, edge))?.page)
    }
}

/// The single-model suite that walks the shape config: three actions on
/// page A, a move to B, three actions on B.
pub fn shape_suite() -> ModelSuite {
    crate::model::parse_model_suite(SHAPE_SUITE_JSON).expect("built-in suite is valid")
}

pub const SHAPE_SUITE_JSON: &str = r#"{"models":[{
  "id":"shape","name":"Shape","generator":"vertex_coverage(100)","startElementId":"a0",
  "vertices":[
    {"id":"a0","name":"PageA","requirements":["REQ-1"]},
    {"id":"a1","name":"PageAStep1"},
    {"id":"a2","name":"PageAStep2","requirements":["REQ-2"]},
    {"id":"a3","name":"PageAStep3"},
    {"id":"b0","name":"PageB","requirements":["REQ-3"]},
    {"id":"b1","name":"PageBStep1"},
    {"id":"b2","name":"PageBStep2","requirements":["REQ-4"]},
    {"id":"b3","name":"PageBStep3","requirements":["REQ-5"]}],
  "edges":[
    {"id":"e1","name":"act","sourceVertexId":"a0","targetVertexId":"a1"},
    {"id":"e2","name":"act","sourceVertexId":"a1","targetVertexId":"a2"},
    {"id":"e3","name":"act","sourceVertexId":"a2","targetVertexId":"a3"},
    {"id":"e4","name":"goto:/b","sourceVertexId":"a3","targetVertexId":"b0"},
    {"id":"e5","name":"act","sourceVertexId":"b0","targetVertexId":"b1"},
    {"id":"e6","name":"act","sourceVertexId":"b1","targetVertexId":"b2"},
    {"id":"e7","name":"act","sourceVertexId":"b2","targetVertexId":"b3"}]
}]}"#;
