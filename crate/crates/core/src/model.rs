//! Test models: directed graphs whose vertices carry verification points and
//! whose edges carry UI transitions, grouped into a suite.
//!
//! The on-disk format is a GraphWalker-style JSON document:
//!
//! ```json
//! {"models": [{"id": "m1", "name": "Login", "generator": "edge_coverage(100)",
//!              "startElementId": "v1",
//!              "vertices": [{"id": "v1", "name": "LoginPage", "requirements": ["R1"]}],
//!              "edges": []}]}
//! ```
//!
//! A document may also hold a single model object at the top level.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("dangling reference in model `{model}`: `{element}` refers to missing vertex `{missing}`")]
    DanglingReference {
        model: String,
        element: String,
        missing: String,
    },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A boolean guard on an edge: `flag` or `!flag`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GuardExpr {
    pub variable: String,
    pub negated: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid guard `{0}`: expected `ident` or `!ident`")]
pub struct GuardParseError(pub String);

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for GuardExpr {
    type Err = GuardParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let (negated, rest) = match trimmed.strip_prefix('!') {
            Some(rest) => (true, rest.trim_start()),
            None => (false, trimmed),
        };
        if !is_ident(rest) {
            return Err(GuardParseError(s.to_string()));
        }
        Ok(GuardExpr {
            variable: rest.to_string(),
            negated,
        })
    }
}

impl fmt::Display for GuardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!{}", self.variable)
        } else {
            f.write_str(&self.variable)
        }
    }
}

impl GuardExpr {
    /// Evaluates the guard against a context. Returns `None` when the
    /// variable is undefined; callers treat that as `false`.
    pub fn evaluate(&self, context: &BTreeMap<String, bool>) -> Option<bool> {
        context.get(&self.variable).map(|v| *v != self.negated)
    }
}

/// Assignment of a boolean context variable, applied when an edge executes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    #[serde(rename = "var")]
    pub variable: String,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub id: String,
    pub name: String,
    pub requirement_tags: BTreeSet<String>,
    pub shared_state: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub name: String,
    pub source_vertex_id: String,
    pub target_vertex_id: String,
    pub requirement_tags: BTreeSet<String>,
    pub guard: Option<GuardExpr>,
    pub actions: Vec<Action>,
}

/// A single model graph. Construct with [`TestModel::new`], which checks id
/// uniqueness and endpoint resolution.
#[derive(Debug, Clone)]
pub struct TestModel {
    id: String,
    name: String,
    generator: String,
    start_vertex_id: Option<String>,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    vertex_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    // (source, target) vertex indices per edge
    endpoints: Vec<(usize, usize)>,
    outgoing: Vec<Vec<usize>>,
}

impl TestModel {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        generator: impl Into<String>,
        start_vertex_id: Option<String>,
        vertices: Vec<Vertex>,
        edges: Vec<Edge>,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let mut vertex_index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if v.id.is_empty() {
                return Err(ModelError::SchemaViolation {
                    path: format!("{id}.vertices[{i}].id"),
                    message: "vertex id must be non-empty".into(),
                });
            }
            if vertex_index.insert(v.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateId {
                    kind: "vertex",
                    id: format!("{id}/{}", v.id),
                });
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut endpoints = Vec::with_capacity(edges.len());
        let mut outgoing = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.id.is_empty() {
                return Err(ModelError::SchemaViolation {
                    path: format!("{id}.edges[{i}].id"),
                    message: "edge id must be non-empty".into(),
                });
            }
            if edge_index.insert(e.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateId {
                    kind: "edge",
                    id: format!("{id}/{}", e.id),
                });
            }
            let resolve = |vid: &str| {
                vertex_index
                    .get(vid)
                    .copied()
                    .ok_or_else(|| ModelError::DanglingReference {
                        model: id.clone(),
                        element: e.id.clone(),
                        missing: vid.to_string(),
                    })
            };
            let src = resolve(&e.source_vertex_id)?;
            let dst = resolve(&e.target_vertex_id)?;
            endpoints.push((src, dst));
            outgoing[src].push(i);
        }
        if let Some(start) = &start_vertex_id {
            if !vertex_index.contains_key(start) {
                return Err(ModelError::DanglingReference {
                    model: id.clone(),
                    element: "startElementId".into(),
                    missing: start.clone(),
                });
            }
        }
        Ok(TestModel {
            id,
            name: name.into(),
            generator: generator.into(),
            start_vertex_id,
            vertices,
            edges,
            vertex_index,
            edge_index,
            endpoints,
            outgoing,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The stop-condition string the model was authored with.
    pub fn generator(&self) -> &str {
        &self.generator
    }

    pub fn start_vertex_id(&self) -> Option<&str> {
        self.start_vertex_id.as_deref()
    }

    pub fn start_vertex(&self) -> Option<usize> {
        self.start_vertex_id
            .as_deref()
            .and_then(|id| self.vertex_index.get(id).copied())
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_position(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }

    pub fn edge_position(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    /// Indices of the edges leaving vertex `vertex`, in file order.
    pub fn outgoing(&self, vertex: usize) -> &[usize] {
        &self.outgoing[vertex]
    }

    pub fn edge_source(&self, edge: usize) -> usize {
        self.endpoints[edge].0
    }

    pub fn edge_target(&self, edge: usize) -> usize {
        self.endpoints[edge].1
    }

    /// Vertex indices reachable from `from` along edges (guards ignored).
    pub fn reachable_from(&self, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.outgoing[v] {
                let t = self.endpoints[e].1;
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        seen
    }
}

/// Location of a vertex inside a suite by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexRef {
    pub model: usize,
    pub vertex: usize,
}

#[derive(Debug, Clone)]
pub struct ModelSuite {
    models: Vec<TestModel>,
    source_path: String,
    model_index: HashMap<String, usize>,
    shared_states: BTreeMap<String, Vec<VertexRef>>,
}

impl ModelSuite {
    pub fn new(models: Vec<TestModel>, source_path: impl Into<String>) -> Result<Self, ModelError> {
        let mut model_index = HashMap::with_capacity(models.len());
        let mut shared_states: BTreeMap<String, Vec<VertexRef>> = BTreeMap::new();
        for (mi, m) in models.iter().enumerate() {
            if model_index.insert(m.id.clone(), mi).is_some() {
                return Err(ModelError::DuplicateId {
                    kind: "model",
                    id: m.id.clone(),
                });
            }
            for (vi, v) in m.vertices.iter().enumerate() {
                if let Some(state) = &v.shared_state {
                    shared_states
                        .entry(state.clone())
                        .or_default()
                        .push(VertexRef { model: mi, vertex: vi });
                }
            }
        }
        Ok(ModelSuite {
            models,
            source_path: source_path.into(),
            model_index,
            shared_states,
        })
    }

    pub fn empty() -> Self {
        ModelSuite::new(Vec::new(), "").expect("empty suite is valid")
    }

    pub fn models(&self) -> &[TestModel] {
        &self.models
    }

    pub fn model(&self, index: usize) -> &TestModel {
        &self.models[index]
    }

    pub fn model_position(&self, id: &str) -> Option<usize> {
        self.model_index.get(id).copied()
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    /// Every vertex carrying shared-state `name`, across all models.
    pub fn shared_state_vertices(&self, name: &str) -> &[VertexRef] {
        self.shared_states.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn shared_state_names(&self) -> impl Iterator<Item = &str> {
        self.shared_states.keys().map(String::as_str)
    }

    pub fn vertex(&self, r: VertexRef) -> &Vertex {
        &self.models[r.model].vertices[r.vertex]
    }

    /// Serializes back to the JSON document format.
    pub fn to_json(&self) -> String {
        let doc = SuiteDoc {
            models: self.models.iter().map(ModelDoc::from).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("suite serializes")
    }
}

// ---- JSON document shapes ----

#[derive(Debug, Serialize, Deserialize)]
struct SuiteDoc {
    models: Vec<ModelDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ModelDoc {
    id: String,
    name: String,
    generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_element_id: Option<String>,
    vertices: Vec<VertexDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct VertexDoc {
    id: String,
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    requirements: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shared_state: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct EdgeDoc {
    id: String,
    name: String,
    source_vertex_id: String,
    target_vertex_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    requirements: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    guard: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    actions: Vec<Action>,
}

impl From<&TestModel> for ModelDoc {
    fn from(m: &TestModel) -> Self {
        ModelDoc {
            id: m.id.clone(),
            name: m.name.clone(),
            generator: m.generator.clone(),
            start_element_id: m.start_vertex_id.clone(),
            vertices: m
                .vertices
                .iter()
                .map(|v| VertexDoc {
                    id: v.id.clone(),
                    name: v.name.clone(),
                    requirements: v.requirement_tags.iter().cloned().collect(),
                    shared_state: v.shared_state.clone(),
                })
                .collect(),
            edges: m
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    id: e.id.clone(),
                    name: e.name.clone(),
                    source_vertex_id: e.source_vertex_id.clone(),
                    target_vertex_id: e.target_vertex_id.clone(),
                    requirements: e.requirement_tags.iter().cloned().collect(),
                    guard: e.guard.as_ref().map(ToString::to_string),
                    actions: e.actions.clone(),
                })
                .collect(),
        }
    }
}

fn deserialize_at<T: serde::de::DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, ModelError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let inner = err.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        ModelError::SchemaViolation {
            path,
            message: err.into_inner().to_string(),
        }
    })
}

fn model_from_doc(doc: ModelDoc, path: &str) -> Result<TestModel, ModelError> {
    if doc.id.is_empty() {
        return Err(ModelError::SchemaViolation {
            path: format!("{path}.id"),
            message: "model id must be non-empty".into(),
        });
    }
    let vertices = doc
        .vertices
        .into_iter()
        .map(|v| Vertex {
            id: v.id,
            name: v.name,
            requirement_tags: v.requirements.into_iter().collect(),
            shared_state: v.shared_state,
        })
        .collect();
    let mut edges = Vec::with_capacity(doc.edges.len());
    for (i, e) in doc.edges.into_iter().enumerate() {
        let guard = match e.guard.as_deref() {
            None => None,
            Some(g) if g.trim().is_empty() => None,
            Some(g) => Some(g.parse().map_err(|err: GuardParseError| ModelError::SchemaViolation {
                path: format!("{path}.edges[{i}].guard"),
                message: err.to_string(),
            })?),
        };
        for (j, a) in e.actions.iter().enumerate() {
            if !is_ident(&a.variable) {
                return Err(ModelError::SchemaViolation {
                    path: format!("{path}.edges[{i}].actions[{j}].var"),
                    message: format!("`{}` is not a valid variable name", a.variable),
                });
            }
        }
        edges.push(Edge {
            id: e.id,
            name: e.name,
            source_vertex_id: e.source_vertex_id,
            target_vertex_id: e.target_vertex_id,
            requirement_tags: e.requirements.into_iter().collect(),
            guard,
            actions: e.actions,
        });
    }
    TestModel::new(doc.id, doc.name, doc.generator, doc.start_element_id, vertices, edges)
}

fn models_from_text(json_text: &str, path_prefix: &str) -> Result<Vec<TestModel>, ModelError> {
    let value: serde_json::Value =
        serde_json::from_str(json_text).map_err(|e| ModelError::MalformedDocument(e.to_string()))?;
    let is_suite = value.get("models").is_some();
    let docs: Vec<(String, ModelDoc)> = if is_suite {
        let suite: SuiteDoc = deserialize_at(value, path_prefix)?;
        suite
            .models
            .into_iter()
            .enumerate()
            .map(|(i, m)| (format!("{path_prefix}models[{i}]"), m))
            .collect()
    } else {
        let model: ModelDoc = deserialize_at(value, path_prefix)?;
        let p = if path_prefix.is_empty() {
            "model".to_string()
        } else {
            path_prefix.trim_end_matches('.').to_string()
        };
        vec![(p, model)]
    };
    docs.into_iter().map(|(p, d)| model_from_doc(d, &p)).collect()
}

/// Parses a suite document (or a single-model document).
pub fn parse_model_suite(json_text: &str) -> Result<ModelSuite, ModelError> {
    ModelSuite::new(models_from_text(json_text, "")?, "")
}

/// Loads a suite from a file, or from every `*.json` file of a directory in
/// file-name order (one model or suite per file).
pub fn load_model_suite(path: &Path) -> Result<ModelSuite, ModelError> {
    let io_err = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut models = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        files.sort();
        for file in files {
            let text = std::fs::read_to_string(&file).map_err(|source| ModelError::Io {
                path: file.display().to_string(),
                source,
            })?;
            let name = file.file_name().unwrap_or_default().to_string_lossy();
            models.extend(models_from_text(&text, &format!("{name}:"))?);
        }
    } else {
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        models = models_from_text(&text, "")?;
    }
    ModelSuite::new(models, path.display().to_string())
}

// ---- validation ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn warning(model: Option<&str>, element: Option<&str>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            model: model.map(str::to_string),
            element: element.map(str::to_string),
            message: message.into(),
        }
    }

    pub fn error(model: Option<&str>, element: Option<&str>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            ..Diagnostic::warning(model, element, message)
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}")?;
        if let Some(m) = &self.model {
            write!(f, " [{m}")?;
            if let Some(e) = &self.element {
                write!(f, "/{e}")?;
            }
            write!(f, "]")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Re-checks the structural invariants and reports vertices that cannot be
/// reached from their model's start vertex. An empty result means the suite
/// is clean.
pub fn validate_suite(suite: &ModelSuite) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut model_ids = BTreeSet::new();
    for m in suite.models() {
        if !model_ids.insert(m.id()) {
            out.push(Diagnostic::error(Some(m.id()), None, "duplicate model id"));
        }
        let mut ids = BTreeSet::new();
        for v in m.vertices() {
            if v.id.is_empty() || !ids.insert(v.id.as_str()) {
                out.push(Diagnostic::error(
                    Some(m.id()),
                    Some(&v.id),
                    "duplicate or empty vertex id",
                ));
            }
        }
        let mut edge_ids = BTreeSet::new();
        for e in m.edges() {
            if e.id.is_empty() || !edge_ids.insert(e.id.as_str()) {
                out.push(Diagnostic::error(
                    Some(m.id()),
                    Some(&e.id),
                    "duplicate or empty edge id",
                ));
            }
            for end in [&e.source_vertex_id, &e.target_vertex_id] {
                if !ids.contains(end.as_str()) {
                    out.push(Diagnostic::error(
                        Some(m.id()),
                        Some(&e.id),
                        format!("dangling reference to vertex {end}"),
                    ));
                }
            }
        }
        let Some(start) = m.start_vertex() else {
            continue;
        };
        let reachable = m.reachable_from(start);
        for (i, v) in m.vertices().iter().enumerate() {
            if !reachable.contains(&i) {
                out.push(Diagnostic::warning(
                    Some(m.id()),
                    Some(&v.id),
                    format!("unreachable vertex {}", v.id),
                ));
            }
        }
    }
    out
}

// ---- requirements ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Vertex,
    Edge,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ElementRef {
    pub model: String,
    pub element: String,
    pub kind: ElementKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub tagged_elements: Vec<ElementRef>,
}

/// Requirement id → the model elements tagged with it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequirementRegistry {
    entries: BTreeMap<String, RequirementEntry>,
}

impl RequirementRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&RequirementEntry> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RequirementEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Collects every distinct requirement tag on vertices and edges.
pub fn build_requirement_registry(suite: &ModelSuite) -> RequirementRegistry {
    let mut entries: BTreeMap<String, RequirementEntry> = BTreeMap::new();
    let mut tag = |req: &str, model: &str, element: &str, kind| {
        entries
            .entry(req.to_string())
            .or_default()
            .tagged_elements
            .push(ElementRef {
                model: model.to_string(),
                element: element.to_string(),
                kind,
            });
    };
    for m in suite.models() {
        for v in m.vertices() {
            for r in &v.requirement_tags {
                tag(r, m.id(), &v.id, ElementKind::Vertex);
            }
        }
        for e in m.edges() {
            for r in &e.requirement_tags {
                tag(r, m.id(), &e.id, ElementKind::Edge);
            }
        }
    }
    RequirementRegistry { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuiteStats {
    pub model_count: usize,
    pub vertex_count: usize,
    pub edge_count: usize,
    pub requirement_count: usize,
}

pub fn suite_stats(suite: &ModelSuite) -> SuiteStats {
    SuiteStats {
        model_count: suite.models().len(),
        vertex_count: suite.models().iter().map(|m| m.vertices().len()).sum(),
        edge_count: suite.models().iter().map(|m| m.edges().len()).sum(),
        requirement_count: build_requirement_registry(suite).len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = r#"{"models":[{"id":"m","name":"tri","generator":"edge_coverage(100)",
        "startElementId":"A",
        "vertices":[{"id":"A","name":"A"},{"id":"B","name":"B"},{"id":"C","name":"C"}],
        "edges":[{"id":"e1","name":"ab","sourceVertexId":"A","targetVertexId":"B"},
                 {"id":"e2","name":"bc","sourceVertexId":"B","targetVertexId":"C"},
                 {"id":"e3","name":"ca","sourceVertexId":"C","targetVertexId":"A"}]}]}"#;

    #[test]
    fn minimal_model() {
        let suite = parse_model_suite(
            r#"{"models":[{"id":"m","name":"n","generator":"length(1)","startElementId":"v1",
            "vertices":[{"id":"v1","name":"start"}],"edges":[]}]}"#,
        )
        .unwrap();
        assert_eq!(suite.models().len(), 1);
        assert_eq!(suite.model(0).vertices().len(), 1);
        assert!(suite.model(0).edges().is_empty());
        assert_eq!(suite.model(0).start_vertex(), Some(0));
    }

    #[test]
    fn single_model_document() {
        let suite = parse_model_suite(
            r#"{"id":"solo","name":"n","generator":"length(1)","vertices":[{"id":"v","name":"v"}],"edges":[]}"#,
        )
        .unwrap();
        assert_eq!(suite.model(0).id(), "solo");
        assert_eq!(suite.model(0).start_vertex(), None);
    }

    #[test]
    fn dangling_edge_target() {
        let err = parse_model_suite(
            r#"{"models":[{"id":"m","name":"n","generator":"g",
            "vertices":[{"id":"v1","name":"a"}],
            "edges":[{"id":"e","name":"x","sourceVertexId":"v1","targetVertexId":"vX"}]}]}"#,
        )
        .unwrap_err();
        match err {
            ModelError::DanglingReference { missing, .. } => assert_eq!(missing, "vX"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_start_vertex() {
        let err = parse_model_suite(
            r#"{"models":[{"id":"m","name":"n","generator":"g","startElementId":"nope",
            "vertices":[{"id":"v1","name":"a"}],"edges":[]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::DanglingReference { missing, .. } if missing == "nope"));
    }

    #[test]
    fn duplicate_ids() {
        let dup_vertex = r#"{"models":[{"id":"m","name":"n","generator":"g",
            "vertices":[{"id":"v","name":"a"},{"id":"v","name":"b"}],"edges":[]}]}"#;
        assert!(matches!(
            parse_model_suite(dup_vertex),
            Err(ModelError::DuplicateId { kind: "vertex", .. })
        ));
        let dup_model = r#"{"models":[
            {"id":"m","name":"n","generator":"g","vertices":[],"edges":[]},
            {"id":"m","name":"n","generator":"g","vertices":[],"edges":[]}]}"#;
        assert!(matches!(
            parse_model_suite(dup_model),
            Err(ModelError::DuplicateId { kind: "model", .. })
        ));
    }

    #[test]
    fn malformed_and_schema_errors() {
        assert!(matches!(
            parse_model_suite("{not json"),
            Err(ModelError::MalformedDocument(_))
        ));
        let err = parse_model_suite(
            r#"{"models":[{"id":"m","name":"n","generator":"g","vertices":[{"name":"a"}],"edges":[]}]}"#,
        )
        .unwrap_err();
        match err {
            ModelError::SchemaViolation { path, message } => {
                assert!(path.contains("models[0].vertices[0]"), "{path}");
                assert!(message.contains("id"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_model_suite(
            r#"{"models":[{"id":"m","name":"n","generator":"g","vertices":[{"id":"a","name":"a"}],
            "edges":[{"id":"e","name":"x","sourceVertexId":"a","targetVertexId":"a","guard":"x && y"}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::SchemaViolation { path, .. } if path == "models[0].edges[0].guard"));
    }

    #[test]
    fn guard_grammar() {
        assert_eq!(
            "flag".parse::<GuardExpr>().unwrap(),
            GuardExpr {
                variable: "flag".into(),
                negated: false
            }
        );
        assert_eq!(
            " !logged_in ".parse::<GuardExpr>().unwrap(),
            GuardExpr {
                variable: "logged_in".into(),
                negated: true
            }
        );
        assert!("".parse::<GuardExpr>().is_err());
        assert!("!".parse::<GuardExpr>().is_err());
        assert!("1abc".parse::<GuardExpr>().is_err());
        assert!("a b".parse::<GuardExpr>().is_err());
        let ctx = BTreeMap::from([("f".to_string(), true)]);
        assert_eq!("!f".parse::<GuardExpr>().unwrap().evaluate(&ctx), Some(false));
        assert_eq!("f".parse::<GuardExpr>().unwrap().evaluate(&ctx), Some(true));
        assert_eq!("g".parse::<GuardExpr>().unwrap().evaluate(&ctx), None);
    }

    #[test]
    fn triangle_is_clean() {
        let suite = parse_model_suite(TRIANGLE).unwrap();
        assert!(validate_suite(&suite).is_empty());
    }

    // Reachability oracle: plain BFS over an adjacency list built straight
    // from the edge id strings.
    fn bfs_unreachable(m: &TestModel) -> BTreeSet<String> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in m.edges() {
            adj.entry(&e.source_vertex_id).or_default().push(&e.target_vertex_id);
        }
        let start = m.start_vertex_id().unwrap();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &t in adj.get(v).into_iter().flatten() {
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        m.vertices()
            .iter()
            .filter(|v| !seen.contains(v.id.as_str()))
            .map(|v| v.id.clone())
            .collect()
    }

    #[test]
    fn isolated_vertex_warns() {
        let text = TRIANGLE.replace(
            r#"{"id":"C","name":"C"}]"#,
            r#"{"id":"C","name":"C"},{"id":"D","name":"D"}]"#,
        );
        let suite = parse_model_suite(&text).unwrap();
        let expected = bfs_unreachable(suite.model(0));
        assert_eq!(expected, BTreeSet::from(["D".to_string()]));
        let diags = validate_suite(&suite);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert_eq!(diags[0].message, "unreachable vertex D");
    }

    #[test]
    fn shared_tags_across_models_are_legal() {
        let text = r#"{"models":[
            {"id":"a","name":"a","generator":"g","startElementId":"v","vertices":[{"id":"v","name":"v","requirements":["R1"]}],"edges":[]},
            {"id":"b","name":"b","generator":"g","startElementId":"v","vertices":[{"id":"v","name":"v","requirements":["R1"]}],"edges":[]}]}"#;
        let suite = parse_model_suite(text).unwrap();
        assert!(validate_suite(&suite).is_empty());
        let reg = build_requirement_registry(&suite);
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.get("R1").unwrap().tagged_elements.len(), 2);
    }

    #[test]
    fn registry_from_vertex_and_edge_tags() {
        let text = r#"{"models":[{"id":"m","name":"n","generator":"g","startElementId":"v1",
            "vertices":[{"id":"v1","name":"a","requirements":["R1"]},{"id":"v2","name":"b"},
                        {"id":"v3","name":"c","requirements":["R2"]}],
            "edges":[{"id":"e1","name":"x","sourceVertexId":"v1","targetVertexId":"v2"},
                     {"id":"e2","name":"y","sourceVertexId":"v2","targetVertexId":"v3","requirements":["R1"]}]}]}"#;
        let reg = build_requirement_registry(&parse_model_suite(text).unwrap());
        assert_eq!(reg.len(), 2);
        let r1: Vec<_> = reg
            .get("R1")
            .unwrap()
            .tagged_elements
            .iter()
            .map(|e| e.element.as_str())
            .collect();
        assert_eq!(r1, ["v1", "e2"]);
        let r2: Vec<_> = reg
            .get("R2")
            .unwrap()
            .tagged_elements
            .iter()
            .map(|e| e.element.as_str())
            .collect();
        assert_eq!(r2, ["v3"]);
    }

    #[test]
    fn registry_counts_distinct_tags_over_models() {
        let text = r#"{"models":[
            {"id":"a","name":"a","generator":"g","vertices":[{"id":"v","name":"v","requirements":["R1","R2"]}],"edges":[]},
            {"id":"b","name":"b","generator":"g","vertices":[{"id":"v","name":"v","requirements":["R2","R3"]},{"id":"w","name":"w"}],
             "edges":[{"id":"e","name":"e","sourceVertexId":"v","targetVertexId":"w","requirements":["R4"]}]},
            {"id":"c","name":"c","generator":"g","vertices":[{"id":"v","name":"v","requirements":["R5","R1"]}],"edges":[]}]}"#;
        let suite = parse_model_suite(text).unwrap();
        assert_eq!(build_requirement_registry(&suite).len(), 5);
        assert!(build_requirement_registry(&parse_model_suite(TRIANGLE).unwrap()).is_empty());
        assert_eq!(
            suite_stats(&suite),
            SuiteStats {
                model_count: 3,
                vertex_count: 4,
                edge_count: 1,
                requirement_count: 5
            }
        );
    }

    #[test]
    fn empty_suite_stats() {
        assert_eq!(suite_stats(&ModelSuite::empty()), SuiteStats::default());
        assert_eq!(
            suite_stats(&parse_model_suite(r#"{"models":[]}"#).unwrap()),
            SuiteStats::default()
        );
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"models":[{"id":"m","name":"n","generator":"g","startElementId":"v1",
            "vertices":[{"id":"v1","name":"a","requirements":["R1"],"sharedState":"S"},{"id":"v2","name":"b"}],
            "edges":[{"id":"e1","name":"x","sourceVertexId":"v1","targetVertexId":"v2","guard":"!ok",
                      "actions":[{"var":"ok","value":true}],"requirements":["R2"]}]}]}"#;
        let a = parse_model_suite(text).unwrap();
        let b = parse_model_suite(&a.to_json()).unwrap();
        assert_eq!(a.model(0).vertices(), b.model(0).vertices());
        assert_eq!(a.model(0).edges(), b.model(0).edges());
        assert_eq!(suite_stats(&a), suite_stats(&b));
    }
}
