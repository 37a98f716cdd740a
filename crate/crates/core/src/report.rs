//! The exported run report: canonical JSON plus a static HTML view.

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggDiagnostic, Aggregator, AssertionFailure, MetricPoint};
use crate::formats::{CoverageStore, Ratio};
use crate::model::SuiteStats;
use crate::walker::ModelCoverageStats;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineMetrics {
    pub fe_cumulative_pct: f64,
    pub fe_page_pct: f64,
    pub be_cumulative_pct: f64,
    pub req_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementFlag {
    pub id: String,
    pub covered: bool,
    pub tagged_elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRow {
    pub id: String,
    pub instrumented: u64,
    pub covered: u64,
    pub pct: f64,
    pub missed_lines: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: String,
    pub status: String,
    pub seed: u64,
    pub stop: String,
    pub suite: SuiteStats,
    pub model_coverage: ModelCoverageStats,
    pub metrics: HeadlineMetrics,
    pub current_page: Option<String>,
    pub requirements: Vec<RequirementFlag>,
    pub frontend_files: Vec<FileRow>,
    pub backend_files: Vec<FileRow>,
    pub series: Vec<MetricPoint>,
    pub assertion_failures: Vec<AssertionFailure>,
    pub diagnostics: Vec<AggDiagnostic>,
}

pub fn file_rows(store: &CoverageStore) -> Vec<FileRow> {
    store
        .files()
        .map(|f| {
            let r = f.ratio();
            FileRow {
                id: f.file_id().to_string(),
                instrumented: r.total,
                covered: r.covered,
                pct: r.percent,
                missed_lines: f.instrumented().difference(f.covered()).copied().collect(),
            }
        })
        .collect()
}

fn pct(r: Ratio) -> f64 {
    r.percent.clamp(0.0, 100.0)
}

impl RunReport {
    pub fn build(agg: &Aggregator, suite: SuiteStats, seed: u64, stop: &str) -> Self {
        let h = agg.headline();
        let covered = agg.covered_requirements();
        RunReport {
            format_version: FORMAT_VERSION.into(),
            status: agg.phase().as_str().into(),
            seed,
            stop: stop.into(),
            suite,
            model_coverage: agg.model_stats(),
            metrics: HeadlineMetrics {
                fe_cumulative_pct: pct(h.fe_cumulative),
                fe_page_pct: pct(h.fe_page),
                be_cumulative_pct: pct(h.be_cumulative),
                req_pct: pct(h.requirements),
            },
            current_page: agg.current_page().map(str::to_string),
            requirements: agg
                .registry()
                .iter()
                .map(|(id, entry)| RequirementFlag {
                    id: id.to_string(),
                    covered: covered.contains(id),
                    tagged_elements: entry.tagged_elements.len(),
                })
                .collect(),
            frontend_files: file_rows(agg.fe_cumulative()),
            backend_files: file_rows(agg.be_cumulative()),
            series: agg.series().to_vec(),
            assertion_failures: agg.assertion_failures().to_vec(),
            diagnostics: agg.diagnostics().to_vec(),
        }
    }

    /// Pretty JSON with object keys sorted; identical state gives identical
    /// bytes.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
        text.push('\n');
        text
    }

    pub fn render_html(&self) -> String {
        let json = serde_json::to_string(self)
            .expect("report serializes")
            .replace("</", "<\\/");
        HTML_TEMPLATE.replace("__REPORT_JSON__", &json)
    }
}

const HTML_TEMPLATE: &str = r##"<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Coverage report</title>
<style>
body { font: 14px/1.4 system-ui, sans-serif; margin: 24px; color: #222; }
h1 { font-size: 20px; } h2 { font-size: 16px; margin-top: 28px; }
.cards { display: flex; gap: 12px; flex-wrap: wrap; }
.card { border: 1px solid #ccc; border-radius: 6px; padding: 8px 14px; min-width: 120px; }
.card b { display: block; font-size: 20px; }
table { border-collapse: collapse; margin-top: 8px; }
td, th { border: 1px solid #ddd; padding: 3px 8px; text-align: left; }
td.num { text-align: right; font-variant-numeric: tabular-nums; }
svg { border: 1px solid #eee; background: #fcfcfc; }
.legend span { margin-right: 14px; }
</style>
</head>
<body>
<h1>Coverage report</h1>
<div id="summary"></div>
<h2>Coverage over time</h2>
<div class="legend" id="legend-main"></div>
<svg id="chart-main" width="860" height="260"></svg>
<h2>Current page coverage</h2>
<svg id="chart-page" width="860" height="200"></svg>
<h2>Model coverage</h2>
<div class="cards" id="counters"></div>
<h2>Requirements</h2>
<table id="reqs"><tr><th>Requirement</th><th>Covered</th><th>Tagged elements</th></tr></table>
<h2>Front-end files</h2>
<table id="fe"><tr><th>File</th><th>Covered</th><th>Instrumented</th><th>%</th></tr></table>
<h2>Back-end files</h2>
<table id="be"><tr><th>File</th><th>Covered</th><th>Instrumented</th><th>%</th><th>Missed lines</th></tr></table>
<h2>Assertion failures</h2>
<ul id="failures"></ul>
<script id="report-data" type="application/json">__REPORT_JSON__</script>
<script>
const R = JSON.parse(document.getElementById("report-data").textContent);
const NS = "http://www.w3.org/2000/svg";
const COLORS = { fe_cumulative_pct: "#d9480f", be_cumulative_pct: "#1971c2", req_pct: "#2f9e44" };
const PAGE_COLORS = ["#f08c00", "#fab005", "#7048e8", "#0c8599", "#e64980"];
function el(tag, attrs, parent) {
  const e = document.createElementNS(NS, tag);
  for (const k in attrs) e.setAttribute(k, attrs[k]);
  parent.appendChild(e);
  return e;
}
function cell(row, text, cls) {
  const td = row.insertCell();
  td.textContent = text;
  if (cls) td.className = cls;
}
function fmt(v) { return v.toFixed(1) + "%"; }
function axes(svg, w, h, tmax) {
  el("line", { x1: 40, y1: h - 20, x2: w - 10, y2: h - 20, stroke: "#999" }, svg);
  el("line", { x1: 40, y1: 10, x2: 40, y2: h - 20, stroke: "#999" }, svg);
  for (const p of [0, 50, 100]) {
    const y = h - 20 - (h - 30) * p / 100;
    el("text", { x: 4, y: y + 4, "font-size": 10 }, svg).textContent = p + "%";
  }
  el("text", { x: w - 60, y: h - 4, "font-size": 10 }, svg).textContent = (tmax / 1000).toFixed(1) + " s";
}
function line(svg, pts, w, h, tmax, color) {
  if (!pts.length) return;
  const x = t => 40 + (w - 50) * (tmax ? t / tmax : 0);
  const y = v => h - 20 - (h - 30) * v / 100;
  const d = pts.map((p, i) => (i ? "L" : "M") + x(p.t_ms).toFixed(1) + " " + y(p.value).toFixed(1)).join(" ");
  el("path", { d, fill: "none", stroke: color, "stroke-width": 2 }, svg);
}
const m = R.metrics;
document.getElementById("summary").innerHTML =
  `<div class="cards">` +
  `<div class="card">Status<b>${R.status}</b></div>` +
  `<div class="card">Front-end<b>${fmt(m.fe_cumulative_pct)}</b></div>` +
  `<div class="card">Current page<b>${fmt(m.fe_page_pct)}</b></div>` +
  `<div class="card">Back-end<b>${fmt(m.be_cumulative_pct)}</b></div>` +
  `<div class="card">Requirements<b>${fmt(m.req_pct)}</b></div>` +
  `</div><p>Stop condition <code>${R.stop}</code>, seed ${R.seed}, ` +
  `${R.suite.model_count} models, ${R.suite.vertex_count} vertices, ${R.suite.edge_count} edges.</p>`;
const tmax = R.series.reduce((a, p) => Math.max(a, p.t_ms), 0);
const main = document.getElementById("chart-main");
axes(main, 860, 260, tmax);
for (const k in COLORS) {
  line(main, R.series.filter(p => p.metric === k), 860, 260, tmax, COLORS[k]);
  const s = document.createElement("span");
  s.style.color = COLORS[k];
  s.textContent = "■ " + k;
  document.getElementById("legend-main").appendChild(s);
}
const page = document.getElementById("chart-page");
axes(page, 860, 200, tmax);
const segs = [];
for (const p of R.series.filter(p => p.metric === "fe_page_pct")) {
  const last = segs[segs.length - 1];
  if (!last || last.url !== (p.page_url || "")) segs.push({ url: p.page_url || "", pts: [] });
  segs[segs.length - 1].pts.push(p);
}
segs.forEach((s, i) => line(page, s.pts, 860, 200, tmax, PAGE_COLORS[i % PAGE_COLORS.length]));
const mc = R.model_coverage;
document.getElementById("counters").innerHTML =
  `<div class="card">Models reached<b>${mc.models_reached} / ${mc.models_total}</b></div>` +
  `<div class="card">Vertices covered<b>${mc.vertices_covered} / ${mc.vertices_total}</b></div>` +
  `<div class="card">Vertices executed<b>${mc.vertices_executed}</b></div>` +
  `<div class="card">Edges covered<b>${mc.edges_covered} / ${mc.edges_total}</b></div>`;
const reqs = document.getElementById("reqs");
for (const r of R.requirements) {
  const row = reqs.insertRow();
  cell(row, r.id); cell(row, r.covered ? "yes" : "no"); cell(row, r.tagged_elements, "num");
}
for (const [id, rows, missed] of [["fe", R.frontend_files, false], ["be", R.backend_files, true]]) {
  const t = document.getElementById(id);
  for (const f of rows) {
    const row = t.insertRow();
    cell(row, f.id); cell(row, f.covered, "num"); cell(row, f.instrumented, "num"); cell(row, fmt(f.pct), "num");
    if (missed) cell(row, f.missed_lines.join(", "));
  }
}
const fails = document.getElementById("failures");
for (const f of R.assertion_failures) {
  const li = document.createElement("li");
  li.textContent = `#${f.seq} ${f.model}/${f.element}: ${f.detail}`;
  fails.appendChild(li);
}
if (!R.assertion_failures.length) fails.innerHTML = "<li>none</li>";
</script>
</body>
</html>
"##;
