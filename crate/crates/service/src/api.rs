//! Read-only views over the live aggregator, the event stream, and the two
//! commands (export, refresh interval).

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use mbtcover_core::aggregation::{Phase, MAX_REFRESH_INTERVAL_S, MIN_REFRESH_INTERVAL_S};
use mbtcover_core::report::file_rows;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use crate::pipeline::{export_report, Input, RunShared, StreamMsg};

pub const KEEPALIVE_INTERVAL: Duration = Duration::from_secs(15);

type AppState = Arc<RunShared>;

pub fn router(shared: AppState) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/status", get(status))
        .route("/api/metrics", get(metrics))
        .route("/api/coverage/frontend", get(coverage_frontend))
        .route("/api/coverage/backend", get(coverage_backend))
        .route("/api/coverage/model", get(coverage_model))
        .route("/api/coverage/requirements", get(coverage_requirements))
        .route("/api/stream", get(event_stream))
        .route("/api/export", post(export))
        .route("/api/config/refresh-interval", post(refresh_interval))
        .with_state(shared)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn status(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(s.status_json())
}

#[derive(Deserialize)]
struct MetricsQuery {
    from: Option<String>,
}

async fn metrics(State(s): State<AppState>, Query(q): Query<MetricsQuery>) -> Response {
    let from = match q.from.as_deref().map(str::parse::<u64>) {
        None => 0,
        Some(Ok(v)) => v,
        Some(Err(_)) => return error(StatusCode::BAD_REQUEST, "`from` must be a non-negative integer (ms)"),
    };
    let agg = s.agg.read();
    let points: Vec<_> = agg.points_since(from).cloned().collect();
    Json(json!({ "from": from, "points": points })).into_response()
}

async fn coverage_frontend(State(s): State<AppState>) -> Json<serde_json::Value> {
    let agg = s.agg.read();
    let h = agg.headline();
    Json(json!({
        "cumulative": h.fe_cumulative,
        "page": h.fe_page,
        "current_page": agg.current_page(),
        "files": file_rows(agg.fe_cumulative()),
        "page_files": file_rows(agg.fe_page_session()),
    }))
}

async fn coverage_backend(State(s): State<AppState>) -> Json<serde_json::Value> {
    let agg = s.agg.read();
    Json(json!({
        "cumulative": agg.headline().be_cumulative,
        "baseline": agg.be_total_baseline(),
        "files": file_rows(agg.be_cumulative()),
    }))
}

async fn coverage_model(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!(s.agg.read().model_stats()))
}

async fn coverage_requirements(State(s): State<AppState>) -> Json<serde_json::Value> {
    let agg = s.agg.read();
    let covered = agg.covered_requirements();
    let reqs: Vec<_> = agg
        .registry()
        .iter()
        .map(|(id, e)| {
            json!({
                "id": id,
                "covered": covered.contains(id),
                "tagged_elements": e.tagged_elements,
            })
        })
        .collect();
    Json(json!({
        "ratio": agg.headline().requirements,
        "requirements": reqs,
    }))
}

fn is_terminal(msg: &StreamMsg) -> bool {
    msg.event == "status" && msg.data.contains("\"final\":true")
}

fn to_event(msg: &StreamMsg) -> Event {
    Event::default().event(msg.event).data(msg.data.clone())
}

async fn event_stream(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.stream.subscribe();
    let finished = s.is_finished();
    let mut hello = json!({ "status": s.agg.read().phase().as_str(), "t_ms": s.now_ms() });
    if finished {
        hello["final"] = json!(true);
    }
    let first = StreamMsg {
        event: "status",
        data: hello.to_string(),
    };
    let head = stream::once(async move { first });
    // A lagging client is dropped instead of slowing the writer.
    let tail = stream::unfold((rx, finished), |(mut rx, done)| async move {
        if done {
            return None;
        }
        match rx.recv().await {
            Ok(msg) => {
                let done = is_terminal(&msg);
                Some((msg, (rx, done)))
            }
            Err(broadcast::error::RecvError::Lagged(n)) => {
                tracing::warn!(skipped = n, "stream client lagging; disconnecting");
                None
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    });
    let events = head.chain(tail).map(|msg| Ok(to_event(&msg)));
    Sse::new(events).keep_alive(KeepAlive::new().interval(KEEPALIVE_INTERVAL))
}

async fn export(State(s): State<AppState>) -> Response {
    if s.agg.read().phase() == Phase::Pending {
        return error(StatusCode::CONFLICT, "run has not started");
    }
    let shared = s.clone();
    match tokio::task::spawn_blocking(move || export_report(&shared)).await {
        Ok(Ok((report, paths))) => Json(json!({
            "json_path": paths.json_path,
            "html_path": paths.html_path,
            "status": report.status,
            "metrics": report.metrics,
        }))
        .into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct IntervalBody {
    seconds: f64,
}

async fn refresh_interval(State(s): State<AppState>, body: Bytes) -> Response {
    let seconds = match serde_json::from_slice::<IntervalBody>(&body) {
        Ok(b) => b.seconds,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("expected {{\"seconds\": n}}: {e}")),
    };
    if !(MIN_REFRESH_INTERVAL_S..=MAX_REFRESH_INTERVAL_S).contains(&seconds) {
        return error(
            StatusCode::BAD_REQUEST,
            format!("seconds must be within [{MIN_REFRESH_INTERVAL_S}, {MAX_REFRESH_INTERVAL_S}]"),
        );
    }
    let (tx, rx) = oneshot::channel();
    if s.inputs.send(Input::Interval { seconds, reply: tx }).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "run is shutting down");
    }
    match rx.await {
        Ok(Ok(())) => Json(json!({ "refresh_interval_s": seconds })).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "run is shutting down"),
    }
}

const INDEX_HTML: &str = r#"<!DOCTYPE html>
<html lang="en">
<head><meta charset="utf-8"><title>Live coverage</title>
<style>body{font:14px system-ui,sans-serif;margin:24px}td{padding:2px 10px}</style></head>
<body>
<h1>Live coverage</h1>
<p id="status">connecting…</p>
<table id="m"></table>
<p><button id="export">Export report</button> <span id="paths"></span></p>
<script>
const rows = {};
const table = document.getElementById("m");
const es = new EventSource("/api/stream");
es.addEventListener("status", e => {
  const s = JSON.parse(e.data);
  document.getElementById("status").textContent = "status: " + s.status;
  if (s.final) es.close();
});
es.addEventListener("metric", e => {
  for (const p of JSON.parse(e.data).points) {
    if (!rows[p.metric]) {
      const r = table.insertRow();
      r.insertCell().textContent = p.metric;
      rows[p.metric] = r.insertCell();
    }
    rows[p.metric].textContent = Number.isInteger(p.value) ? p.value : p.value.toFixed(1);
  }
});
document.getElementById("export").onclick = async () => {
  const r = await fetch("/api/export", { method: "POST" });
  const j = await r.json();
  document.getElementById("paths").textContent = r.ok ? j.json_path + " " + j.html_path : j.error;
};
</script>
</body>
</html>
"#;
