//! HTTP front for the simulated SUT.
//!
//! `GET /coverage/frontend` and `GET /coverage/backend` serve the collector
//! wire format, `POST /sim/action` applies one adapter action and
//! `POST /sim/fault` makes the next coverage request fail with a 500.

use std::net::SocketAddr;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mbtcover_core::sim::{SimAction, SimError, SimHandle};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub const FRONTEND_PATH: &str = "/coverage/frontend";
pub const BACKEND_PATH: &str = "/coverage/backend";

pub fn router(sim: SimHandle) -> Router {
    Router::new()
        .route(FRONTEND_PATH, get(frontend))
        .route(BACKEND_PATH, get(backend))
        .route("/sim/action", post(action))
        .route("/sim/fault", post(fault))
        .with_state(sim)
}

fn injected_fault() -> Response {
    (StatusCode::INTERNAL_SERVER_ERROR, "injected fault").into_response()
}

async fn frontend(State(sim): State<SimHandle>) -> Response {
    let mut state = sim.lock();
    if state.take_fault() {
        return injected_fault();
    }
    ([(header::CONTENT_TYPE, "application/json")], state.frontend_json()).into_response()
}

async fn backend(State(sim): State<SimHandle>) -> Response {
    let mut state = sim.lock();
    if state.take_fault() {
        return injected_fault();
    }
    ([(header::CONTENT_TYPE, "application/xml")], state.backend_xml()).into_response()
}

async fn action(State(sim): State<SimHandle>, Json(action): Json<SimAction>) -> Response {
    let result = sim.lock().apply(&action);
    match result {
        Ok(resp) => Json(resp).into_response(),
        Err(e @ SimError::UnknownPage(_)) => {
            (StatusCode::NOT_FOUND, Json(json!({ "error": e.to_string() }))).into_response()
        }
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn fault(State(sim): State<SimHandle>) -> StatusCode {
    sim.lock().inject_fault();
    StatusCode::NO_CONTENT
}

/// A sim server bound to a local port.
pub struct SimServer {
    pub addr: SocketAddr,
    pub sim: SimHandle,
    task: JoinHandle<()>,
}

impl SimServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn frontend_url(&self) -> String {
        format!("{}{FRONTEND_PATH}", self.base_url())
    }

    pub fn backend_url(&self) -> String {
        format!("{}{BACKEND_PATH}", self.base_url())
    }

    /// Resolves when the server task ends.
    pub async fn wait(&mut self) {
        let _ = (&mut self.task).await;
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Binds `host:port` (port 0 picks a free one) and serves in the background.
pub async fn sim_serve(sim: SimHandle, host: &str, port: u16) -> std::io::Result<SimServer> {
    let listener = TcpListener::bind((host, port)).await?;
    let addr = listener.local_addr()?;
    let app = router(sim.clone());
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "sim server stopped");
        }
    });
    Ok(SimServer { addr, sim, task })
}
