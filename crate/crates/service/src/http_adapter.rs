//! Adapter that drives an out-of-process SUT through `POST /sim/action`.

use std::time::Duration;

use mbtcover_core::model::{Edge, TestModel, Vertex};
use mbtcover_core::sim::{edge_action, vertex_action, ActionResponse, SimAction};
use mbtcover_core::walker::{Adapter, AdapterError, AssertionOutcome};

/// Blocking client; the walker runs on a blocking thread.
pub struct HttpAdapter {
    client: reqwest::blocking::Client,
    action_url: String,
    step_delay: Duration,
}

impl HttpAdapter {
    pub fn new(base_url: &str) -> Result<Self, AdapterError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| AdapterError(e.to_string()))?;
        Ok(HttpAdapter {
            client,
            action_url: format!("{}/sim/action", base_url.trim_end_matches('/')),
            step_delay: Duration::ZERO,
        })
    }

    pub fn with_step_delay(mut self, delay: Duration) -> Self {
        self.step_delay = delay;
        self
    }

    fn act(&self, action: &SimAction) -> Result<ActionResponse, AdapterError> {
        if !self.step_delay.is_zero() {
            std::thread::sleep(self.step_delay);
        }
        let resp = self
            .client
            .post(&self.action_url)
            .json(action)
            .send()
            .map_err(|e| AdapterError(format!("action request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(AdapterError(format!("SUT answered HTTP {}: {body}", status.as_u16())));
        }
        resp.json()
            .map_err(|e| AdapterError(format!("bad action response: {e}")))
    }
}

impl Adapter for HttpAdapter {
    fn execute_vertex(&mut self, model: &TestModel, vertex: &Vertex) -> Result<AssertionOutcome, AdapterError> {
        Ok(match self.act(&vertex_action(model, vertex))?.fail {
            Some(detail) => AssertionOutcome::Fail(detail),
            None => AssertionOutcome::Pass,
        })
    }

    fn execute_edge(&mut self, model: &TestModel, edge: &Edge) -> Result<Option<String>, AdapterError> {
        Ok(self.act(&edge_action(model, edge))?.page)
    }
}
