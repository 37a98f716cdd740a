//! Periodic HTTP polling of coverage endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mbtcover_core::aggregation::{snapshot_from_payload, CoverageSnapshot, CoverageSource};
use mbtcover_core::formats::FormatError;
use reqwest::header::CONTENT_TYPE;
use thiserror::Error;
use tokio::sync::watch;
use tokio::time::MissedTickBehavior;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("endpoint answered HTTP {0}")]
    HttpStatus(u16),
    #[error("malformed payload: {0}")]
    MalformedPayload(#[from] FormatError),
}

/// A parsed poll result together with the raw body it came from.
#[derive(Debug, Clone)]
pub struct Polled {
    pub snapshot: CoverageSnapshot,
    pub body: String,
    pub content_type: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HttpCollector {
    id: String,
    url: String,
    source: CoverageSource,
    interval: Duration,
    client: reqwest::Client,
}

impl HttpCollector {
    pub fn new(id: impl Into<String>, url: impl Into<String>, source: CoverageSource, interval: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .expect("http client");
        HttpCollector {
            id: id.into(),
            url: url.into(),
            source,
            interval,
            client,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn source(&self) -> CoverageSource {
        self.source
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// One GET; `t_ms` stamps the resulting snapshot.
    pub async fn poll(&self, t_ms: u64) -> Result<Polled, CollectorError> {
        let resp = self
            .client
            .get(&self.url)
            .send()
            .await
            .map_err(|e| CollectorError::EndpointUnreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(CollectorError::HttpStatus(resp.status().as_u16()));
        }
        let content_type = resp
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp
            .text()
            .await
            .map_err(|e| CollectorError::EndpointUnreachable(e.to_string()))?;
        let snapshot = snapshot_from_payload(self.source, &self.id, t_ms, content_type.as_deref(), &body)?;
        Ok(Polled {
            snapshot,
            body,
            content_type,
        })
    }
}

#[derive(Debug, Default)]
pub struct CollectorStats {
    pub delivered: AtomicU64,
    pub failures: AtomicU64,
    pub malformed: AtomicU64,
}

impl CollectorStats {
    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn malformed(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }

    fn record(&self, collector: &HttpCollector, result: &Result<Polled, CollectorError>) {
        match result {
            Ok(_) => {
                self.delivered.fetch_add(1, Ordering::Relaxed);
            }
            Err(e @ CollectorError::MalformedPayload(_)) => {
                self.malformed.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(collector = collector.id(), error = %e, "snapshot skipped");
            }
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(collector = collector.id(), error = %e, "poll failed; retrying next tick");
            }
        }
    }
}

/// Polls one more time outside the schedule, e.g. after the walk ended.
pub async fn poll_once(
    collector: &HttpCollector,
    origin: Instant,
    stats: &CollectorStats,
    sink: &mut (impl FnMut(Polled) + Send),
) {
    let result = collector.poll(origin.elapsed().as_millis() as u64).await;
    stats.record(collector, &result);
    if let Ok(p) = result {
        sink(p);
    }
}

/// Polls every `interval` (first poll immediately) until `shutdown` turns
/// true. Failures are counted and retried on the next tick.
pub async fn run_http_poll_collector(
    collector: HttpCollector,
    origin: Instant,
    stats: Arc<CollectorStats>,
    mut shutdown: watch::Receiver<bool>,
    mut sink: impl FnMut(Polled) + Send,
) {
    let mut ticker = tokio::time::interval(collector.interval());
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        if *shutdown.borrow() {
            return;
        }
        tokio::select! {
            _ = ticker.tick() => poll_once(&collector, origin, &stats, &mut sink).await,
            changed = shutdown.changed() => {
                if changed.is_err() {
                    return;
                }
            }
        }
    }
}
