#![allow(dead_code)]

use std::time::{Duration, Instant};

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct SseEvent {
    pub event: String,
    pub data: Value,
    pub at: Instant,
}

/// Reads `text/event-stream` frames until the server closes the stream or
/// `deadline` passes. Comment frames (keep-alives) are dropped.
pub async fn read_sse(url: &str, deadline: Duration) -> Vec<SseEvent> {
    let mut resp = reqwest::get(url).await.expect("stream request");
    assert_eq!(resp.status(), 200);
    let ct = resp.headers()["content-type"].to_str().unwrap().to_string();
    assert!(ct.starts_with("text/event-stream"), "{ct}");
    let end = Instant::now() + deadline;
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Ok(Ok(Some(chunk))) = tokio::time::timeout_at(end.into(), resp.chunk()).await {
        buf.push_str(std::str::from_utf8(&chunk).expect("utf-8 stream"));
        while let Some(i) = buf.find("\n\n") {
            let frame: String = buf.drain(..i + 2).collect();
            let mut event = String::from("message");
            let mut data = String::new();
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.strip_prefix(' ').unwrap_or(v));
                }
            }
            if !data.is_empty() {
                out.push(SseEvent {
                    event,
                    data: serde_json::from_str(&data).expect("json data"),
                    at: Instant::now(),
                });
            }
        }
    }
    out
}

pub fn is_terminal(e: &SseEvent) -> bool {
    e.event == "status" && e.data["final"] == Value::Bool(true)
}
