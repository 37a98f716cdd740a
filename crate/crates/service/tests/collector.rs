use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::routing::get;
use axum::Router;
use mbtcover::collector::{poll_once, run_http_poll_collector, CollectorError, CollectorStats, HttpCollector};
use mbtcover::sim_server::sim_serve;
use mbtcover_core::aggregation::CoverageSource;
use mbtcover_core::sim::{SimConfig, SimHandle};
use tokio::net::TcpListener;
use tokio::sync::watch;

async fn shape_server() -> mbtcover::sim_server::SimServer {
    sim_serve(SimHandle::new(SimConfig::shape()).unwrap(), "127.0.0.1", 0)
        .await
        .unwrap()
}

async fn serve(app: Router) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test]
async fn two_second_interval_over_ten_seconds_delivers_five_snapshots() {
    let server = shape_server().await;
    let c = HttpCollector::new(
        "be",
        server.backend_url(),
        CoverageSource::Backend,
        Duration::from_secs(2),
    );
    let stats = Arc::new(CollectorStats::default());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (stop_tx, stop_rx) = watch::channel(false);
    let sink_seen = seen.clone();
    let origin = Instant::now();
    let task = tokio::spawn(run_http_poll_collector(c, origin, stats.clone(), stop_rx, move |p| {
        sink_seen.lock().unwrap().push(p.snapshot.t_ms);
    }));
    tokio::time::sleep(Duration::from_secs(10) - Duration::from_millis(50)).await;
    stop_tx.send(true).unwrap();
    task.await.unwrap();
    let ts = seen.lock().unwrap().clone();
    assert!((4..=6).contains(&ts.len()), "{ts:?}");
    assert_eq!(stats.delivered(), ts.len() as u64);
    assert!(ts.windows(2).all(|w| w[1] > w[0]));
}

#[tokio::test]
async fn a_single_500_is_skipped_and_the_next_poll_succeeds() {
    let server = shape_server().await;
    server.sim.lock().inject_fault();
    let c = HttpCollector::new(
        "fe",
        server.frontend_url(),
        CoverageSource::Frontend,
        Duration::from_millis(100),
    );
    assert!(matches!(c.poll(0).await, Err(CollectorError::HttpStatus(500))));
    let ok = c.poll(1).await.unwrap();
    assert_eq!(ok.snapshot.page_url.as_deref(), Some("/a"));
    assert_eq!(ok.snapshot.t_ms, 1);

    server.sim.lock().inject_fault();
    let stats = Arc::new(CollectorStats::default());
    let count = Arc::new(Mutex::new(0));
    let (stop_tx, stop_rx) = watch::channel(false);
    let n = count.clone();
    let task = tokio::spawn(run_http_poll_collector(
        c,
        Instant::now(),
        stats.clone(),
        stop_rx,
        move |_| {
            *n.lock().unwrap() += 1;
        },
    ));
    tokio::time::sleep(Duration::from_millis(450)).await;
    stop_tx.send(true).unwrap();
    task.await.unwrap();
    assert_eq!(stats.failures(), 1);
    assert!(stats.delivered() >= 2);
    assert_eq!(*count.lock().unwrap() as u64, stats.delivered());
}

#[tokio::test]
async fn malformed_payload_is_counted_and_not_delivered() {
    let base = serve(Router::new().route(
        "/bad",
        get(|| async { ([("content-type", "application/xml")], "<report><package") }),
    ))
    .await;
    let c = HttpCollector::new(
        "be",
        format!("{base}/bad"),
        CoverageSource::Backend,
        Duration::from_secs(1),
    );
    assert!(matches!(c.poll(0).await, Err(CollectorError::MalformedPayload(_))));
    let stats = CollectorStats::default();
    let mut delivered = 0;
    poll_once(&c, Instant::now(), &stats, &mut |_| delivered += 1).await;
    assert_eq!((stats.malformed(), stats.delivered(), delivered), (1, 0, 0));
}

#[tokio::test]
async fn unreachable_endpoint_is_reported() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let c = HttpCollector::new(
        "fe",
        format!("http://{addr}/x"),
        CoverageSource::Frontend,
        Duration::from_secs(1),
    );
    assert!(matches!(c.poll(0).await, Err(CollectorError::EndpointUnreachable(_))));
}

#[tokio::test]
async fn lcov_backend_is_accepted() {
    let base = serve(Router::new().route(
        "/lcov",
        get(|| async {
            (
                [("content-type", "text/plain")],
                "SF:src/app.js\nDA:1,2\nDA:2,0\nend_of_record\n",
            )
        }),
    ))
    .await;
    let c = HttpCollector::new(
        "be",
        format!("{base}/lcov"),
        CoverageSource::Backend,
        Duration::from_secs(1),
    );
    let p = c.poll(5).await.unwrap();
    assert_eq!(p.snapshot.files.len(), 1);
    assert_eq!(p.snapshot.files[0].covered().len(), 1);
}
