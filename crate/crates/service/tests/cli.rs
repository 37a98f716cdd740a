use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn mbtcover(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbtcover"))
        .args(args)
        .env_remove("MBTCOV_PORT")
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    mbtcover(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["run", "--help"]), 0);
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&[]), 64);
    assert_eq!(code(&["bogus"]), 64);
    assert_eq!(code(&["run", "--models", "x.json"]), 64);
    assert_eq!(
        code(&[
            "run",
            "--models",
            "x.json",
            "--out",
            p(&out),
            "--refresh-interval",
            "0.1"
        ]),
        64
    );
    assert_eq!(
        code(&[
            "run",
            "--models",
            "x.json",
            "--out",
            p(&out),
            "--stop",
            "edge_coverage(140)"
        ]),
        64
    );
    assert_eq!(code(&["run", "--models", "x.json", "--out", p(&out), "--stop", "random(5)"]), 64);
    assert_eq!(code(&["parse", "--format", "xml", "--input", "a", "--output", "b"]), 64);

    let suite = dir.path().join("suite.json");
    fs::write(&suite, mbtcover_core::sim::SHAPE_SUITE_JSON).unwrap();
    assert_eq!(
        code(&[
            "run",
            "--models",
            p(&suite),
            "--out",
            p(&out),
            "--adapter",
            "http",
            "--port",
            "0"
        ]),
        64
    );

    let events = dir.path().join("lonely").join("events.jsonl");
    fs::create_dir_all(events.parent().unwrap()).unwrap();
    fs::write(&events, "").unwrap();
    assert_eq!(code(&["replay", "--events", p(&events), "--out", p(&out)]), 64);
}

#[test]
fn missing_suite_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = dir.path().join("o");
    assert_eq!(
        code(&["run", "--models", p(&missing), "--out", p(&out), "--port", "0"]),
        1
    );
}

#[test]
fn parse_lcov_writes_unified_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cov.info");
    let output = dir.path().join("cov.json");
    fs::write(&input, "SF:src/app.js\nDA:1,2\nDA:2,0\nDA:3,5\nend_of_record\n").unwrap();
    assert_eq!(
        code(&[
            "parse",
            "--format",
            "lcov",
            "--input",
            p(&input),
            "--output",
            p(&output)
        ]),
        0
    );
    let doc: Value = serde_json::from_str(&fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(
        doc,
        json!({"files": [{"id": "src/app.js", "instrumented": [1, 2, 3], "covered": [1, 3]}]})
    );
}

#[test]
fn parse_v8_resolves_sources_by_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("src/static")).unwrap();
    fs::write(dir.path().join("src/static/app.js"), "let a=1;\nfoo();\n").unwrap();
    let input = dir.path().join("v8.json");
    fs::write(
        &input,
        json!({"result": [
            {"url": "https://host/static/app.js?v=2", "functions": [{"ranges": [
                {"startOffset": 0, "endOffset": 8, "count": 1},
                {"startOffset": 9, "endOffset": 15, "count": 0}]}]},
            {"url": "https://host/other.js", "functions": []}
        ]})
        .to_string(),
    )
    .unwrap();
    let output = dir.path().join("out.json");
    let sources = dir.path().join("src");
    let o = mbtcover(&[
        "parse",
        "--format",
        "v8",
        "--input",
        p(&input),
        "--sources",
        p(&sources),
        "--output",
        p(&output),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("other.js"));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(doc["files"][0]["id"], "https://host/static/app.js?v=2");
    assert_eq!(doc["files"][0]["covered"], json!([1]));
    assert_eq!(doc["files"][0]["instrumented"], json!([1, 2]));
}

#[test]
fn parse_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.xml");
    fs::write(&input, "<report><package>").unwrap();
    let out = dir.path().join("o.json");
    assert_eq!(
        code(&["parse", "--format", "jacoco", "--input", p(&input), "--output", p(&out)]),
        1
    );
}

#[test]
fn gen_suite_then_run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.json");
    let o = mbtcover(&[
        "gen-suite",
        "--models",
        "3",
        "--vertices",
        "20",
        "--edges",
        "30",
        "--seed",
        "1",
        "--out",
        p(&suite),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("models=3 vertices=20 edges=30"));
    assert_eq!(
        code(&[
            "gen-suite",
            "--models",
            "3",
            "--vertices",
            "2",
            "--edges",
            "30",
            "--out",
            p(&suite)
        ]),
        64
    );

    let run = dir.path().join("run");
    let o = mbtcover(&[
        "run",
        "--models",
        p(&suite),
        "--seed",
        "5",
        "--refresh-interval",
        "0.5",
        "--port",
        "0",
        "--out",
        p(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("status=completed"));
    for f in [
        "events.jsonl",
        "run.json",
        "suite.json",
        "report.json",
        "report.html",
        "snapshots/log.jsonl",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }

    let rep = dir.path().join("rep");
    assert_eq!(
        code(&["replay", "--events", p(&run.join("events.jsonl")), "--out", p(&rep)]),
        0
    );
    assert_eq!(
        fs::read(rep.join("report.json")).unwrap(),
        fs::read(run.join("report.json")).unwrap()
    );
}

#[test]
fn stalled_and_capped_runs_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let dead_end = json!({"models": [{
        "id": "m", "name": "M", "generator": "edge_coverage(100)", "startElementId": "a",
        "vertices": [{"id": "a", "name": "A"}, {"id": "b", "name": "B"}, {"id": "c", "name": "C"}],
        "edges": [
            {"id": "e1", "name": "ab", "sourceVertexId": "a", "targetVertexId": "b"},
            {"id": "e2", "name": "ac", "sourceVertexId": "a", "targetVertexId": "c"}
        ]
    }]});
    let suite = dir.path().join("dead.json");
    fs::write(&suite, dead_end.to_string()).unwrap();
    let run = dir.path().join("r1");
    assert_eq!(
        code(&["run", "--models", p(&suite), "--port", "0", "--out", p(&run)]),
        2
    );
    let report: Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "stalled");

    let shape = dir.path().join("shape.json");
    fs::write(&shape, mbtcover_core::sim::SHAPE_SUITE_JSON).unwrap();
    let run = dir.path().join("r2");
    assert_eq!(
        code(&[
            "run",
            "--models",
            p(&shape),
            "--sim-config",
            "shape",
            "--max-steps",
            "3",
            "--port",
            "0",
            "--out",
            p(&run)
        ]),
        3
    );
}

#[test]
fn http_adapter_against_a_sim_process() {
    use std::io::{BufRead, BufReader};
    use std::process::Stdio;

    let mut sim = Command::new(env!("CARGO_BIN_EXE_mbtcover"))
        .args(["sim", "--port", "0", "--config", "shape"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(sim.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().rsplit(' ').next().unwrap().to_string();

    let dir = tempfile::tempdir().unwrap();
    let shape = dir.path().join("shape.json");
    fs::write(&shape, mbtcover_core::sim::SHAPE_SUITE_JSON).unwrap();
    let run = dir.path().join("r");
    let fe = format!("{base}/coverage/frontend");
    let be = format!("{base}/coverage/backend");
    let o = mbtcover(&[
        "run",
        "--models",
        p(&shape),
        "--adapter",
        "http",
        "--sut-url",
        &base,
        "--fe-collector",
        &fe,
        "--be-collector",
        &be,
        "--refresh-interval",
        "0.5",
        "--poll-interval",
        "0.03",
        "--step-delay-ms",
        "60",
        "--port",
        "0",
        "--out",
        p(&run),
    ]);
    let _ = sim.kill();
    let _ = sim.wait();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["fe_cumulative_pct"], 25.0);
    assert_eq!(report["metrics"]["be_cumulative_pct"], 21.0);
    assert_eq!(report["metrics"]["req_pct"], 100.0);
}
