use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_fbsdiag");

fn fbsdiag(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("GRAPH_PATH")
        .env_remove("PORT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_payload(o: &Output) -> Value {
    let v: Value = serde_json::from_slice(&o.stdout).expect("json envelope");
    assert_eq!(v["status"], "ok", "{v}");
    v["payload"].clone()
}

fn bundled_dir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let o = fbsdiag(&["bundled", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let graph = dir.path().join("lego_line.dkg");
    (dir, graph)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_bundled_model_reports_zero_violations() {
    let (dir, graph) = bundled_dir();
    let o = fbsdiag(&[
        "validate",
        "--model",
        s(&dir.path().join("lego_line_model.json")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 violations"));
    let o = fbsdiag(&["validate", "--graph", s(&graph)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 violations"));
    let o = fbsdiag(&["validate", "--bundled"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn validate_reports_violations_of_a_broken_file() {
    let (dir, graph) = bundled_dir();
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&graph).unwrap()).unwrap();
    // An extra HasPart edge that skips a level.
    let edges = doc["edges"].as_array_mut().unwrap();
    edges.push(json!({"kind": "HAS_PART", "src": "lego-line", "dst": "lego-line/roof-assembly/chuck-the-roof"}));
    let broken = dir.path().join("broken.dkg");
    std::fs::write(&broken, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = fbsdiag(&["validate", "--graph", s(&broken)]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("1 violations"));
    assert!(stdout(&o).contains("non-adjacent-levels"));
}

#[test]
fn usage_errors_exit_two() {
    let o = fbsdiag(&[
        "diagnose",
        "--graph",
        "x.dkg",
        "--text",
        "assembly misalignment",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--level"));
    assert_eq!(
        fbsdiag(&["diagnose", "--text", "a", "--method", "sideways"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fbsdiag(&["diagnose", "--text", "a", "--level", "Nowhere"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(fbsdiag(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        fbsdiag(&["chunk", "--graph", "x.dkg"]).status.code(),
        Some(2)
    );
    assert_eq!(fbsdiag(&["--help"]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_one_with_code() {
    let o = fbsdiag(&[
        "--format",
        "json",
        "validate",
        "--graph",
        "/nonexistent/g.dkg",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "error");
    assert_eq!(v["error"]["code"], "io-error");
    assert!(v.get("payload").is_none());
}

#[test]
fn ingest_model_then_records() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    std::fs::write(
        &model,
        json!({"entries": [{"label": "line", "level": "LineFunction", "children": [
            {"label": "press", "level": "ProcessFunction", "children": [
                {"label": "press the roof", "level": "ProcessElementFunction"}]}]}]})
        .to_string(),
    )
    .unwrap();
    let graph = dir.path().join("g.dkg");
    let o = fbsdiag(&[
        "--format",
        "json",
        "ingest",
        "model",
        s(&model),
        "--graph",
        s(&graph),
    ]);
    assert_eq!(json_payload(&o)["system_nodes"], 3);
    let again = fbsdiag(&["ingest", "model", s(&model), "--graph", s(&graph)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("graph-exists"));

    let rec = dir.path().join("rec.json");
    std::fs::write(
        &rec,
        json!([{"record_id": "R1", "failures": [
            {"key": "a", "label": "roof not seated", "category": "accuracy", "attach": "line/press"},
            {"key": "b", "label": "press force low", "category": "motion", "attach": "line/press/press-the-roof"}],
          "causes": [{"effect": "a", "cause": "b"}]}])
        .to_string(),
    )
    .unwrap();
    let o = fbsdiag(&[
        "--format",
        "json",
        "ingest",
        "record",
        s(&rec),
        "--graph",
        s(&graph),
    ]);
    let p = json_payload(&o);
    assert_eq!(
        (p["records"].as_u64(), p["failures"].as_u64()),
        (Some(1), Some(2))
    );

    let before = std::fs::read(&graph).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        json!({"record_id": "R2", "failures": [{"key": "a", "label": "x", "category": "motion", "attach": "line/nowhere"}]})
            .to_string(),
    )
    .unwrap();
    let o = fbsdiag(&[
        "--format",
        "json",
        "ingest",
        "record",
        s(&bad),
        "--graph",
        s(&graph),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["error"]["code"], "unknown-attach");
    assert_eq!(std::fs::read(&graph).unwrap(), before);
}

#[test]
fn eval_run_writes_two_methods_times_n_rows_per_query() {
    let (dir, graph) = bundled_dir();
    let out = dir.path().join("eval");
    let suite = dir.path().join("lego_line_suite.json");
    let o = fbsdiag(&[
        "eval",
        "run",
        "--graph",
        s(&graph),
        "--suite",
        s(&suite),
        "--methods",
        "proposed,baseline",
        "--provider",
        "local",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let suite: Value = serde_json::from_str(&std::fs::read_to_string(&suite).unwrap()).unwrap();
    let tsv = std::fs::read_to_string(out.join("results.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("query\tmethod\tn\tprecision\trecall"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    for q in suite["queries"].as_array().unwrap() {
        let id = q["id"].as_str().unwrap();
        let n = q["items"].as_array().unwrap().len();
        for m in ["proposed", "baseline"] {
            let ns: Vec<usize> = rows
                .iter()
                .filter(|r| r[0] == id && r[1] == m)
                .map(|r| r[2].parse().unwrap())
                .collect();
            assert_eq!(ns, (1..=n).collect::<Vec<_>>(), "{id} {m}");
        }
    }
    assert!(out.join("summary.txt").exists() && out.join("report.json").exists());
}

#[test]
fn chunk_index_and_saved_index_diagnosis() {
    let (dir, graph) = bundled_dir();
    let chunks = dir.path().join("chunks.json");
    let o = fbsdiag(&[
        "--format",
        "json",
        "chunk",
        "--graph",
        s(&graph),
        "--method",
        "baseline",
        "--out",
        s(&chunks),
    ]);
    assert_eq!(json_payload(&o)["chunks"], 168);
    let listed: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(&chunks).unwrap()).unwrap();
    assert_eq!(listed.len(), 168);

    let o = fbsdiag(&[
        "--format",
        "json",
        "index",
        "--graph",
        s(&graph),
        "--method",
        "proposed",
        "--level",
        "ProcessFunction",
    ]);
    let out = PathBuf::from(json_payload(&o)["out"].as_str().unwrap());
    assert_eq!(
        out,
        dir.path()
            .join("lego_line.dkg.proposed.ProcessFunction.index.json")
    );

    let base = [
        "--format",
        "json",
        "diagnose",
        "--graph",
        s(&graph),
        "--text",
        "assembly misalignment",
        "--level",
        "ProcessFunction",
        "--n",
        "12",
    ];
    let fresh = json_payload(&fbsdiag(&base));
    let mut with_index = base.to_vec();
    with_index.extend(["--index", s(&out)]);
    assert_eq!(json_payload(&fbsdiag(&with_index)), fresh);
    assert_eq!(fresh["causes"].as_array().unwrap().len(), 12);

    // An index for another level is refused.
    let mut wrong = with_index.clone();
    wrong[8] = "ProcessElementFunction";
    let o = fbsdiag(&wrong);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["error"]["code"], "index-mismatch");
}

#[test]
fn dedup_flag_gives_distinct_labels() {
    let (_dir, graph) = bundled_dir();
    let args = [
        "--format",
        "json",
        "diagnose",
        "--graph",
        s(&graph),
        "--text",
        "assembly misalignment",
        "--level",
        "ProcessFunction",
        "--n",
        "35",
        "--dedup",
    ];
    let p = json_payload(&fbsdiag(&args));
    let labels: Vec<String> = p["causes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["label"].as_str().unwrap().to_lowercase())
        .collect();
    let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
    assert_eq!(distinct.len(), labels.len());
}

#[test]
fn export_writes_csv_and_script() {
    let (dir, graph) = bundled_dir();
    let out = dir.path().join("export");
    let o = fbsdiag(&[
        "--format",
        "json",
        "export",
        "--graph",
        s(&graph),
        "--out",
        s(&out),
    ]);
    let p = json_payload(&o);
    assert_eq!(p["nodes"], 165 + 1176);
    let nodes = std::fs::read_to_string(out.join("nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count() - 1, 165 + 1176);
    let script = std::fs::read_to_string(out.join("graph.cypher")).unwrap();
    assert_eq!(
        script.lines().count() as u64,
        p["nodes"].as_u64().unwrap() + p["relationships"].as_u64().unwrap()
    );
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbsdiag(&[
        "--format",
        "json",
        "eval",
        "synth",
        "--processes",
        "2",
        "--elements",
        "2",
        "--drift",
        "0.5",
        "--out",
        s(dir.path()),
    ]);
    let p = json_payload(&o);
    assert_eq!(p["queries"], 4);
    assert_eq!(p["records"], 12);
    let o = fbsdiag(&["validate", "--graph", s(&dir.path().join("line.dkg"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fbsdiag(&["eval", "synth", "--drift", "1.5", "--out", s(dir.path())])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn serve_reports_startup_failures() {
    let o = fbsdiag(&["serve", "--graph", "/nonexistent/g.dkg", "--port", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let (_dir, graph) = bundled_dir();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = fbsdiag(&[
        "--format",
        "json",
        "serve",
        "--graph",
        s(&graph),
        "--port",
        &port,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["error"]["code"], "bind-error");
}

#[test]
fn serve_answers_health_over_tcp() {
    use std::io::{Read, Write};
    let (_dir, graph) = bundled_dir();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(BIN)
        .args(["serve", "--graph", s(&graph), "--port", &port.to_string()])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(20);
    let response = loop {
        match std::net::TcpStream::connect(("127.0.0.1", port)) {
            Ok(mut stream) => {
                stream
                    .write_all(
                        b"GET /v1/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n",
                    )
                    .unwrap();
                let mut buf = String::new();
                stream.read_to_string(&mut buf).unwrap();
                break buf;
            }
            Err(_) if std::time::Instant::now() < deadline => {
                std::thread::sleep(std::time::Duration::from_millis(50))
            }
            Err(e) => {
                let _ = child.kill();
                panic!("service did not come up: {e}");
            }
        }
    };
    let _ = child.kill();
    let _ = child.wait();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""), "{response}");
}
