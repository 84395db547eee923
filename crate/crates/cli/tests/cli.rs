use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use osmag_nav::fixtures::five_room_enriched;
use osmag_nav::osmag::{KEY_OBJECT_NAME, KEY_PARENT};
use osmag_nav::{serialize_osmag, MapNode, MetricPoint};

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/assets/fixtures")
}

fn asset(name: &str) -> PathBuf {
    assets().join(name)
}

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_osmag-nav"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["validate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_2() {
    let o = run(&["validate", "/nonexistent/map.osm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn validate_reports_violations() {
    let o = run(&["validate", p(&asset("five_room_enriched.osm"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0 violations");

    let mut map = five_room_enriched();
    let at = map.to_geo(MetricPoint::new(1.0, 1.0)).unwrap();
    map.insert_node(
        MapNode::new(99_999, at)
            .with_tag(KEY_OBJECT_NAME, "ghost")
            .with_tag(KEY_PARENT, "4242"),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.osm");
    std::fs::write(&bad, serialize_osmag(&map)).unwrap();
    let o = run(&["--json", "validate", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!v["violations"].as_array().unwrap().is_empty());
}

#[test]
fn render_writes_pgm_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.pgm");
    let o = run(&[
        "--json",
        "render",
        p(&asset("five_room.osm")),
        "--res",
        "0.2",
        "-o",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("grid.json")).unwrap()).unwrap();
    assert_eq!(meta["resolution"], 0.2);
    let (w, h) = (meta["width"].as_u64().unwrap(), meta["height"].as_u64().unwrap());
    // Plain PGM: magic, optional comments, dimensions, max value, then ASCII pixels.
    let pgm = std::fs::read_to_string(&out).unwrap();
    let mut tokens = pgm
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(str::split_whitespace);
    assert_eq!(tokens.next(), Some("P2"));
    assert_eq!(
        (tokens.next(), tokens.next()),
        (Some(w.to_string().as_str()), Some(h.to_string().as_str()))
    );
    assert_eq!(tokens.next(), Some("255"));
    let pixels: Vec<u8> = tokens.map(|t| t.parse().unwrap()).collect();
    assert_eq!(pixels.len() as u64, w * h);
    for value in ["free_value", "occupied_value"] {
        let v = meta[value].as_u64().unwrap() as u8;
        assert!(pixels.contains(&v), "no {value} pixels");
    }
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["sidecar"].as_str().unwrap().ends_with("grid.json"));
}

#[test]
fn query_prints_a_plan() {
    let o = run(&["--json", "query", p(&asset("five_room_enriched.osm")), "sink"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["query"], "sink");
    assert_eq!(v["plan"]["rooms"][0]["area_id"], osmag_nav::fixtures::LOUNGE);

    let o = run(&[
        "query",
        p(&asset("five_room_enriched.osm")),
        "sink",
        "--mode",
        "rooms-only",
        "--print-prompt",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("hash: "));
}

#[test]
fn scripted_backend_without_a_reply_fails_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("replies.json");
    std::fs::write(&fixtures, "{}").unwrap();
    let o = run(&[
        "query",
        p(&asset("five_room_enriched.osm")),
        "sink",
        "--backend",
        "scripted",
        "--fixtures",
        p(&fixtures),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn live_credential_only_from_environment_and_never_echoed() {
    let map = asset("five_room_enriched.osm");
    let o = run(&[
        "query",
        p(&map),
        "sink",
        "--backend",
        "live",
        "--api-key-env",
        "OSMAG_NAV_CLI_TEST_UNSET",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("OSMAG_NAV_CLI_TEST_UNSET"));
    assert_eq!(
        run(&["query", p(&map), "sink", "--api-key", "x"]).status.code(),
        Some(2)
    );

    let secret = "sk-cli-secret-value-42";
    let o = run_env(
        &[
            "-vv",
            "query",
            p(&map),
            "sink",
            "--backend",
            "live",
            "--api-key-env",
            "OSMAG_NAV_CLI_TEST_KEY",
            "--base-url",
            "http://127.0.0.1:9/v1",
            "--timeout",
            "0.5",
        ],
        &[("OSMAG_NAV_CLI_TEST_KEY", secret)],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!stdout(&o).contains(secret) && !stderr(&o).contains(secret));
}

#[test]
fn enrich_reproduces_the_shipped_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("enriched.osm");
    let o = run(&[
        "enrich",
        p(&asset("five_room.osm")),
        p(&asset("five_room_records.json")),
        "-o",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(asset("five_room_enriched.osm")).unwrap()
    );
    let o = run(&[
        "enrich",
        p(&asset("five_room.osm")),
        p(&asset("five_room_records.json")),
        "-o",
        p(&out),
        "--backend",
        "heuristic",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.jsonl");
    let report = dir.path().join("report.json");
    let o = run(&[
        "simulate",
        p(&asset("five_room_experiment.json")),
        "-o",
        p(&records),
        "--report",
        p(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = std::fs::read_to_string(&records).unwrap();
    assert!(lines.lines().count() > 0);

    let again = dir.path().join("again.json");
    let csv = dir.path().join("table.csv");
    let o = run(&["eval", p(&records), "-o", p(&again), "--csv", p(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&again).unwrap()).unwrap();
    assert_eq!(a["overall"], b["overall"]);
    assert_eq!(a["by_category"], b["by_category"]);

    let mut reader = csv_rows(&std::fs::read_to_string(&csv).unwrap());
    let header = reader.remove(0);
    assert!(reader.iter().all(|r| r.len() == header.len()));
    assert!(reader.iter().any(|r| r[0] == "(o,r)"));

    let o = run(&["eval", "/nonexistent.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

/// Minimal reader for the quoted CSV the tool writes.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| {
            let mut cells = vec![String::new()];
            let mut quoted = false;
            for c in line.chars() {
                match c {
                    '"' => quoted = !quoted,
                    ',' if !quoted => cells.push(String::new()),
                    _ => cells.last_mut().unwrap().push(c),
                }
            }
            cells
        })
        .collect()
}
