use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;
use svelte_hand::hand_model::HandGeometry;

fn svelte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svelte"))
        .args(args)
        .env_remove("SVELTE_HAND_CONFIG")
        .env_remove("SVELTE_LISTEN")
        .env_remove("SVELTE_BACKEND")
        .env_remove("SVELTE_TICK_HZ")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn calibrate_reproduces_the_apertures() {
    let dir = tempfile::tempdir().unwrap();
    let out = svelte(&["calibrate", "63", "80", "72", "--out", path(dir.path()), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    for r in report["residuals"].as_array().unwrap() {
        assert!(r.as_f64().unwrap().abs() < 0.5);
    }
    let geom = HandGeometry::load(dir.path().join("geometry.calibrated.json")).unwrap();
    assert!((geom.finger_length - HandGeometry::calibrated().finger_length).abs() < 1e-6);
}

#[test]
fn calibrate_rejects_degenerate_targets() {
    let dir = tempfile::tempdir().unwrap();
    let out = svelte(&["calibrate", "0", "0", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("geometry.calibrated.json").exists());
}

#[test]
fn larger_apertures_give_longer_fingers() {
    let dir = tempfile::tempdir().unwrap();
    let out = svelte(&["calibrate", "73", "90", "82", "--out", path(dir.path()), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fitted = json(&out)["geometry"]["finger_length"].as_f64().unwrap();
    assert!(fitted > HandGeometry::calibrated().finger_length, "{fitted}");
}

#[test]
fn demo_writes_report_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = svelte(&["demo", "lego-pinch", "--out", path(dir.path()), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["outcome"]["held"], Value::Bool(true));
    let frames: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    assert_eq!(frames.len(), 2, "{frames:?}");
    assert!(frames.iter().any(|n| n.starts_with("frame_f1_")));
    assert!(frames.iter().any(|n| n.starts_with("frame_f2_")));

    let trace = dir.path().join("trace.jsonl");
    let out = svelte(&["replay", path(&trace), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["identical"], Value::Bool(true));

    // Same run twice gives the same bytes.
    let again = tempfile::tempdir().unwrap();
    svelte(&["demo", "lego-pinch", "--out", path(again.path())]);
    assert_eq!(
        std::fs::read(&trace).unwrap(),
        std::fs::read(again.path().join("trace.jsonl")).unwrap()
    );
}

#[test]
fn replay_reports_the_divergent_tick() {
    let dir = tempfile::tempdir().unwrap();
    svelte(&["demo", "screwdriver-lateral", "--out", path(dir.path())]);
    let trace = dir.path().join("trace.jsonl");
    let text = std::fs::read_to_string(&trace).unwrap();
    let tampered = text.replacen("\"tick\":40,", "\"tick\":40,\"x\":0,", 1);
    assert_ne!(tampered, text);
    std::fs::write(&trace, tampered).unwrap();
    let out = svelte(&["replay", path(&trace)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tick 40"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn export_writes_contact_frames() {
    let dir = tempfile::tempdir().unwrap();
    svelte(&["demo", "flashlight-opposition", "--out", path(dir.path())]);
    let exported = dir.path().join("frames");
    let out = svelte(&[
        "export",
        path(&dir.path().join("trace.jsonl")),
        "--out",
        path(&exported),
        "--every",
        "20",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let frames = json(&out);
    let frames = frames.as_array().unwrap();
    assert!(!frames.is_empty());
    assert_eq!(frames.len() % 3, 0, "all three fingers touch in opposition");
    for f in frames {
        assert!(Path::new(f["file"].as_str().unwrap()).exists());
        assert!(f["contact_area"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn config_comes_from_the_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hand.json");
    std::fs::write(&cfg, r#"{"setup": {"world": {"hold_ticks": 5}}}"#).unwrap();
    let run = |extra: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_svelte"));
        cmd.args(["demo", "lego-pinch", "--json", "--out", path(&dir.path().join("d"))]);
        match extra {
            Some(p) => cmd.env("SVELTE_HAND_CONFIG", p),
            None => cmd.env_remove("SVELTE_HAND_CONFIG"),
        };
        cmd.output().unwrap()
    };
    let short = json(&run(Some(&cfg)))["outcome"]["ticks"].as_u64().unwrap();
    let default = json(&run(None))["outcome"]["ticks"].as_u64().unwrap();
    assert_eq!(default - short, 25);

    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(run(Some(&cfg)).status.code(), Some(2));
    let out = svelte(&["demo", "lego-pinch", "--config", path(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve() -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_svelte"))
        .args(["serve", "--socket", "127.0.0.1:0", "--json"])
        .env_remove("SVELTE_HAND_CONFIG")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"].as_str().unwrap().to_string();
    (Server(child), addr)
}

#[test]
fn grasp_against_a_running_service_reaches_holding() {
    let (_server, addr) = serve();
    let out = svelte(&["grasp", "lateral", "--object", "screwdriver-lateral", "--socket", &addr, "--release", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["reached_holding"], Value::Bool(true));
    let phases: Vec<_> = report["phases"].as_array().unwrap().iter().map(|p| p.as_str().unwrap()).collect();
    assert_eq!(
        phases,
        ["opening_f1", "positioning_flipper", "closing_f1", "holding", "releasing", "idle"]
    );
    assert_eq!(report["outcome"]["held"], Value::Bool(true));

    // Lateral hold refuses a twist, verbatim, as a precondition failure.
    let out = svelte(&["grasp", "lateral", "--socket", &addr, "--twist"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("twist only in pinch grasp"));
}
