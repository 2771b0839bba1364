use std::path::Path;
use std::process::{Command, Output};

fn gazeshare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazeshare")).args(args).output().unwrap()
}

fn configs(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn read(dir: &Path, f: &str) -> Vec<u8> {
    std::fs::read(dir.join(f)).unwrap()
}

#[test]
fn same_seed_same_report_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        let o = gazeshare(&["evaluate", "--schedule", "9pt", "--view", "vertical", "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dir
    };
    let (a, b, c) = (out("a", "5"), out("b", "5"), out("c", "6"));
    for f in ["report.txt", "report.json"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
        assert_ne!(read(&a, f), read(&c, f), "{f}");
    }
    let json: serde_json::Value = serde_json::from_slice(&read(&a, "report.json")).unwrap();
    assert_eq!(json["points"].as_array().unwrap().len(), 9);
    assert_eq!(json["view_label"], "vertical");
}

#[test]
fn offline_simulation_replays_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("sim.log");
    let cfg = configs("hub.toml");
    let o = gazeshare(&[
        "simulate", "--config", &cfg, "--participants", "4", "--seed", "7", "--duration", "2", "--offline", "--record",
        log.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(&log).unwrap();
    gazeshare(&["simulate", "--config", &cfg, "--seed", "7", "--duration", "2", "--offline", "--record", log.to_str().unwrap()]);
    assert_eq!(first, std::fs::read(&log).unwrap());

    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = gazeshare(&["replay", "--config", &cfg, "--replay", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        (std::fs::read(out).unwrap(), summary)
    };
    let (a, sa) = run("a.ndjson");
    let (b, sb) = run("b.ndjson");
    assert_eq!(a, b);
    assert_eq!(sa["broadcast_sha256"], sb["broadcast_sha256"]);
    assert_eq!(sa["gaze_mapped"], 4 * 120);
    assert_eq!(sa["ticks"], 60);
}

#[test]
fn evaluate_reads_recordings() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("sim.log");
    gazeshare(&["simulate", "--participants", "2", "--duration", "18", "--offline", "--record", log.to_str().unwrap()]);
    let dir = tmp.path().join("r");
    let o = gazeshare(&["evaluate", "--replay", log.to_str().unwrap(), "--participant", "p2", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(read(&dir, "report.txt")).unwrap();
    assert!(text.starts_with("view: horizontal\n"), "{text}");
}

#[test]
fn exit_codes() {
    assert_eq!(gazeshare(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gazeshare(&["serve", "--tick-hz", "fast"]).status.code(), Some(2));
    assert_eq!(gazeshare(&["evaluate", "--out", "/dev/null/x", "--schedule", "5pt"]).status.code(), Some(1));
    // below the 20 Hz floor
    assert_eq!(gazeshare(&["replay", "--tick-hz", "10", "--replay", "/nonexistent"]).status.code(), Some(1));
    let o = gazeshare(&["replay", "--replay", "/nonexistent/log"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert_eq!(gazeshare(&["--help"]).status.code(), Some(0));
}
