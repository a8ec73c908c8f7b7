//! The `btlemap` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn btlemap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btlemap")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines().find_map(|l| l.strip_prefix(key)).unwrap_or_else(|| panic!("no {key} in {out}")).trim()
}

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/scenario.json")
}

/// Advertisements a noiseless emitter grid produces in `secs`, read straight from the scenario JSON.
fn grid_count(secs: f64) -> u64 {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(scenario()).unwrap()).unwrap();
    v["devices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| (secs * 1000.0 / d["adv_interval_ms"].as_f64().unwrap()).ceil() as u64)
        .sum()
}

#[test]
fn dissect_hex_text_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&btlemap(dir.path(), &["dissect", "02 01 06 03 02 0F 18"]));
    assert!(text.contains("Flags [0..3]"), "{text}");
    assert!(text.contains("0x180F"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&btlemap(dir.path(), &["dissect", "--json", "0x0201060302 0F18"]))).unwrap();
    assert_eq!(json["length"], 7);
    assert_eq!(json["children"][1]["offset"], 3);
}

#[test]
fn odd_hex_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = btlemap(dir.path(), &["dissect", "0201060"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("odd number"));
    assert_eq!(btlemap(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(btlemap(dir.path(), &["replay", "x.pcap", "--speed", "2", "--max-speed"]).status.code(), Some(2));
}

#[test]
fn simulate_export_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = stdout(&btlemap(
        d,
        &["simulate", "--headless", "--max-speed", "--duration", "2", scenario().to_str().unwrap()],
    ));
    assert_eq!(field(&sim, "advertisements:").parse::<u64>().unwrap(), grid_count(2.0));
    assert_eq!(field(&sim, "devices:"), "4");
    assert!(d.join(".btlemap/session.jsonl").is_file());

    stdout(&btlemap(d, &["export", "pcap", "out.pcap"]));
    stdout(&btlemap(d, &["export", "rssi", "out.csv"]));
    let csv = std::fs::read_to_string(d.join("out.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, grid_count(2.0) + 1);

    let dissected = stdout(&btlemap(d, &["dissect", "out.pcap", "--json"]));
    let views: serde_json::Value = serde_json::from_str(&dissected).unwrap();
    assert_eq!(views.as_array().unwrap().len() as u64, grid_count(2.0));

    let rep = stdout(&btlemap(d, &["replay", "--headless", "--max-speed", "--session", "again.jsonl", "out.pcap"]));
    assert_eq!(field(&rep, "advertisements:"), field(&sim, "advertisements:"));
    assert_eq!(field(&rep, "partition:"), field(&sim, "partition:"));
}

#[test]
fn config_file_and_bad_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ok.toml"), "session = \"cfg.jsonl\"\n[proximity]\nexponent_n = 2.5\n").unwrap();
    let out = stdout(&btlemap(
        d,
        &[
            "--config",
            "ok.toml",
            "simulate",
            "--headless",
            "--max-speed",
            "--duration",
            "1",
            scenario().to_str().unwrap(),
        ],
    ));
    assert_eq!(field(&out, "session:"), "cfg.jsonl");
    std::fs::write(d.join("bad.toml"), "sesion = \"x\"\n").unwrap();
    let o = btlemap(d, &["--config", "bad.toml", "dissect", "00"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(d.join("bad_prox.toml"), "[proximity]\npath_loss_exponent = 2.5\n").unwrap();
    assert_eq!(btlemap(d, &["--config", "bad_prox.toml", "dissect", "00"]).status.code(), Some(1));
    std::fs::write(d.join("neg_prox.toml"), "[proximity]\nexponent_n = -1.0\n").unwrap();
    let o = btlemap(
        d,
        &["--config", "neg_prox.toml", "simulate", "--headless", "--max-speed", scenario().to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn export_without_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = btlemap(dir.path(), &["export", "pcap", "x.pcap"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("x.pcap").exists());
}
