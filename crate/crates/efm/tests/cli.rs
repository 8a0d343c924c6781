//! Black-box tests of the `efm` binary: config handling, output files,
//! determinism, and trace replay.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn efm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path.to_str().unwrap().to_string()
}

const SINGLE_POINT: &str = r#"
scenario = "random_loss"
repetitions = 3
base_seed = 42

[traffic]
total_packets = 20000

[loss]
rates = [0.02]
"#;

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", SINGLE_POINT);
    let out_dir = dir.path().join("out");
    let out = efm(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    for file in [
        "results.csv",
        "groundtruth.csv",
        "manifest.toml",
        "timecourse-0.csv",
        "timecourse-2.csv",
        "reports-0.csv",
    ] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(results.starts_with("point,mechanism,samples,mean_rate"));
    // One row per mechanism, plus groundtruth columns on each.
    assert_eq!(results.lines().count(), 5);
    assert!(results.contains("groundtruth"));
    let manifest = fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("config_hash"));
    assert!(manifest.contains("base_seed = 42"));
}

#[test]
fn identical_config_and_seed_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", SINGLE_POINT);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(efm(&["run", &cfg, "--out", out_a.to_str().unwrap()]).status.success());
    assert!(efm(&["run", &cfg, "--out", out_b.to_str().unwrap()]).status.success());
    for file in ["results.csv", "groundtruth.csv", "timecourse-1.csv", "manifest.toml"] {
        assert_eq!(
            fs::read(out_a.join(file)).unwrap(),
            fs::read(out_b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", SINGLE_POINT);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(efm(&["run", &cfg, "--out", out_a.to_str().unwrap(), "--seed", "7"])
        .status
        .success());
    assert!(efm(&["run", &cfg, "--out", out_b.to_str().unwrap()]).status.success());
    assert_ne!(
        fs::read(out_a.join("groundtruth.csv")).unwrap(),
        fs::read(out_b.join("groundtruth.csv")).unwrap()
    );
}

#[test]
fn run_rejects_multi_point_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.toml",
        "scenario = \"random_loss\"\n[loss]\nrates = [0.01, 0.1]\n",
    );
    let out = efm(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep"));
}

#[test]
fn sweep_writes_per_point_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.toml",
        r#"
scenario = "random_loss"
repetitions = 2

[traffic]
total_packets = 5000

[loss]
rates = [0.01, 0.1]
"#,
    );
    let out_dir = dir.path().join("out");
    let out = efm(&["sweep", &cfg, "--out", out_dir.to_str().unwrap(), "--parallel", "2"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("rate-0.01").join("timecourse-0.csv").exists());
    assert!(out_dir.join("rate-0.1").join("timecourse-1.csv").exists());
    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 9); // header + 2 points x 4 mechanisms
}

#[test]
fn replay_matches_live_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", SINGLE_POINT);
    let out_dir = dir.path().join("out");
    assert!(efm(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--keep-traces"])
        .status
        .success());
    let trace = out_dir.join("trace-0.csv");
    assert!(trace.exists());
    let out = efm(&["replay", trace.to_str().unwrap()]);
    assert!(out.status.success());
    let live = fs::read_to_string(out_dir.join("reports-0.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), live);
}

#[test]
fn replay_reports_parse_errors_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.csv");
    fs::write(
        &trace,
        "observe_time_ns,direction,seq,size_bytes,spin,l,q,r,t\n0,C2S,0,1250,0,0,0,0,0\n1,XXX,1,1250,0,0,0,0,0\n",
    )
    .unwrap();
    let out = efm(&["replay", trace.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn empty_trace_replays_to_empty_reports() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("empty.csv");
    fs::write(&trace, "observe_time_ns,direction,seq,size_bytes,spin,l,q,r,t\n").unwrap();
    let out = efm(&["replay", trace.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("C2S,L,,,,no_measurement"));
}

#[test]
fn invalid_config_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", "scenario = \"warp_drive\"\n");
    let out = efm(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
