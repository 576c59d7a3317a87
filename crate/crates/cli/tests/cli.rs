//! End-to-end runs of the binary against a temporary workspace.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modalode"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_dataset(dir: &Path, profile: &str, seed: u64) {
    run_ok(bin().args([
        "gen-dataset",
        "--profile",
        profile,
        "--seed",
        &seed.to_string(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
}

#[test]
fn full_pipeline_on_oscillator() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, "osc-desk-cubic", 7);
    assert!(data.join("manifest.json").exists());
    assert!(data.join("traj_0000.bin").exists());

    let run = tmp.path().join("run");
    run_ok(bin().args([
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--epochs",
        "2",
        "--hidden-layers",
        "2",
        "--width",
        "8",
    ]));
    assert!(run.join("best.model").exists());
    assert!(run.join("final.model").exists());
    let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3); // pre-training record + 2 epochs
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let report = tmp.path().join("report.json");
    let csv_dir = tmp.path().join("csv");
    run_ok(bin().args([
        "eval",
        "--model",
        run.join("best.model").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--horizons",
        "50ms,full",
        "--out",
        report.to_str().unwrap(),
        "--csv-dir",
        csv_dir.to_str().unwrap(),
    ]));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["trajectory_count"], 12);
    assert!(csv_dir.join("per_mode_50ms.csv").exists());
    assert!(csv_dir.join("per_mode_full.csv").exists());

    let wav = tmp.path().join("out.wav");
    let stft = tmp.path().join("stft.csv");
    run_ok(bin().args([
        "render",
        "--bundle",
        data.join("traj_0000.bin").to_str().unwrap(),
        "--wav",
        wav.to_str().unwrap(),
        "--stft",
        stft.to_str().unwrap(),
    ]));
    let wav_bytes = std::fs::read(&wav).unwrap();
    assert_eq!(&wav_bytes[..4], b"RIFF");
    assert!(stft.exists());

    // inspect each artifact kind
    for target in [data.to_str().unwrap(), data.join("traj_0000.bin").to_str().unwrap(), run.join("best.model").to_str().unwrap()] {
        let out = run_ok(bin().args(["inspect", target]));
        serde_json::from_str::<serde_json::Value>(&out).unwrap();
    }
}

#[test]
fn simulate_writes_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("traj.bin");
    run_ok(bin().args([
        "simulate",
        "--modes",
        "8",
        "--sample-rate",
        "44100",
        "--duration",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]));
    let summary = run_ok(bin().args(["inspect", out.to_str().unwrap()]));
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["type"], "bundle");
    assert_eq!(v["mode_count"], 8);
    assert_eq!(v["steps"], 2205);
}

#[test]
fn errors_are_machine_readable_json() {
    let out = bin()
        .args(["inspect", "/nonexistent/path"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert!(v["error"].is_string());

    // unstable configuration refused with a pointer to --force
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "simulate",
            "--modes",
            "100",
            "--sample-rate",
            "44100",
            "--duration",
            "0.01",
            "--out",
            tmp.path().join("x.bin").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("stability"));
}

#[test]
fn gen_dataset_requires_exactly_one_source() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen-dataset", "--out-dir", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn gen_dataset_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "kind": "oscillator",
            "config": {
                "omega0": 400.0,
                "gamma": 110.0,
                "nonlinearity": "cubic",
                "amplitude": [4e5, 8e5],
                "duration": [0.5e-3, 1.5e-3],
                "sample_rate": 44100.0,
                "sim_duration": 0.02,
                "trajectory_count": 2,
                "seed": 3
            }
        })
        .to_string(),
    )
    .unwrap();
    let data = tmp.path().join("d");
    run_ok(bin().args([
        "gen-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]));
    assert!(data.join("traj_0001.bin").exists());
}
