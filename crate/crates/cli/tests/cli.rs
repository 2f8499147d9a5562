use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn eegd3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegd3")).args(args).env_remove("EEGD3_STORE").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = eegd3(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn motor_config(dir: &Path, seed: u64) -> PathBuf {
    let store = dir.join("synth").join("store");
    let body = format!(
        r#"{{"seed": {seed}, "io": {{"store": {store:?}}},
            "training": {{"folds": 2, "epochs": 2}},
            "interpret": {{"surrogates": 19}},
            "downstream": {{"budgets": [1, 4]}},
            "synth": {{"subjects_per_dataset": 4, "trials_per_subject": 6, "blink_steps": 30}}}}"#
    );
    write_config(dir, "motor.json", &body)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn motor_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = motor_config(d, 3);
    ok(&["--config", s(&cfg), "--out", s(&d.join("synth")), "synth"]);
    assert!(d.join("synth/store/manifest.json").exists());
    ok(&["--config", s(&cfg), "--out", s(&d.join("pre")), "pretrain"]);
    for f in ["fold0/params.json", "fold1/params.json", "pretrain_summary.csv", "run.json"] {
        assert!(d.join("pre").join(f).exists(), "missing {f}");
    }
    let ck = s(&d.join("pre")).to_string();
    ok(&["--config", s(&cfg), "--out", s(&d.join("interp")), "interpret", "--checkpoints", &ck]);
    for f in ["component_matching.csv", "electrode_significance.csv", "fold0/filters.csv", "fold0/filter_params.csv", "fold1/topography_c0.csv"] {
        assert!(d.join("interp").join(f).exists(), "missing {f}");
    }
    ok(&["--config", s(&cfg), "--out", s(&d.join("cons")), "consistency", "--checkpoints", &ck]);
    let cons = fs::read_to_string(d.join("cons/consistency.csv")).unwrap();
    assert!(cons.starts_with("component,condition,tc_mean,tc_std,n_folds"));
    ok(&["--config", s(&cfg), "--out", s(&d.join("down")), "downstream", "--checkpoints", &ck]);
    let down: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("down/downstream.json")).unwrap()).unwrap();
    assert!(down.is_object());

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("pre/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "pretrain");
    assert_eq!(run["seed"], 3);
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);

    // Wrong scenario for the command.
    let out = eegd3(&["--config", s(&cfg), "--out", s(&d.join("few")), "fewshot", "--checkpoints", &ck]);
    assert!(!out.status.success());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = motor_config(d, 9);
    ok(&["--config", s(&cfg), "--out", s(&d.join("synth")), "synth"]);
    for tag in ["a", "b"] {
        let pre = d.join(format!("pre_{tag}"));
        ok(&["--config", s(&cfg), "--out", s(&pre), "pretrain"]);
        ok(&["--config", s(&cfg), "--out", s(&d.join(format!("cons_{tag}"))), "consistency", "--checkpoints", s(&pre)]);
    }
    for f in ["pre_{}/pretrain_summary.csv", "pre_{}/fold0/loss_curve.csv", "pre_{}/fold1/params.json", "cons_{}/consistency.csv"] {
        let a = fs::read(d.join(f.replace("{}", "a"))).unwrap();
        let b = fs::read(d.join(f.replace("{}", "b"))).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
    let tensors = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let dir = d.join(format!("pre_{tag}/fold0/tensors"));
        let mut v: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    };
    assert_eq!(tensors("a"), tensors("b"));

    // A different seed changes the weights.
    let other = d.join("pre_c");
    ok(&["--config", s(&cfg), "--seed", "10", "--out", s(&other), "pretrain"]);
    assert_ne!(tensors("a"), tensors("c"));
}

#[test]
fn sleep_fewshot_and_blink() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let store = d.join("synth").join("store");
    let body = format!(
        r#"{{"seed": 5, "scenario": "sleep", "io": {{"store": {store:?}}},
            "training": {{"folds": 2, "epochs": 1, "epoch_size": {{"per_dataset": 32}}}},
            "downstream": {{"budgets": [1, "full"], "steps": 100}},
            "synth": {{"n_recordings": 4, "epochs_per_recording": 60}}}}"#
    );
    let cfg = write_config(d, "sleep.json", &body);
    ok(&["--config", s(&cfg), "--out", s(&d.join("synth")), "synth"]);
    assert!(store.join("labels/night_00.csv").exists());
    ok(&["--config", s(&cfg), "--out", s(&d.join("pre")), "pretrain"]);
    ok(&["--config", s(&cfg), "--out", s(&d.join("few")), "fewshot", "--checkpoints", s(&d.join("pre"))]);
    let csv = fs::read_to_string(d.join("few/fewshot.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,method,budget,mean,std");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines.iter().any(|l| l.starts_with("uar,eegd3,full,")));

    let out = eegd3(&["--config", s(&cfg), "--out", s(&d.join("cons")), "consistency", "--checkpoints", s(&d.join("pre"))]);
    assert!(!out.status.success());

    let mstore = d.join("msynth").join("store");
    let body = format!(r#"{{"seed": 2, "io": {{"store": {mstore:?}}}, "synth": {{"subjects_per_dataset": 3, "trials_per_subject": 4, "blink_steps": 20}}}}"#);
    let blink = write_config(d, "blink.json", &body);
    ok(&["--config", s(&blink), "--out", s(&d.join("msynth")), "synth"]);
    ok(&["--config", s(&blink), "--out", s(&d.join("blink")), "blinkprobe"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("blink/blink_metrics.json")).unwrap()).unwrap();
    assert!(m["trained"]["r"].as_f64().unwrap().is_finite());
    assert!(d.join("blink/blink_panel.svg").exists());
}

#[test]
fn unknown_config_key_fails_with_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"seed": 1, "training": {"epochz": 3}}"#);
    let out = eegd3(&["--config", s(&cfg), "--out", s(&tmp.path().join("o")), "synth"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).expect("stderr is json");
    assert_eq!(err["command"], "synth");
    assert!(err.to_string().contains("epochz"));
}

#[test]
fn missing_out_and_store_are_errors() {
    let out = eegd3(&["synth"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("output directory"));

    let tmp = tempfile::tempdir().unwrap();
    let out = eegd3(&["--out", s(tmp.path()), "pretrain"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("EEGD3_STORE"));
}
