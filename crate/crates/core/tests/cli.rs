use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neuroscatter"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin()
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("spawn");
    out
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// 16×16, T=2 run small enough for a smoke test.
fn write_cfg(dir: &Path) {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let cfg = json!({
        "seed": 3,
        "samples": 6,
        "test_fraction": 0.34,
        "sim": {
            "sensor_width": 48, "sensor_height": 48, "n_frames": 24,
            "step_max": 0.05, "glyph_size": 16,
            "scatter": {"thickness_mm": 4.0}
        },
        "preprocess": {
            "insect_eye": {"field": 3, "threshold": 1, "window_us": 10000},
            "bin_count": 2, "out_h": 16, "out_w": 16
        },
        "arch": {"in_h": 16, "in_w": 16, "time_steps": 2},
        "train": {"epochs": 1, "batch_size": 2},
        "paths": {
            "data_dir": p("data"), "tensor_dir": p("tensors"),
            "run_dir": p("run"), "eval_dir": p("eval")
        }
    });
    fs::write(dir.join("cfg.json"), serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen", "preprocess", "train", "eval", "energy", "report"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn usage_and_config_errors_exit_1() {
    let out = bin().arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"seed": 1, "bogus": 2}"#).unwrap();
    assert_ne!(run(dir.path(), &["gen"]).status.code(), Some(0));

    write_cfg(dir.path());
    let mut cfg: Value = serde_json::from_slice(&fs::read(dir.path().join("cfg.json")).unwrap()).unwrap();
    cfg["sim"]["dvs"] = json!({"theta": -1.0});
    fs::write(dir.path().join("cfg.json"), cfg.to_string()).unwrap();
    assert_eq!(run(dir.path(), &["gen"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path());
    let out = run(dir.path(), &["preprocess"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &["eval"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_event_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path());
    ok(dir.path(), &["gen"]);
    let evs = fs::read_dir(dir.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "evs"))
        .unwrap();
    let mut bytes = fs::read(&evs).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&evs, bytes).unwrap();
    assert_eq!(run(dir.path(), &["preprocess"]).status.code(), Some(2));
}

#[test]
fn gen_zero_samples_writes_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_cfg(dir.path());
    ok(dir.path(), &["gen", "--samples", "0"]);
    let manifest = fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    assert!(manifest.trim().is_empty());
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cfg(d);
    ok(d, &["gen"]);
    ok(d, &["preprocess"]);
    ok(d, &["train"]);
    assert!(d.join("run/latest.ckpt").exists());
    let rec: Value = serde_json::from_slice(&fs::read(d.join("run/run_record.json")).unwrap()).unwrap();
    assert_eq!(rec["epochs"].as_array().unwrap().len(), 1);

    // One epoch then a resumed second equals two straight epochs.
    ok(d, &["train", "--resume", "--epochs", "2"]);
    let straight = d.join("straight");
    ok(d, &["train", "--epochs", "2", "--out", straight.to_str().unwrap()]);
    assert_eq!(
        fs::read(d.join("run/run_record.json")).unwrap(),
        fs::read(straight.join("run_record.json")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("run/latest.ckpt")).unwrap(),
        fs::read(straight.join("latest.ckpt")).unwrap()
    );

    ok(d, &["eval"]);
    let metrics: Value = serde_json::from_slice(&fs::read(d.join("eval/metrics.json")).unwrap()).unwrap();
    let n_test = 2;
    assert_eq!(metrics["split"], "test");
    assert_eq!(metrics["samples"].as_array().unwrap().len(), n_test);
    let ssim = metrics["mean_ssim"].as_f64().unwrap();
    assert!(ssim.is_finite() && ssim <= 1.0);

    let frames = fs::read_dir(d.join("eval/frames")).unwrap().map(|e| e.unwrap().path()).collect::<Vec<_>>();
    assert_eq!(frames.len(), n_test);
    for f in &frames {
        let pgms: Vec<_> = fs::read_dir(f).unwrap().collect();
        assert_eq!(pgms.len(), 2, "T frames per sample");
        let id = f.file_name().unwrap().to_str().unwrap();
        let csv = fs::read_to_string(d.join("eval/tracking").join(format!("{id}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x_pred,y_pred,x_true,y_true"));
        assert_eq!(lines.count(), 2, "T rows per sample");
    }
    let first = fs::read_dir(&frames[0]).unwrap().next().unwrap().unwrap().path();
    let pgm = fs::read(first).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n16 16\n255\n".len() + 256);

    ok(d, &["energy"]);
    let energy: Value = serde_json::from_slice(&fs::read(d.join("eval/energy.json")).unwrap()).unwrap();
    for key in ["config_hash", "constants", "sequences", "snn", "ann", "table", "neuron_spike_rates"] {
        assert!(energy.get(key).is_some(), "energy report lacks {key}");
    }
    let table = energy["table"].as_array().unwrap();
    assert_eq!(table.len(), 2);
    for row in table {
        for key in ["model", "input_resolution", "params_m", "ops_g", "acs_g", "macs_g", "energy_mj"] {
            assert!(row.get(key).is_some(), "table row lacks {key}");
        }
    }
    assert_eq!(table[1]["acs_g"].as_f64(), Some(0.0), "dense twin has no ACs");

    let out = bin()
        .arg("--config")
        .arg(d.join("cfg.json"))
        .arg("report")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2 epochs"), "{text}");
    assert!(text.contains("eval (test split, 2 samples)"), "{text}");
    assert!(text.contains("energy(mJ)"), "{text}");
}
