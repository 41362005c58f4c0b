mod common;

use std::path::Path;

use common::{code, mindmesh, s, tiny_dataset, write_tiny_config};
use mindmesh_cli::RunConfig;

fn mean_nmae(metrics_csv: &Path) -> f64 {
    let text = std::fs::read_to_string(metrics_csv).unwrap();
    let vals: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(!vals.is_empty());
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn synth_writes_manifest_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = tiny_dataset(dir.path(), &cfg);
    assert!(data.join("manifest.json").is_file());
    let echoed = RunConfig::load(&data.join("config.json")).unwrap();
    assert_eq!(echoed, RunConfig::load(&cfg).unwrap());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let out = mindmesh(&["gradcheck", "--seeds", "3", "--report", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().last().unwrap().ends_with("PASS"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(json["entries"].as_array().unwrap().len() > 20);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(code(&mindmesh(&["train", "--bogus"])), 2);
    assert_eq!(code(&mindmesh(&["--bogus"])), 2);
    assert_eq!(code(&mindmesh(&[])), 2);
    assert_eq!(code(&mindmesh(&["frobnicate"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&mindmesh(&["synth", "-c", s(&missing)])), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"synth": {"trials": 0}}"#).unwrap();
    assert_eq!(code(&mindmesh(&["synth", "-c", s(&bad), "--out", s(&dir.path().join("d"))])), 2);
    std::fs::write(&bad, r#"{"sed": 3}"#).unwrap();
    assert_eq!(code(&mindmesh(&["synth", "-c", s(&bad)])), 2);

    let threads = std::process::Command::new(env!("CARGO_BIN_EXE_mindmesh"))
        .args(["align", "--input", s(dir.path()), "--out", s(&dir.path().join("o"))])
        .env("MINDMESH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let nowhere = dir.path().join("nowhere");
    let out = dir.path().join("out");
    assert_eq!(code(&mindmesh(&["eval", "-c", s(&cfg), "--data", s(&nowhere), "--out", s(&out)])), 3);
    assert_eq!(code(&mindmesh(&["preprocess", "-c", s(&cfg), "--data", s(&nowhere), "--out", s(&out)])), 3);
    assert_eq!(code(&mindmesh(&["align", "--input", s(&nowhere), "--out", s(&out)])), 3);
}

#[test]
fn help_documents_every_flag_with_defaults() {
    let out = mindmesh(&["--help"]);
    assert_eq!(code(&out), 0);
    let top = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "preprocess", "train", "eval", "infer", "render", "gradcheck", "align"] {
        assert!(top.contains(cmd), "{cmd} missing from help");
    }
    let train = String::from_utf8_lossy(&mindmesh(&["train", "--help"]).stdout).to_string();
    for flag in ["--config", "--data", "--windows", "--out", "--log-level"] {
        assert!(train.contains(flag), "{flag} missing from train help");
    }
    assert!(train.matches("[default:").count() >= 5, "{train}");
    let infer = String::from_utf8_lossy(&mindmesh(&["infer", "--help"]).stdout).to_string();
    assert!(infer.contains("[default: 30]") && infer.contains("[default: 8]"), "{infer}");
}

#[test]
fn dump_config_round_trips() {
    let out = mindmesh(&["--dump-config"]);
    assert_eq!(code(&out), 0);
    let cfg: RunConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn full_pipeline_improves_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_tiny_config(root);
    let data = tiny_dataset(root, &cfg);

    let pre = root.join("pre");
    assert_eq!(code(&mindmesh(&["preprocess", "-c", s(&cfg), "--data", s(&data), "--out", s(&pre)])), 0);
    assert!(pre.join("windows.eegw").is_file() && pre.join("norm.json").is_file());

    let run = root.join("run");
    let out = mindmesh(&["train", "-c", s(&cfg), "--data", s(&data), "--windows", s(&pre), "--out", s(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.mmck", "loss.csv", "config.json", "checkpoint_000010.mmck", "checkpoint_000030.mmck"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    let untrained = root.join("eval0");
    let trained = root.join("eval1");
    assert_eq!(code(&mindmesh(&["eval", "-c", s(&cfg), "--data", s(&data), "--out", s(&untrained)])), 0);
    let model = run.join("model.mmck");
    let out = mindmesh(&["eval", "-c", s(&cfg), "--data", s(&data), "--checkpoint", s(&model), "--out", s(&trained)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("(holdout)"));
    let (before, after) = (mean_nmae(&untrained.join("metrics.csv")), mean_nmae(&trained.join("metrics.csv")));
    assert!(after < before, "trained nMAE {after} not below untrained {before}");

    let maps = root.join("maps");
    let eeg = data.join("trial_2").join("recording.eegb");
    let template = data.join("template.obj");
    let norm = run.join("norm.json");
    let out = mindmesh(&[
        "infer", "-c", s(&cfg), "--checkpoint", s(&model), "--eeg", s(&eeg), "--norm", s(&norm),
        "--template", s(&template), "--out", s(&maps),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let n_maps = std::fs::read_dir(&maps).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pmap")
    }).count();
    assert!(n_maps > 0);

    let frames = root.join("frames");
    let out = mindmesh(&["render", "-c", s(&cfg), "--maps", s(&maps), "--template", s(&template), "--out", s(&frames)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pngs: Vec<_> = std::fs::read_dir(&frames).unwrap().map(|e| e.unwrap().path()).filter(|p| {
        p.extension().is_some_and(|x| x == "png")
    }).collect();
    assert_eq!(pngs.len(), n_maps);
    let first = std::fs::read(&pngs[0]).unwrap();
    assert_eq!(&first[1..4], b"PNG");
}

#[test]
fn outputs_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(code(&mindmesh(&["synth", "-c", s(&cfg), "--out", s(d)])), 0);
    }
    for f in ["manifest.json", "config.json", "template.obj", "trial_0/recording.eegb", "trial_1/00003.pmap"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    // Rerunning into the same directory leaves artifacts unchanged.
    let before = std::fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(code(&mindmesh(&["synth", "-c", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), before);
}

#[test]
fn align_recovers_rigid_copies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = tiny_dataset(dir.path(), &cfg);
    let input = dir.path().join("objs");
    std::fs::create_dir(&input).unwrap();
    std::fs::copy(data.join("template.obj"), input.join("a.obj")).unwrap();
    std::fs::copy(data.join("trial_0").join("00004.obj"), input.join("b.obj")).unwrap();
    let out = dir.path().join("aligned");
    let run = mindmesh(&["align", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("a.obj").is_file() && out.join("b.obj").is_file());
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("transforms.json")).unwrap()).unwrap();
    let t = t.as_array().unwrap();
    assert_eq!(t.len(), 2);
    let rot: Vec<f64> = t[0]["transform"]["rotation"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (i, r) in rot.iter().enumerate() {
        let id = if i % 4 == 0 { 1.0 } else { 0.0 };
        assert!((r - id).abs() < 1e-9, "reference transform is not identity: {rot:?}");
    }
}

#[test]
fn failed_runs_leave_no_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let nowhere = dir.path().join("nowhere");
    for cmd in ["eval", "preprocess", "train"] {
        let out = dir.path().join(cmd);
        assert_eq!(code(&mindmesh(&[cmd, "-c", s(&cfg), "--data", s(&nowhere), "--out", s(&out)])), 3);
        assert!(!out.exists(), "{cmd} created its output directory");
    }
}
