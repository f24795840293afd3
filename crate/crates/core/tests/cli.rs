use std::path::Path;
use std::process::{Command, Output};

fn cfbi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfbi")).args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_layout_and_byte_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = cfbi(&["gen-data", "--out", dir.to_str().unwrap(), "--seqs", "4", "--frames", "12", "--size", "64", "--objects", "2", "--seed", "7"]);
        assert!(out.status.success(), "{}", text(&out));
    }
    let seqs: Vec<_> = std::fs::read_dir(&a).unwrap().collect();
    assert_eq!(seqs.len(), 4);
    for s in seqs {
        assert_eq!(std::fs::read_dir(s.unwrap().path().join("frames")).unwrap().count(), 12);
    }
    assert_eq!(files(&a), files(&b));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cfbi(&["gen-data", "--out", tmp.path().to_str().unwrap(), "--objects", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("invalid config"));

    assert_eq!(cfbi(&["train"]).status.code(), Some(1));
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = cfbi(&["--config", cfg.to_str().unwrap(), "gen-data", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("unknown field"));
}

#[test]
fn missing_inputs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(cfbi(&["gen-data", "--out", data.to_str().unwrap(), "--seqs", "1", "--frames", "5"]).status.success());
    let out = cfbi(&["infer", "--data", data.to_str().unwrap(), "--checkpoint", "/nonexistent.safetensors", "--out", "p"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("not found"));

    // Malformed dataset: frames without a first mask.
    std::fs::remove_file(data.join("seq000/masks/00000.png")).unwrap();
    let out = cfbi(&["train", "--data", data.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap(), "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(cfbi(&["gen-data", "--out", data.to_str().unwrap(), "--seqs", "2", "--frames", "4"]).status.success());
    let report = tmp.path().join("report.json");
    let out = cfbi(&["eval", "--pred", data.to_str().unwrap(), "--gt", data.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("J&F 1.000"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(json["j_and_f"], 1.0);
}

#[test]
fn train_infer_eval_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run, pred) = (tmp.path().join("d"), tmp.path().join("run"), tmp.path().join("pred"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    assert!(cfbi(&["gen-data", "--out", &s(&data), "--seqs", "2", "--frames", "8", "--seed", "3"]).status.success());
    let out = cfbi(&["train", "--data", &s(&data), "--out", &s(&run), "--steps", "200", "--seed", "1"]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(run.join("final.safetensors").is_file());
    assert!(run.join("config.toml").is_file());
    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let losses: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 200);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&losses[190..]) < mean(&losses[..10]));

    let ckpt = run.join("final.safetensors");
    let out = cfbi(&["infer", "--data", &s(&data), "--checkpoint", &s(&ckpt), "--out", &s(&pred)]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(std::fs::read_dir(pred.join("seq000/masks")).unwrap().count(), 8);
    let out = cfbi(&["eval", "--pred", &s(&pred), "--gt", &s(&data)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("J "));
}
