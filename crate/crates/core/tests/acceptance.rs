//! Acceptance criteria. Prints one `PASS`/`FAIL` line per criterion and
//! fails if any criterion fails.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use candle::{DType, Device};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfbi::data::{generate_sequences, SequenceRecord, SynthConfig};
use cfbi::embedding::LabelMap;
use cfbi::inference::segment_sequence;
use cfbi::matching::{biased_distance, global_match_objects, multi_local_match_objects, BiasPair, WindowSet};
use cfbi::metrics::{boundary_f, evaluate, region_j, EvalReport, Mask, SequencePair};
use cfbi::training::{save_checkpoint, train, TrainConfig};
use cfbi::{Cfbi, ModelConfig};
use common::gradcases;
use common::{flat, max_abs_diff, oracle_global, oracle_local, random_labels, square, Grid};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Bypasses the test harness capture so the lines appear in `cargo test` output.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn random_windows(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut radii: Vec<usize> = (1..=8).filter(|_| rng.random_bool(0.5)).collect();
    if radii.is_empty() {
        radii.push(rng.random_range(1..=8));
    }
    radii
}

fn ac1_matching_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0f64;
    let instances = 150;
    let mut maps = 0;
    for _ in 0..instances {
        let (h, w, c) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let cur = Grid::random(&mut rng, h, w, c, 1.0);
        let other = Grid::random(&mut rng, h, w, c, 1.0);
        let labels = random_labels(&mut rng, h, w, 3);
        let (b_f, b_b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let bp = BiasPair::new(b_f, b_b, &Device::Cpu, DType::F64).unwrap();
        let radii = random_windows(&mut rng);
        let ids = [1u8, 2, 3];
        let global = global_match_objects(&cur.to_map(), &other.to_map(), &labels, &ids, &bp).unwrap();
        let windows = WindowSet::new(radii.clone()).unwrap();
        let local = multi_local_match_objects(&cur.to_map(), &other.to_map(), &labels, &ids, &windows, &bp).unwrap();
        let n = radii.len();
        for (i, &id) in ids.iter().enumerate() {
            let (fg, bg) = oracle_global(&cur, &other, &labels, id, b_f, b_b);
            let g = global.get(i).unwrap();
            worst = worst.max(max_abs_diff(&flat(&g.get(0).unwrap()), &fg));
            worst = worst.max(max_abs_diff(&flat(&g.get(1).unwrap()), &bg));
            let l = local.get(i).unwrap();
            for (j, &k) in radii.iter().enumerate() {
                let (fg, bg) = oracle_local(&cur, &other, &labels, id, k, b_f, b_b);
                worst = worst.max(max_abs_diff(&flat(&l.get(j).unwrap()), &fg));
                worst = worst.max(max_abs_diff(&flat(&l.get(n + j).unwrap()), &bg));
            }
            maps += 2 + 2 * n;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && secs < 60.0,
        format!("{instances} instances, {maps} maps, max |err| {worst:.2e} (tol 1e-6), {secs:.1}s (limit 60s)"),
    )
}

fn ac2_distance_spot_values() -> Verdict {
    let cases = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.462117), (0.0, -2.0, -0.761594)];
    let errs: Vec<f64> = cases.iter().map(|&(d2, b, want)| (biased_distance(d2, b) - want).abs()).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    verdict(
        worst <= 1e-5,
        format!(
            "D(0,0) {:.6}, D(1,0) {:.6}, D(0,-2) {:.6}, max |err| {worst:.1e} (tol 1e-5)",
            biased_distance(0.0, 0.0),
            biased_distance(1.0, 0.0),
            biased_distance(0.0, -2.0)
        ),
    )
}

type GradCase = (&'static str, fn() -> common::GradCheck);

fn ac3_gradients() -> Verdict {
    let start = Instant::now();
    let cases: [GradCase; 5] = [
        ("distance", gradcases::distance_case),
        ("matching", gradcases::matching_case),
        ("gates", gradcases::gate_case),
        ("bootstrapped loss", gradcases::bootstrap_case),
        ("training step", gradcases::training_step_case),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, case) in cases {
        let r = case();
        pass &= r.passes(gradcases::MIN_POINTS, gradcases::TOL);
        parts.push(format!("{name}: {} pts, rel {:.1e}, {} kinks skipped", r.checked, r.max_rel_err, r.kinks));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    verdict(pass, format!("{} (tol 1e-4, >=20 pts each), {secs:.1}s", parts.join("; ")))
}

fn candidate_empty(labels: &LabelMap, py: usize, px: usize, k: Option<usize>, id: u8, fg: bool) -> bool {
    for qy in 0..labels.height() {
        for qx in 0..labels.width() {
            let inside = k.is_none_or(|k| py.abs_diff(qy) <= k && px.abs_diff(qx) <= k);
            if inside && ((labels.get(qy, qx) == id) == fg) {
                return false;
            }
        }
    }
    true
}

fn ac4_window_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let cases = 1200;
    let mut violations = 0usize;
    for _ in 0..cases {
        let (h, w, c) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=6));
        let cur = Grid::random(&mut rng, h, w, c, 1.0);
        let prev = Grid::random(&mut rng, h, w, c, 1.0);
        let max_id = rng.random_range(0..=2);
        let labels = random_labels(&mut rng, h, w, max_id);
        let bp = BiasPair::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), &Device::Cpu, DType::F64).unwrap();
        let radii = random_windows(&mut rng);
        let n = radii.len();
        let id = 1u8;
        let local = flat(
            &multi_local_match_objects(&cur.to_map(), &prev.to_map(), &labels, &[id], &WindowSet::new(radii.clone()).unwrap(), &bp).unwrap(),
        );
        let global = flat(&global_match_objects(&cur.to_map(), &prev.to_map(), &labels, &[id], &bp).unwrap());
        let hw = h * w;
        for p in 0..hw {
            let (py, px) = (p / w, p % w);
            for (kind, fg) in [(0usize, true), (1, false)] {
                for j in 0..n {
                    let v = local[(kind * n + j) * hw + p];
                    if j + 1 < n && v < local[(kind * n + j + 1) * hw + p] {
                        violations += 1;
                    }
                    if (v == 1.0) != candidate_empty(&labels, py, px, Some(radii[j]), id, fg) {
                        violations += 1;
                    }
                }
                let g = global[kind * hw + p];
                if (g == 1.0) != candidate_empty(&labels, py, px, None, id, fg) {
                    violations += 1;
                }
            }
        }
    }
    verdict(violations == 0, format!("{cases} fuzzed cases, {violations} violations of monotonicity or the empty-set rule"))
}

fn ac5_reuse_efficiency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (h, w, c) = (64, 64, 32);
    let cur = Grid::random(&mut rng, h, w, c, 1.0).to_map();
    let prev = Grid::random(&mut rng, h, w, c, 1.0).to_map();
    let mut labels = square(h, w, 20, 18, 16, 1);
    for y in 40..52 {
        for x in 36..54 {
            labels.set(y, x, 2);
        }
    }
    let bp = BiasPair::zeros(&Device::Cpu, DType::F64).unwrap();
    let multi = WindowSet::new(vec![2, 4, 6, 8, 10, 12]).unwrap();
    let single = WindowSet::new(vec![12]).unwrap();
    let time = |windows: &WindowSet| {
        let mut best = f64::INFINITY;
        for _ in 0..7 {
            let start = Instant::now();
            multi_local_match_objects(&cur, &prev, &labels, &[1, 2], windows, &bp).unwrap();
            best = best.min(start.elapsed().as_secs_f64());
        }
        best
    };
    time(&multi);
    let (t_multi, t_single) = (time(&multi), time(&single));
    let ratio = t_multi / t_single;
    verdict(
        ratio <= 1.3,
        format!(
            "64x64x32 grid, 2 objects: K={{2..12}} {:.1} ms vs k=12 {:.1} ms, ratio {ratio:.3} (limit 1.3)",
            t_multi * 1e3,
            t_single * 1e3
        ),
    )
}

fn score(model: &Cfbi, seqs: &[SequenceRecord]) -> EvalReport {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for seq in seqs {
        let gt: Vec<LabelMap> = seq.labels().unwrap().into_iter().cloned().collect();
        let results = segment_sequence(model, &seq.frames, &gt[0]).unwrap();
        predicted.push(std::iter::once(gt[0].clone()).chain(results.into_iter().map(|r| r.labels)).collect::<Vec<_>>());
        truth.push(gt);
    }
    let pairs: Vec<SequencePair<'_>> = seqs
        .iter()
        .zip(predicted.iter().zip(&truth))
        .map(|(s, (p, g))| SequencePair {
            name: &s.id,
            predicted: p,
            ground_truth: g,
        })
        .collect();
    evaluate(&pairs, None).unwrap()
}

const OVERFIT_STEPS: usize = 1000;

fn ac6_overfit(tmp: &Path) -> Verdict {
    let data = generate_sequences(&SynthConfig {
        sequences: 4,
        frames: 12,
        height: 64,
        width: 64,
        objects: 2,
        seed: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = Cfbi::new(&ModelConfig::desk(), 0, &Device::Cpu, DType::F32).unwrap();
    let start = Instant::now();
    train(&model, &data, &TrainConfig { steps: OVERFIT_STEPS, ..TrainConfig::default() }, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let report = score(&model, &data);

    // The same model through the command line: infer, then eval.
    let ckpt = tmp.join("overfit.safetensors");
    save_checkpoint(&model, OVERFIT_STEPS, &ckpt).unwrap();
    let data_dir = tmp.join("overfit_data");
    for seq in &data {
        cfbi::data::write_sequence(&data_dir, seq).unwrap();
    }
    let pred = tmp.join("overfit_pred");
    let bin = env!("CARGO_BIN_EXE_cfbi");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let infer = Command::new(bin)
        .args(["infer", "--data", &s(&data_dir), "--checkpoint", &s(&ckpt), "--out", &s(&pred)])
        .output()
        .unwrap();
    let eval = Command::new(bin).args(["eval", "--pred", &s(&pred), "--gt", &s(&data_dir)]).output().unwrap();
    let cli_line = if infer.status.success() && eval.status.success() {
        String::from_utf8_lossy(&eval.stdout).trim().to_string()
    } else {
        "cli run failed".to_string()
    };
    verdict(
        report.mean_j >= 0.8 && report.j_and_f >= 0.8 && secs <= 1800.0,
        format!(
            "{OVERFIT_STEPS} steps in {secs:.0}s: J {:.3} F {:.3} J&F {:.3} (need J, J&F >= 0.80); cli infer+eval: {cli_line}",
            report.mean_j, report.mean_f, report.j_and_f
        ),
    )
}

const ABLATION_STEPS: usize = 1000;

fn ac7_background_ablation() -> Verdict {
    let distractor = |seed, sequences| {
        generate_sequences(&SynthConfig {
            sequences,
            distractor: true,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    };
    let train_set = distractor(21, 4);
    let held_out = distractor(22, 6);
    let mut with_bg = Vec::new();
    let mut without_bg = Vec::new();
    for seed in 0..3u64 {
        for background in [true, false] {
            let cfg = ModelConfig {
                background,
                ..ModelConfig::desk()
            };
            let model = Cfbi::new(&cfg, seed, &Device::Cpu, DType::F32).unwrap();
            let tc = TrainConfig {
                steps: ABLATION_STEPS,
                seed,
                ..TrainConfig::default()
            };
            train(&model, &train_set, &tc, None).unwrap();
            let j = score(&model, &held_out).mean_j;
            if background { with_bg.push(j) } else { without_bg.push(j) }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let fmt = |v: &[f64]| v.iter().map(|j| format!("{j:.3}")).collect::<Vec<_>>().join(",");
    let detail_runs = format!("with BG [{}], without BG [{}]", fmt(&with_bg), fmt(&without_bg));
    let (m_bg, m_no) = (median(&mut with_bg), median(&mut without_bg));
    verdict(
        m_bg > m_no,
        format!("held-out distractor J over 3 seeds, {ABLATION_STEPS} steps: median with BG {m_bg:.3} vs without {m_no:.3}; {detail_runs}"),
    )
}

fn ac8_metrics() -> Verdict {
    let m = |l: &LabelMap| l.binary_mask(1);
    let j_of = |a: &LabelMap, b: &LabelMap| {
        let (h, w) = (a.height(), a.width());
        region_j(&Mask::new(h, w, &m(a)).unwrap(), &Mask::new(h, w, &m(b)).unwrap()).unwrap()
    };
    let f_of = |a: &LabelMap, b: &LabelMap, r: f64| {
        let (h, w) = (a.height(), a.width());
        boundary_f(&Mask::new(h, w, &m(a)).unwrap(), &Mask::new(h, w, &m(b)).unwrap(), r).unwrap()
    };
    let a = square(8, 8, 1, 1, 3, 1);
    let far = square(8, 8, 5, 5, 3, 1);
    let box1 = square(4, 4, 0, 0, 2, 1);
    let box2 = square(4, 4, 0, 1, 2, 1);
    let big = square(16, 16, 4, 4, 6, 1);
    let shifted = square(16, 16, 4, 5, 6, 1);
    let fixtures = [
        ("J identical", j_of(&a, &a), 1.0),
        ("J disjoint", j_of(&a, &far), 0.0),
        ("J 2/6 overlap", j_of(&box1, &box2), 2.0 / 6.0),
        ("F identical", f_of(&a, &a, 1.0), 1.0),
        ("F shifted square, r=1", f_of(&shifted, &big, 1.0), 1.0),
    ];
    let fixtures_ok = fixtures.iter().all(|(_, got, want)| (got - want).abs() < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut violations = 0;
    let fuzz = 500;
    for _ in 0..fuzz {
        let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
        let pa: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        let pb: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        let (ma, mb) = (Mask::new(h, w, &pa).unwrap(), Mask::new(h, w, &pb).unwrap());
        let mut last = -1.0;
        for r in [0.0, 1.0, 1.5, 2.0, 4.0] {
            let f = boundary_f(&ma, &mb, r).unwrap();
            if f != boundary_f(&mb, &ma, r).unwrap() || f < last || !(0.0..=1.0).contains(&f) {
                violations += 1;
            }
            last = f;
        }
    }
    let summary = fixtures.iter().map(|(n, got, _)| format!("{n} {got:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        fixtures_ok && violations == 0,
        format!("{summary}; {fuzz} fuzzed pairs, {violations} symmetry/monotonicity violations"),
    )
}

fn ac9_determinism(tmp: &Path) -> Verdict {
    let bin = env!("CARGO_BIN_EXE_cfbi");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let gen = |out: &Path| {
        Command::new(bin)
            .args(["gen-data", "--out", &s(out), "--seqs", "4", "--frames", "12", "--size", "64", "--objects", "2", "--seed", "7"])
            .status()
            .unwrap()
            .success()
    };
    let (d1, d2) = (tmp.join("det_a"), tmp.join("det_b"));
    let generated = gen(&d1) && gen(&d2);
    let bytes_equal = generated && dir_bytes(&d1) == dir_bytes(&d2);

    let run = |out: &Path| {
        Command::new(bin)
            .args(["--deterministic", "--seed", "3", "train", "--data", &s(&d1), "--out", &s(out), "--steps", "60"])
            .output()
            .unwrap()
    };
    let (r1, r2) = (tmp.join("run_a"), tmp.join("run_b"));
    let (o1, o2) = (run(&r1), run(&r2));
    let strict_listed = String::from_utf8_lossy(&o1.stderr).contains("nondeterministic kernels");
    let read = |p: &Path| std::fs::read(p).unwrap_or_default();
    let trained = o1.status.success() && o2.status.success();
    let curves_equal = trained && read(&r1.join("loss.csv")) == read(&r2.join("loss.csv"));
    let weights_equal = trained && read(&r1.join("final.safetensors")) == read(&r2.join("final.safetensors"));
    verdict(
        bytes_equal && curves_equal && weights_equal && strict_listed,
        format!(
            "gen-data byte-identical: {bytes_equal}; strict-mode loss curves identical: {curves_equal}; checkpoints identical: {weights_equal}; kernels listed: {strict_listed}"
        ),
    )
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
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

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("AC1 matching oracle", Box::new(ac1_matching_oracle)),
        ("AC2 distance spot values", Box::new(ac2_distance_spot_values)),
        ("AC3 gradient suite", Box::new(ac3_gradients)),
        ("AC4 window monotonicity and empty sets", Box::new(ac4_window_properties)),
        ("AC5 multi-local reuse efficiency", Box::new(ac5_reuse_efficiency)),
        ("AC6 overfit oracle", Box::new(|| ac6_overfit(tmp.path()))),
        ("AC7 background ablation direction", Box::new(ac7_background_ablation)),
        ("AC8 metrics validation", Box::new(ac8_metrics)),
        ("AC9 determinism", Box::new(|| ac9_determinism(tmp.path()))),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        let v = check();
        emit(&format!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail));
        if !v.pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
