//! Finite-difference cases: each builds a 64-bit computation, backpropagates
//! and compares against central differences.

use candle::{DType, Device, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfbi::attention::{apply_gate, ChannelGate};
use cfbi::data::{generate_sequences, SynthConfig};
use cfbi::embedding::EmbeddingMap;
use cfbi::matching::{biased_distance_tensor, global_match_objects, multi_local_match_objects, BiasPair, WindowSet};
use cfbi::training::{balanced_random_crop, bootstrapped_ce_loss, sample_forward, FeedbackMode};
use cfbi::{Cfbi, ModelConfig};

use super::{check_var, flat, random_labels, GradCheck};

pub const TOL: f64 = 1e-4;
pub const MIN_POINTS: usize = 20;

fn dev() -> Device {
    Device::Cpu
}

fn random_var(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Var {
    let n: usize = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Var::from_tensor(&Tensor::from_vec(v, dims, &dev()).unwrap()).unwrap()
}

fn weights_like(rng: &mut ChaCha8Rng, t: &Tensor) -> Tensor {
    let n = t.elem_count();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, t.dims(), &dev()).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn all_indices(v: &Var) -> Vec<usize> {
    (0..v.elem_count()).collect()
}

pub fn distance_case() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sq = random_var(&mut rng, &[30], 0.0, 4.0);
    let bias = random_var(&mut rng, &[1], -2.0, 1.0);
    let w = weights_like(&mut rng, sq.as_tensor());
    let loss = || (biased_distance_tensor(sq.as_tensor(), bias.as_tensor()).unwrap() * &w).unwrap().sum_all().unwrap();
    let grads = loss().backward().unwrap();
    let mut report = GradCheck::default();
    for v in [&sq, &bias] {
        let g = flat(grads.get(v).unwrap());
        report.merge(check_var(v, &g, &all_indices(v), &mut || scalar(&loss())));
    }
    report
}

pub fn matching_case() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (c, h, w) = (3, 6, 6);
    let cur = random_var(&mut rng, &[c, h, w], -0.8, 0.8);
    let reference = random_var(&mut rng, &[c, h, w], -0.8, 0.8);
    let bias = random_var(&mut rng, &[2], -0.5, 0.5);
    let labels = random_labels(&mut rng, h, w, 2);
    let windows = WindowSet::new(vec![1, 2]).unwrap();
    let ids = [1u8, 2];
    let wg = Tensor::from_vec((0..ids.len() * 2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), (2, 2, h, w), &dev()).unwrap();
    let wl = Tensor::from_vec((0..ids.len() * 4 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), (2, 4, h, w), &dev()).unwrap();
    let loss = || {
        let cur = EmbeddingMap::new(cur.as_tensor().clone(), 1).unwrap();
        let reference = EmbeddingMap::new(reference.as_tensor().clone(), 1).unwrap();
        let bp = BiasPair::from_tensor(bias.as_tensor().clone()).unwrap();
        let g = global_match_objects(&cur, &reference, &labels, &ids, &bp).unwrap();
        let l = multi_local_match_objects(&cur, &reference, &labels, &ids, &windows, &bp).unwrap();
        ((g * &wg).unwrap().sum_all().unwrap() + (l * &wl).unwrap().sum_all().unwrap()).unwrap()
    };
    let grads = loss().backward().unwrap();
    let mut report = GradCheck::default();
    for v in [&cur, &reference, &bias] {
        let g = flat(grads.get(v).unwrap());
        report.merge(check_var(v, &g, &all_indices(v), &mut || scalar(&loss())));
    }
    report
}

pub fn gate_case() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let varmap = VarMap::new();
    let gate = ChannelGate::new(8, 5, VarBuilder::from_varmap(&varmap, DType::F64, &dev())).unwrap();
    let guidance = random_var(&mut rng, &[2, 8], -1.0, 1.0);
    let features = random_var(&mut rng, &[2, 5, 3, 3], -1.0, 1.0);
    let w = weights_like(&mut rng, features.as_tensor());
    let loss = || {
        let gates = gate.gates(guidance.as_tensor()).unwrap();
        (apply_gate(features.as_tensor(), &gates).unwrap() * &w).unwrap().sum_all().unwrap()
    };
    let grads = loss().backward().unwrap();
    let mut vars: Vec<Var> = varmap.all_vars();
    vars.push(guidance.clone());
    vars.push(features.clone());
    let mut report = GradCheck::default();
    for v in &vars {
        let g = flat(grads.get(v).unwrap());
        report.merge(check_var(v, &g, &all_indices(v), &mut || scalar(&loss())));
    }
    report
}

pub fn bootstrap_case() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (classes, h, w) = (3, 5, 8);
    let logits = random_var(&mut rng, &[classes, h, w], -2.0, 2.0);
    let targets: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..classes as u32)).collect();
    let loss = || bootstrapped_ce_loss(logits.as_tensor(), &targets, 0.3).unwrap();
    let grads = loss().backward().unwrap();
    let g = flat(grads.get(&logits).unwrap());
    check_var(&logits, &g, &all_indices(&logits), &mut || scalar(&loss()))
}

pub fn training_step_case() -> GradCheck {
    let seqs = generate_sequences(&SynthConfig {
        sequences: 1,
        frames: 6,
        height: 32,
        width: 32,
        objects: 2,
        min_size: 4,
        max_size: 6,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let sample = balanced_random_crop(&seqs[0], 2, 32, 10, 10, &mut rng).unwrap();
    let model = Cfbi::new(&ModelConfig::desk(), 5, &dev(), DType::F64).unwrap();
    let loss = || sample_forward(&model, &sample, 0.3, FeedbackMode::Detached).unwrap().loss;
    let grads = loss().backward().unwrap();

    // Name order, so the sampled coordinates do not depend on hash order.
    let vars: Vec<Var> = {
        let data = model.varmap().data().lock().unwrap();
        let mut named: Vec<(&String, &Var)> = data.iter().collect();
        named.sort_by_key(|(name, _)| *name);
        named.into_iter().map(|(_, v)| v.clone()).collect()
    };
    let mut report = GradCheck::default();
    let mut picked = 0;
    for v in &vars {
        let g = flat(grads.get(v).expect("every parameter receives a gradient"));
        // A few entries per tensor with a non-negligible derivative.
        let candidates: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() > 1e-5).collect();
        if candidates.is_empty() {
            continue;
        }
        let take = candidates.len().min(2);
        let idx: Vec<usize> = index::sample(&mut rng, candidates.len(), take).into_iter().map(|i| candidates[i]).collect();
        picked += idx.len();
        report.merge(check_var(v, &g, &idx, &mut || scalar(&loss())));
    }
    assert!(picked >= MIN_POINTS);
    report
}
