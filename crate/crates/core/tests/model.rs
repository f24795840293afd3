mod common;

use candle::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfbi::attention::{apply_gate, ChannelGate};
use cfbi::embedding::{extract_embedding, Encoder, EncoderConfig, Frame};
use cfbi::ensembler::{aggregate_objects, CollaborativeEnsembler, EnsemblerConfig};
use cfbi::init_params;
use common::{flat, max_abs_diff};

fn dev() -> Device {
    Device::Cpu
}

fn encoder(seed: u64) -> Encoder {
    let varmap = VarMap::new();
    let enc = Encoder::new(&EncoderConfig::default(), VarBuilder::from_varmap(&varmap, DType::F32, &dev())).unwrap();
    init_params(&varmap, seed).unwrap();
    enc
}

#[test]
fn encoder_shapes_and_purity() {
    let enc = encoder(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f32> = (0..64 * 64 * 3).map(|_| rng.random()).collect();
    let frame = Frame::new(64, 64, data).unwrap();
    let (a, low) = extract_embedding(&frame, &enc, DType::F32).unwrap();
    assert_eq!((a.channels(), a.height(), a.width(), a.stride()), (32, 16, 16, 4));
    assert_eq!(low.dims(), &[48, 16, 16]);
    let (b, _) = extract_embedding(&frame, &enc, DType::F32).unwrap();
    assert_eq!(flat(a.tensor()), flat(b.tensor()));

    let zeros = extract_embedding(&Frame::filled(64, 64, [0.0; 3]).unwrap(), &enc, DType::F32).unwrap().0;
    let ones = extract_embedding(&Frame::filled(64, 64, [1.0; 3]).unwrap(), &enc, DType::F32).unwrap().0;
    assert!(max_abs_diff(&flat(zeros.tensor()), &flat(ones.tensor())) > 1e-4);
}

fn default_ensembler(varmap: &VarMap) -> CollaborativeEnsembler {
    let e = CollaborativeEnsembler::new(&EnsemblerConfig::default(), 79, 48, 128, VarBuilder::from_varmap(varmap, DType::F32, &dev()))
        .unwrap();
    init_params(varmap, 1).unwrap();
    e
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>(), dims, &dev()).unwrap()
}

#[test]
fn ensembler_shape_and_unit_gates() {
    let varmap = VarMap::new();
    let ens = default_ensembler(&varmap);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let guidance = random_tensor(&mut rng, &[1, 79, 16, 16]);
    let low = random_tensor(&mut rng, &[1, 48, 16, 16]);
    let plain = ens.forward(&guidance, &low, None, (64, 64)).unwrap();
    assert_eq!(plain.dims(), &[1, 2, 64, 64]);
    let ones: Vec<Tensor> = ens.gated_channels().iter().map(|&c| Tensor::ones((1, c), DType::F32, &dev()).unwrap()).collect();
    let gated = ens.forward(&guidance, &low, Some(&ones), (64, 64)).unwrap();
    assert_eq!(flat(&plain), flat(&gated));
}

#[test]
fn ensembler_receptive_field_is_wide() {
    let varmap = VarMap::new();
    let ens = default_ensembler(&varmap);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let guidance = random_tensor(&mut rng, &[1, 79, 16, 16]);
    let low = random_tensor(&mut rng, &[1, 48, 16, 16]);
    let base = flat(&ens.forward(&guidance, &low, None, (64, 64)).unwrap());
    let mut bumped = flat(&guidance);
    for ch in 0..79 {
        bumped[ch * 256 + 8 * 16 + 8] += 5.0;
    }
    let bumped = Tensor::from_vec(bumped.iter().map(|&v| v as f32).collect::<Vec<_>>(), (1, 79, 16, 16), &dev()).unwrap();
    let out = flat(&ens.forward(&bumped, &low, None, (64, 64)).unwrap());
    let changed: Vec<usize> = (0..64 * 64).filter(|&p| (out[p] - base[p]).abs() > 1e-6).map(|p| p % 64).collect();
    let extent = changed.iter().max().unwrap() - changed.iter().min().unwrap() + 1;
    assert!(extent > 16, "changed columns span only {extent} pixels");
}

#[test]
fn gate_saturation_and_boundedness() {
    let mut varmap = VarMap::new();
    let gate = ChannelGate::new(4, 3, VarBuilder::from_varmap(&varmap, DType::F64, &dev())).unwrap();
    varmap.set_one("weight", Tensor::zeros((3, 4), DType::F64, &dev()).unwrap()).unwrap();
    varmap.set_one("bias", Tensor::full(50.0f64, 3, &dev()).unwrap()).unwrap();
    let g = gate.gates(&Tensor::ones((1, 4), DType::F64, &dev()).unwrap()).unwrap();
    let x = Tensor::arange(0.0f64, 12.0, &dev()).unwrap().reshape((1, 3, 2, 2)).unwrap();
    let y = apply_gate(&x, &g).unwrap();
    assert!(max_abs_diff(&flat(&x), &flat(&y)) < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    init_params(&varmap, 4).unwrap();
    for _ in 0..20 {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        let g = flat(&gate.gates(&Tensor::from_vec(v, (1, 4), &dev()).unwrap()).unwrap());
        assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn aggregated_probabilities_stay_on_the_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in 1..=4 {
        let logits = (random_tensor(&mut rng, &[m, 2, 6, 7]) * 8.0).unwrap();
        let ids: Vec<u8> = (1..=m as u8).map(|i| i * 2).collect();
        let r = aggregate_objects(&logits, &ids).unwrap();
        let hw = 6 * 7;
        for p in 0..hw {
            let s: f32 = (0..=m).map(|c| r.probabilities[c * hw + p]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(r.labels.object_ids().iter().all(|id| ids.contains(id)));
    }
}
