//! Trains briefly, saves a checkpoint, reloads it and propagates the first
//! mask through one synthetic clip, writing the predicted masks to disk.
//!
//! cargo run --release --example segment_sequence -- [out_dir]

use std::path::PathBuf;

use candle::{DType, Device};
use cfbi::data::{generate_sequences, SynthConfig};
use cfbi::inference::{segment_sequence, write_predictions};
use cfbi::training::{checkpoint_info, load_checkpoint, train_to_dir, TrainConfig};
use cfbi::{Cfbi, ModelConfig};

fn main() -> cfbi::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("segment_demo"));
    let data = generate_sequences(&SynthConfig { sequences: 2, seed: 3, ..SynthConfig::default() })?;

    let model = Cfbi::new(&ModelConfig::desk(), 0, &Device::Cpu, DType::F32)?;
    let cfg = TrainConfig { steps: 150, ..TrainConfig::default() };
    train_to_dir(&model, &data, &cfg, &out.join("run"))?;

    let ckpt = out.join("run").join("final.safetensors");
    println!("checkpoint at step {}", checkpoint_info(&ckpt)?.step);
    let (model, _) = load_checkpoint(&ckpt, &Device::Cpu, DType::F32)?;

    let seq = &data[0];
    let first = seq.first_mask()?;
    let results = segment_sequence(&model, &seq.frames, first)?;
    for (name, r) in seq.names.iter().skip(1).zip(&results) {
        let counts: Vec<String> = r.object_ids.iter().map(|&id| format!("{id}:{}", r.labels.count(id))).collect();
        println!("frame {name}: pixels per object {}", counts.join(" "));
    }
    write_predictions(&out.join("pred").join(&seq.id), &seq.names, first, &results)?;
    println!("masks written under {}", out.join("pred").display());
    Ok(())
}
