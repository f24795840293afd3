//! Compares plain propagation with a multi-scale, flip-averaged ensemble on
//! a model trained for a short while.

use candle::{DType, Device};
use cfbi::data::{generate_sequences, SynthConfig};
use cfbi::inference::{evaluate_model, InferenceConfig};
use cfbi::training::{train, TrainConfig};
use cfbi::{Cfbi, ModelConfig};

fn main() -> cfbi::Result<()> {
    let data = generate_sequences(&SynthConfig { sequences: 2, seed: 11, ..SynthConfig::default() })?;
    let model = Cfbi::new(&ModelConfig::desk(), 0, &Device::Cpu, DType::F32)?;
    train(&model, &data, &TrainConfig { steps: 200, ..TrainConfig::default() }, None)?;

    let plain = InferenceConfig::default();
    let ensemble = InferenceConfig {
        scales: vec![1.0, 1.25],
        flip: true,
    };
    for (name, cfg) in [("single scale", &plain), ("scales 1.0,1.25 + flip", &ensemble)] {
        let report = evaluate_model(&model, &data, cfg, None)?;
        println!("{name:>24}: {}", report.summary_line());
    }
    Ok(())
}
