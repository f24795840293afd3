//! Overfits the small model on a handful of synthetic clips and reports J&F.
//!
//! cargo run --release --example train_overfit -- [steps]

use std::time::Instant;

use candle::{DType, Device};
use cfbi::data::{generate_sequences, SynthConfig};
use cfbi::inference::{evaluate_model, InferenceConfig};
use cfbi::training::{train, TrainConfig};
use cfbi::{Cfbi, ModelConfig};

fn main() -> cfbi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let data = generate_sequences(&SynthConfig { seed: 7, ..SynthConfig::default() })?;
    let model = Cfbi::new(&ModelConfig::desk(), 0, &Device::Cpu, DType::F32)?;
    let cfg = TrainConfig { steps, ..TrainConfig::default() };
    let start = Instant::now();
    let report = train(&model, &data, &cfg, None)?;
    println!(
        "{} steps in {:.1}s, loss {:.4} -> {:.4}",
        steps,
        start.elapsed().as_secs_f64(),
        report.losses.first().unwrap_or(&f64::NAN),
        report.losses.last().unwrap_or(&f64::NAN)
    );
    let eval = evaluate_model(&model, &data, &InferenceConfig::default(), None)?;
    println!("{}", eval.summary_line());
    Ok(())
}
