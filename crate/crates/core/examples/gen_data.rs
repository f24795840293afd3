//! Writes a small synthetic moving-shapes dataset to disk.
//!
//! cargo run --release --example gen_data -- [out_dir]

use std::path::PathBuf;

use cfbi::data::{generate_synthetic, load_dataset, SynthConfig};

fn main() -> cfbi::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("synthetic"));
    let cfg = SynthConfig {
        sequences: 3,
        distractor: true,
        seed: 7,
        ..SynthConfig::default()
    };
    let dirs = generate_synthetic(&cfg, &out)?;
    for seq in load_dataset(&out)? {
        let first = seq.first_mask()?;
        println!(
            "{}: {} frames of {}x{}, objects {:?}, {} labelled pixels in frame 1",
            seq.id,
            seq.len(),
            seq.height(),
            seq.width(),
            first.object_ids(),
            first.foreground_count()
        );
    }
    println!("wrote {} sequences under {}", dirs.len(), out.display());
    Ok(())
}
