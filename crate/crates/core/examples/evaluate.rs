//! Region similarity J and boundary accuracy F on a few toy masks, then a
//! full report over a sequence with a deliberately shifted prediction.

use cfbi::embedding::LabelMap;
use cfbi::metrics::{boundary_f, evaluate, region_j, Mask, SequencePair};

fn square(size: usize, y0: usize, x0: usize, side: usize, id: u8) -> LabelMap {
    let mut m = LabelMap::filled(size, size, 0);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            m.set(y, x, id);
        }
    }
    m
}

fn main() -> cfbi::Result<()> {
    let gt = square(32, 8, 8, 10, 1);
    let shifted = square(32, 8, 9, 10, 1);
    let (g, p) = (gt.binary_mask(1), shifted.binary_mask(1));
    let (g, p) = (Mask::new(32, 32, &g)?, Mask::new(32, 32, &p)?);
    println!("one-pixel shift: J {:.4}", region_j(&p, &g)?);
    for r in [0.0, 1.0, 2.0] {
        println!("  F at tolerance {r}: {:.4}", boundary_f(&p, &g, r)?);
    }

    let truth: Vec<LabelMap> = (0..5).map(|t| square(32, 8, 8 + t, 10, 1)).collect();
    let predicted: Vec<LabelMap> = (0..5).map(|t| square(32, 8, 8 + t + t / 2, 10, 1)).collect();
    let report = evaluate(
        &[SequencePair {
            name: "drift",
            predicted: &predicted,
            ground_truth: &truth,
        }],
        None,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("{}", report.summary_line());
    Ok(())
}
