//! Global and multi-local foreground/background matching on hand-made
//! embeddings: a bright object on a dark background that moves one pixel.

use candle::{DType, Device};
use cfbi::embedding::{EmbeddingMap, LabelMap};
use cfbi::matching::{biased_distance, global_match, multi_local_match, BiasPair, WindowSet};

const H: usize = 8;
const W: usize = 8;

fn scene(x0: usize) -> (EmbeddingMap, LabelMap) {
    let mut emb = vec![0.0; H * W * 2];
    let mut labels = LabelMap::filled(H, W, 0);
    for y in 0..H {
        for x in 0..W {
            let inside = (2..5).contains(&y) && (x0..x0 + 3).contains(&x);
            let e = &mut emb[(y * W + x) * 2..][..2];
            if inside {
                e[0] = 1.0;
                labels.set(y, x, 1);
            } else {
                e[1] = 1.0;
            }
        }
    }
    (EmbeddingMap::from_hwc(emb, H, W, 2, 1).expect("valid shape"), labels)
}

fn print_plane(name: &str, plane: &candle::Tensor) -> cfbi::Result<()> {
    println!("{name}");
    for row in plane.to_dtype(DType::F64)?.to_vec2::<f64>()? {
        println!("  {}", row.iter().map(|v| format!("{v:5.2}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}

fn main() -> cfbi::Result<()> {
    let dev = Device::Cpu;
    println!("distance at d2=0 {:.6}, d2=1 {:.6}, d2=0 b=-2 {:.6}", biased_distance(0.0, 0.0), biased_distance(1.0, 0.0), biased_distance(0.0, -2.0));

    let (reference, ref_labels) = scene(1);
    let (current, _) = scene(2);
    let biases = BiasPair::zeros(&dev, DType::F64)?;

    let global = global_match(&current, &reference, &ref_labels, 1, &biases)?;
    print_plane("global foreground (low = looks like the object)", &global.foreground)?;
    print_plane("global background", &global.background)?;

    let windows = WindowSet::new(vec![1, 2])?;
    let local = multi_local_match(&current, &reference, &ref_labels, 1, &windows, &biases)?;
    for (i, k) in windows.radii().iter().enumerate() {
        print_plane(&format!("local foreground, radius {k}"), &local.foreground.get(i)?)?;
    }
    Ok(())
}
