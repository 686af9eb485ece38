//! Fixed per-anchor deformations blended with Gaussian kernel weights.

use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};
use adaptpoint::geom::fps;
use adaptpoint::simulator::{fusion_weights, simulate, FusionConfig};
use adaptpoint::Matrix;

fn main() -> adaptpoint::Result<()> {
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: 2,
        ..SyntheticConfig::default()
    })?;
    let cloud = &ds.train[0];
    let idx = fps(cloud, 4, 0)?;
    let anchors: Vec<_> = idx.iter().map(|&i| cloud.point(i)).collect();
    let fcfg = FusionConfig::default();

    let (w, fallback) = fusion_weights(cloud.points(), &anchors, &fcfg)?;
    let worst = (0..w.rows())
        .map(|r| (w.row(r).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("weights {}x{}, max |row sum - 1| = {worst:.2e}, fallbacks {fallback}", w.rows(), w.cols());

    // Anchor 0 stretches along x, anchor 1 twists about z, others are still.
    let mut scale = Matrix::filled(4, 3, 1.0);
    scale.set(0, 0, 1.8);
    let mut angles = Matrix::zeros(4, 3);
    angles.set(1, 2, 0.4);
    let offset = Matrix::zeros(4, 3);
    let out = simulate(cloud, &anchors, &scale, &angles, &offset, None, &fcfg)?;
    let moved: Vec<f64> = cloud
        .points()
        .iter()
        .zip(out.points())
        .map(|(p, q)| adaptpoint::geom::dist2(p, q).sqrt())
        .collect();
    let mean = moved.iter().sum::<f64>() / moved.len() as f64;
    let max = moved.iter().cloned().fold(0.0, f64::max);
    println!("displacement: mean {mean:.4}, max {max:.4}");

    let keep: Vec<f64> = (0..cloud.len()).map(|i| if i % 4 == 0 { 0.0 } else { 1.0 }).collect();
    let masked = simulate(cloud, &anchors, &scale, &angles, &offset, Some(&keep), &fcfg)?;
    let at_origin = masked.points().iter().filter(|p| adaptpoint::geom::norm(p) == 0.0).count();
    println!("masked copy has {at_origin} points collapsed to the origin");
    Ok(())
}
