//! The corruption imitator: identity at initialisation, then random heads
//! producing per-anchor deformations and a point mask.

use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};
use adaptpoint::imitator::{ImitateOptions, Imitator, ImitatorConfig};
use adaptpoint::RngStream;

fn main() -> adaptpoint::Result<()> {
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: 2,
        ..SyntheticConfig::default()
    })?;
    let cloud = &ds.train[3];
    let cfg = ImitatorConfig::default();

    let fresh = Imitator::new(cfg.clone(), &mut RngStream::new(0, 0))?;
    let keep_all = ImitateOptions {
        use_mask: false,
        ..ImitateOptions::default()
    };
    let out = fresh.imitate(cloud, keep_all, &mut RngStream::new(0, 1))?;
    let diff = cloud
        .points()
        .iter()
        .zip(out.cloud.points())
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max);
    println!("fresh imitator: max |imitate(P) - P| = {diff:e}");

    let random = Imitator::with_random_heads(cfg, &mut RngStream::new(0, 2))?;
    let im = random.imitate(cloud, ImitateOptions::default(), &mut RngStream::new(0, 3))?;
    let d = &im.deformation;
    for j in 0..d.scale.rows() {
        println!(
            "anchor {j}: scale {:?} angles {:?} offset {:?}",
            d.scale.row(j).iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
            d.angles.row(j).iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
            d.offset.row(j).iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        );
    }
    println!(
        "mask drops {:.1}% of the points (budget {:.0}%)",
        100.0 * im.mask.drop_fraction(),
        100.0 * random.config().mask_budget
    );
    Ok(())
}
