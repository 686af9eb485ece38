//! Generates the six-class synthetic shape dataset on disk and reloads it.
//!
//! cargo run --release --example synthetic_dataset -- [out_dir]

use std::path::PathBuf;

use adaptpoint::data_io::{generate_synthetic, load_dataset, SyntheticConfig};

fn main() -> adaptpoint::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("adaptpoint-dataset"));
    let cfg = SyntheticConfig {
        samples_per_class: 20,
        ..SyntheticConfig::default()
    };
    let manifest = generate_synthetic(&cfg, &out)?;
    println!("wrote {} clouds to {}", manifest.records.len(), out.display());

    let ds = load_dataset(&out)?;
    for (k, name) in ds.class_names.iter().enumerate() {
        let train = ds.train.iter().filter(|c| c.label() == Some(k)).count();
        let test = ds.test.iter().filter(|c| c.label() == Some(k)).count();
        println!("{name:>9}: {train} train / {test} test");
    }
    let c = &ds.train[0];
    let radius = c.points().iter().map(adaptpoint::geom::norm).fold(0.0, f64::max);
    println!("first cloud: {} points, max radius {radius:.3}", c.len());
    Ok(())
}
