//! A short run of the three-player loop on a reduced dataset, printing the
//! per-epoch losses.
//!
//! cargo run --release --example train_loop -- [epochs]

use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};
use adaptpoint::training::{train, TrainConfig, METRICS_HEADER};

fn main() -> adaptpoint::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: 30,
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg, None)?;
    println!("{METRICS_HEADER}");
    for m in &out.history {
        println!("{}", m.tsv_line());
    }
    let probe = &ds.test[0];
    println!(
        "test cloud 0: label {:?}, predicted {}",
        probe.label(),
        out.models.classifier.predict(probe)?
    );
    Ok(())
}
