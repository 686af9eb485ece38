//! Trains a clean-only classifier and one with the imitator loop, then
//! scores both on the corruption suite (CE relative to the clean-only one).
//!
//! cargo run --release --example robustness_eval -- [epochs] [samples_per_class]

use adaptpoint::corruptions::SuiteOptions;
use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};
use adaptpoint::eval::{corruption_error, evaluate_classifier, render_report, LoadedSuite};
use adaptpoint::training::{train, TrainConfig};

fn main() -> adaptpoint::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let per_class = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed = 0;
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: per_class,
        seed,
        ..SyntheticConfig::default()
    })?;
    let suite = LoadedSuite::generate(&ds.test, seed, &SuiteOptions::default())?;

    let base_cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::baseline()
    };
    let base = train(&ds, &base_cfg, None)?;
    let eb = evaluate_classifier(&base.models.classifier, &suite, &ds.test, seed)?;

    let full = train(&ds, &TrainConfig { epochs, seed, ..TrainConfig::default() }, None)?;
    let ef = evaluate_classifier(&full.models.classifier, &suite, &ds.test, seed)?;

    println!("{}", render_report(&ef.table, Some((&eb.table, "clean-only classifier")))?);
    let ce = corruption_error(&ef.table, &eb.table)?;
    println!("clean OA {:.3} vs {:.3}, mCE {:.1}", ef.table.clean_accuracy, eb.table.clean_accuracy, ce.mce);
    Ok(())
}
