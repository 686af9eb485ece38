//! Writes a corruption suite, reloads it, and checks that a second build with
//! the same seed is byte-identical.

use adaptpoint::cli::suite_checksum;
use adaptpoint::corruptions::{build_suite, SuiteOptions};
use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};
use adaptpoint::eval::LoadedSuite;

fn main() -> adaptpoint::Result<()> {
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: 4,
        ..SyntheticConfig::default()
    })?;
    let root = std::env::temp_dir().join("adaptpoint-suite");
    let (a, b) = (root.join("a"), root.join("b"));
    let m = build_suite(&ds.test, &a, 11, &SuiteOptions::default())?;
    build_suite(&ds.test, &b, 11, &SuiteOptions::default())?;
    println!("{} files under {}", m.records.len(), a.display());
    for r in m.records.iter().take(3) {
        println!("  {} {} {} points", r.path, r.spec.family.label(), r.point_count);
    }
    let (ha, hb) = (suite_checksum(&a)?, suite_checksum(&b)?);
    println!("checksums {ha:016x} {hb:016x} identical={}", ha == hb);
    let loaded = LoadedSuite::load(&a)?;
    println!("reloaded {} clouds", loaded.clouds.len());
    Ok(())
}
