//! Applies every corruption family at every severity and reports the mean
//! Chamfer distance to the clean clouds.

use adaptpoint::corruptions::{chamfer_distance, corrupt_sample, CorruptionSpec, Family, Severity, SeverityTable};
use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};

fn main() -> adaptpoint::Result<()> {
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: 5,
        ..SyntheticConfig::default()
    })?;
    let table = SeverityTable::default();
    let seed = 7;
    println!("{:>7} {}", "family", (1..=5).map(|l| format!("{:>9}", format!("s{l}"))).collect::<String>());
    for family in Family::ALL {
        let mut row = format!("{:>7}", family.label());
        for severity in Severity::ALL {
            let spec = CorruptionSpec { family, severity };
            let mut sum = 0.0;
            for (i, c) in ds.train.iter().enumerate() {
                let out = corrupt_sample(c, i, spec, seed, &table)?;
                sum += chamfer_distance(c, &out)?;
            }
            row.push_str(&format!("{:>9.5}", sum / ds.train.len() as f64));
        }
        println!("{row}");
    }
    Ok(())
}
