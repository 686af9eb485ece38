//! Saves the three players to one checkpoint and restores them. Values are
//! stored as 32-bit floats, so a restored model re-saves byte-identically.

use adaptpoint::training::{Models, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig::default();
    let models = Models::new(&cfg, 6)?;
    let dir = std::env::temp_dir();
    let (first, second) = (dir.join("adaptpoint-a.ckpt"), dir.join("adaptpoint-b.ckpt"));
    models.save(&first)?;
    let back = Models::load(&first, &cfg, 6)?;
    back.save(&second)?;

    for (a, b) in models.stores().iter().zip(back.stores()) {
        let worst = a
            .iter()
            .zip(b.iter())
            .map(|((_, p), (_, q))| p.value.data().iter().zip(q.value.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        println!("{:>3} tensors {:>6} scalars, max |restored - original| {worst:.1e}", a.len(), a.num_scalars());
    }
    let same = std::fs::read(&first)? == std::fs::read(&second)?;
    println!("{} bytes, re-save identical: {same}", std::fs::metadata(&first)?.len());
    Ok(())
}
