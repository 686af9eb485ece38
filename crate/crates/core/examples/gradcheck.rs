//! Finite-difference verification of every op and of the imitator →
//! classifier feedback path.

use adaptpoint::diagnostics::gradcheck_suite;

fn main() -> adaptpoint::Result<()> {
    let suite = gradcheck_suite(0)?;
    for (name, r) in &suite.entries {
        println!("{name:>18}  max_rel {:.2e}  coords {:>4}  skipped {}", r.max_rel_err, r.coords, r.skipped);
    }
    println!("overall max relative error {:.2e}", suite.max_rel_err());
    Ok(())
}
