//! Residuals of the discrete integration-by-parts identities on random fields.

use carleman_lab::diffops::ipp_suite;
use std::collections::BTreeMap;

fn main() -> carleman_lab::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let rows = ipp_suite(&[4, 8, 16], trials, 0)?;
    let mut worst: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for r in &rows {
        let w = worst.entry((r.identity, r.n)).or_insert(0.0);
        *w = w.max(r.residual);
    }
    println!("identity,N,max_residual");
    for ((id, n), r) in worst {
        println!("{id},{n},{r:.3e}");
    }
    Ok(())
}
