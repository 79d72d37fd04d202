//! Empirical hyperbolic Carleman constant over N at fixed τh, for each variant.

use carleman_lab::carleman_hyperbolic::{carleman_sweep, CarlemanParams, Variant};

fn main() -> carleman_lab::Result<()> {
    let samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let base = CarlemanParams::gamma_preset(1.0);
    println!("variant,N,tau,c_emp,worst_seed");
    for v in ["boundary", "distributed", "t0"] {
        for r in carleman_sweep(&base, &[10, 20, 40], 0.1, Variant::parse(v)?, samples, 0, 0.2)? {
            println!("{v},{},{:.2},{:.4e},{}", r.n, r.tau, r.c_emp, r.worst_seed);
        }
    }
    Ok(())
}
