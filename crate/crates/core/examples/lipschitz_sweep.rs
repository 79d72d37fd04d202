//! Max ratio ‖q_a − q_b‖ / ‖M̃_h[q_a] − M̃_h[q_b]‖ over random pairs, per N.
//! Usage: lipschitz_sweep [boundary|distributed|log] [samples]

use carleman_lab::inverse::{lipschitz_sweep, SweepConfig, SweepVariant};

fn main() -> carleman_lab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = SweepVariant::parse(args.first().map(String::as_str).unwrap_or("boundary"))?;
    let samples = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = SweepConfig { variant, samples, ..Default::default() };
    let (_, summary) = lipschitz_sweep(&cfg)?;
    println!("N,max_ratio");
    for (n, r) in &summary.max_ratio {
        println!("{n},{r:.6e}");
    }
    println!("# growth {:.3}, extension/discrete norm factor in [{:.3}, {:.3}]", summary.growth, summary.equivalence.0, summary.equivalence.1);
    Ok(())
}
