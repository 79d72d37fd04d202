//! Logarithmic stability bound via the FBI transform, against the measurement size.

use carleman_lab::fbi::{log_stability_experiment, LogStabilityConfig};

fn main() -> carleman_lab::Result<()> {
    let rep = log_stability_experiment(&LogStabilityConfig::default())?;
    println!("# N={} gamma={} lambda={:.4} ({:?})", rep.n, rep.gamma, rep.choice.lambda, rep.choice.case);
    println!("# lhs={:.4e} log term={:.4e} h term={:.4e} ratio={:.4e}", rep.lhs, rep.term_log, rep.term_h, rep.ratio);
    println!("measurement,bound");
    for (m, b) in &rep.measurement_sweep {
        println!("{m:.1e},{b:.4e}");
    }
    Ok(())
}
