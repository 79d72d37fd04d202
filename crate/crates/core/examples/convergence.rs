//! Potential error under mesh refinement, with exact data (q_h = r̃_h q) and with
//! reconstruction from synthetic measurements.

use carleman_lab::inverse::{convergence_study, error_rate, ConvergenceConfig};

fn main() -> carleman_lab::Result<()> {
    println!("mode,N,h,q_error,initial_error,measurement_gap,iterations");
    let exact = ConvergenceConfig { ns: vec![10, 20, 40, 80], reconstruct: false, ..Default::default() };
    let rows = convergence_study(&exact)?;
    for r in &rows {
        println!("exact,{},{:.5},{:.6e},{:.6e},{:.3e},{}", r.n, r.h, r.q_error, r.initial_error, r.measurement_gap, r.iterations);
    }
    println!("# exact-data rate {:.3}", error_rate(&rows));
    for r in convergence_study(&ConvergenceConfig::default())? {
        println!("reconstruct,{},{:.5},{:.6e},{:.6e},{:.3e},{}", r.n, r.h, r.q_error, r.initial_error, r.measurement_gap, r.iterations);
    }
    Ok(())
}
