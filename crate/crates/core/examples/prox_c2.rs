//! Fitted constant C in sup|A_{ℓ,k} − f_{ℓ,k}| ≤ C·τh at fixed τh under mesh refinement.

use carleman_lab::carleman_hyperbolic::{prox_c2_sup, CarlemanParams};
use carleman_lab::Mesh;

fn main() -> carleman_lab::Result<()> {
    let tau_h = 2e-3;
    let ns: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ns = if ns.is_empty() { vec![500, 1000, 2000] } else { ns };
    println!("N,l,k,C");
    for n in ns {
        let mesh = Mesh::new(n)?;
        let p = CarlemanParams::gamma_preset(tau_h / mesh.h());
        let times = [0.0, 0.5 * p.t_final, p.t_final];
        let sup = prox_c2_sup(&p, mesh, &times, 16)?;
        for (l, row) in sup.iter().enumerate() {
            for (k, s) in row.iter().enumerate() {
                println!("{n},{l},{},{:.6e}", k + 1, s / tau_h);
            }
        }
    }
    Ok(())
}
