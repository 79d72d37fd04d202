//! Leapfrog energy drift at dt = h/8 and dt = h/16 for a smooth bump and positive potential.

use carleman_lab::wavesolve::{max_energy_drift, solve, WaveProblem};
use carleman_lab::{Mesh, NodeField};

fn main() -> carleman_lab::Result<()> {
    println!("N,dt/h,drift");
    for n in [10, 20, 40] {
        let mesh = Mesh::new(n)?;
        let q = NodeField::from_fn(mesh, |x, y| 1.0 + x * y);
        let y0 = NodeField::from_fn(mesh, |x, y| 40.0 * (x * (1.0 - x) * y * (1.0 - y)).powi(2)).with_zero_boundary();
        for k in [8.0, 16.0] {
            let p = WaveProblem::new(q.clone(), y0.clone(), NodeField::zeros(mesh), 2.0).with_dt(mesh.h() / k);
            println!("{n},1/{k},{:.3e}", max_energy_drift(&solve(&p)?)?);
        }
    }
    Ok(())
}
