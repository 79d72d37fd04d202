//! Recover q = 1 + ½ sin πx₁ sin πx₂ from noiseless flux data on Γ₊ starting at q ≡ 1.

use carleman_lab::grid::{constant_extension_l2_error, restrict_cell_average, BoundarySet, Support};
use carleman_lab::inverse::{consistency_data, reconstruct, InverseSetup, Manufactured, ReconstructOptions};
use carleman_lab::Mesh;

fn main() -> carleman_lab::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mesh = Mesh::new(n)?;
    let mf = Manufactured::preset("product")?;
    let data = consistency_data(&mf, mesh, 1.6, mesh.h() / 8.0, 0.5)?;
    let q_true = restrict_cell_average(mesh, mf.q_true, 3)?;
    let q0 = data.q_tilde.clone();
    let setup = InverseSetup::synthetic(data, BoundarySet::gamma_plus(), &q_true)?;
    let rec = reconstruct(&setup, &q0, &ReconstructOptions::default())?;
    println!("iter,J,grad,step");
    for r in &rec.log {
        println!("{},{:.6e},{:.6e},{:.3e}", r.iter, r.j, r.grad, r.step);
    }
    let e0 = constant_extension_l2_error(&q0, mf.q_true, Support::Cells);
    let e1 = constant_extension_l2_error(&rec.q, mf.q_true, Support::Cells);
    println!("# error {e0:.4e} -> {e1:.4e} (x{:.1}), converged {}", e0 / e1, rec.converged);
    Ok(())
}
