//! Discrete H² / L² ratio of the Dirichlet problem under refinement, and the disk-cap weight.

use carleman_lab::carleman_elliptic::{build_elliptic_weight, h2_regularity_ratio, regularity_family, solve_elliptic, EllipticGeometry};
use carleman_lab::Mesh;

fn main() -> carleman_lab::Result<()> {
    println!("N,ratio");
    for n in [10, 20, 40, 80] {
        let p = regularity_family(Mesh::new(n)?)?;
        let w = solve_elliptic(&p)?;
        println!("{n},{:.6}", h2_regularity_ratio(&p, &w)?);
    }
    let weight = build_elliptic_weight(EllipticGeometry::default(), 0.01)?;
    println!("# weight ordering gap {:.4e}", weight.ordering_gap());
    Ok(())
}
