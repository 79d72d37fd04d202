//! Randomized invariants across modules.

use carleman_lab::carleman_elliptic::{solve_elliptic, EllipticProblem};
use carleman_lab::config::Config;
use carleman_lab::diffops::{d_plus, ipp_residual, laplacian, Identity};
use carleman_lab::fbi::FbiKernel;
use carleman_lab::grid::{integrate_boundary, integrate_interior, stag_sq, BoundarySet};
use carleman_lab::inverse::{measure, Family, Perturbation};
use carleman_lab::wavesolve::{solve, WaveProblem};
use carleman_lab::{Axis, BoundaryTrace, Mesh, NodeField, SubsetMask};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn field(mesh: Mesh, vals: &[f64]) -> NodeField {
    NodeField::from_values(mesh, vals.iter().cycle().take(mesh.len()).copied().collect()).unwrap()
}

fn inner(a: &NodeField, b: &NodeField) -> f64 {
    integrate_interior(&a.mul(b))
}

fn mesh_and_values() -> impl Strategy<Value = (Mesh, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..12).prop_flat_map(|n| {
        let m = Mesh::new(n).unwrap();
        let v = || prop::collection::vec(-1.0f64..1.0, m.len());
        (Just(m), v(), v(), v())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_identity_holds((m, g, f, v) in mesh_and_values()) {
        let g = field(m, &g);
        let f = field(m, &f);
        let v = field(m, &v).with_zero_boundary();
        for id in Identity::ALL {
            prop_assert!(ipp_residual(id, &g, &v, &f).unwrap() < 1e-12, "{}", id.name());
        }
    }

    #[test]
    fn laplacian_is_symmetric_and_nonpositive((m, u, v, _) in mesh_and_values()) {
        let u = field(m, &u).with_zero_boundary();
        let v = field(m, &v).with_zero_boundary();
        let a = inner(&laplacian(&u), &v);
        let b = inner(&u, &laplacian(&v));
        prop_assert!((a - b).abs() <= 1e-12 * (a.abs() + b.abs() + 1.0));
        let q = inner(&laplacian(&v), &v);
        let grad = stag_sq(&d_plus(&v, Axis::X1)) + stag_sq(&d_plus(&v, Axis::X2));
        prop_assert!(q <= 0.0);
        prop_assert!((q + grad).abs() <= 1e-12 * (grad + 1.0));
    }

    #[test]
    fn dirichlet_eigenpairs(n in 2usize..24, k in 1usize..24, l in 1usize..24) {
        let (k, l) = (1 + (k - 1) % n, 1 + (l - 1) % n);
        let m = Mesh::new(n).unwrap();
        let h = m.h();
        let v = NodeField::from_index_fn(m, |i, j| (k as f64 * PI * m.x(i)).sin() * (l as f64 * PI * m.x(j)).sin()).with_zero_boundary();
        let lam = 4.0 / (h * h) * ((k as f64 * PI * h / 2.0).sin().powi(2) + (l as f64 * PI * h / 2.0).sin().powi(2));
        let r = laplacian(&v).add(&v.scale(lam));
        prop_assert!(r.max_abs_interior() <= 1e-10 * lam);
    }

    #[test]
    fn boundary_quadrature_of_one(n in 2usize..40) {
        let m = Mesh::new(n).unwrap();
        let one = BoundaryTrace::from_values(m, vec![1.0; 4 * n]).unwrap();
        let s = integrate_boundary(&one, None).unwrap();
        prop_assert!((s - (4.0 - 4.0 * m.h())).abs() < 1e-13);
    }

    #[test]
    fn elliptic_solve_is_self_adjoint((m, q, g1, g2) in mesh_and_values()) {
        let q = field(m, &q).map(|x| 1.0 + x.abs());
        let g1 = field(m, &g1);
        let g2 = field(m, &g2);
        let w1 = solve_elliptic(&EllipticProblem::new(q.clone(), g1.clone()).unwrap()).unwrap();
        let w2 = solve_elliptic(&EllipticProblem::new(q, g2.clone()).unwrap()).unwrap();
        let a = inner(&w1, &g2);
        let b = inner(&g1, &w2);
        prop_assert!((a - b).abs() <= 1e-9 * (a.abs() + b.abs() + 1e-12));
    }

    #[test]
    fn kernel_is_even(n in 1u32..4, re in -3.0f64..3.0, im in -1.0f64..1.0) {
        let k = FbiKernel::new(n, 1.0, 2.0, 16).unwrap();
        let z = Complex64::new(re, im);
        let (a, b) = (k.f(z).unwrap(), k.f(-z).unwrap());
        prop_assert!((a - b).norm() <= 1e-10 * a.norm().max(1e-300));
    }

    #[test]
    fn config_roundtrip(n in 1usize..500, tau in 0.001f64..0.2, name in "[a-z]{1,8}") {
        let c = Config::parse(&format!("n = {n}\ntau_h = {tau}\nvariant = {name}\n")).unwrap();
        prop_assert_eq!(c.get("n", 0usize).unwrap(), n);
        prop_assert_eq!(c.get("tau_h", 0.0f64).unwrap(), tau);
        prop_assert_eq!(c.get("variant", String::new()).unwrap(), name);
        c.finish().unwrap();
    }

    #[test]
    fn perturbations_are_reproducible(seed in any::<u64>(), index in 0u64..1000) {
        let a = Perturbation::sample(Family::Mixed, seed, index, false);
        let b = Perturbation::sample(Family::Mixed, seed, index, false);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solve_and_measure_are_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, n in 4usize..10) {
        let m = Mesh::new(n).unwrap();
        let q = NodeField::from_fn(m, |x, y| 1.0 + x * y);
        let u0 = NodeField::from_fn(m, |x, y| (PI * x).sin() * (2.0 * PI * y).sin()).with_zero_boundary();
        let v0 = NodeField::from_fn(m, |x, y| x * (1.0 - x) * y * (1.0 - y)).with_zero_boundary();
        let z = NodeField::zeros(m);
        let gamma0 = SubsetMask::boundary(m, &BoundarySet::gamma_plus());
        let run = |y0: NodeField, y1: NodeField| solve(&WaveProblem::new(q.clone(), y0, y1, 0.5)).unwrap();
        let su = run(u0.clone(), z.clone());
        let sv = run(z.clone(), v0.clone());
        let sw = run(u0.scale(a), v0.scale(b));
        for k in 0..sw.y.len() {
            let want = su.y.snapshots()[k].scale(a).add(&sv.y.snapshots()[k].scale(b));
            prop_assert!(sw.y.snapshots()[k].sub(&want).max_abs() <= 1e-12 * (1.0 + want.max_abs()));
        }
        let mw = measure(&sw, &gamma0).unwrap();
        let (f, p) = mw.recompute_norms().unwrap();
        prop_assert!((f - mw.flux_h1).abs() <= 1e-12 * (1.0 + f));
        prop_assert!((p - mw.pen_l2).abs() <= 1e-12 * (1.0 + p));
    }
}
