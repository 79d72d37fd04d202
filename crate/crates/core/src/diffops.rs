//! Difference and averaging operators, and residuals of the discrete
//! integration-by-parts identities.
//!
//! Centered operators return interior values with zero on the boundary. Forward
//! differences and forward means return staggered fields; the backward versions
//! share storage with a unit shift, (∂⁻v)_{i+1} = (∂⁺v)_i.

use crate::error::{Error, Result};
use crate::grid::{Axis, BoundaryTrace, Edge, Mesh, NodeField, StaggeredField};
use crate::num::Sum;

#[inline]
fn nb(i: usize, j: usize, ax: Axis, fwd: bool) -> (usize, usize) {
    let (di, dj) = ax.step();
    if fwd {
        (i + di, j + dj)
    } else {
        (i - di, j - dj)
    }
}

fn interior_map<F: Fn(usize, usize) -> f64>(mesh: Mesh, f: F) -> NodeField {
    let n = mesh.n();
    let mut out = NodeField::zeros(mesh);
    for i in 1..=n {
        for j in 1..=n {
            out.set(i, j, f(i, j));
        }
    }
    out
}

/// Five-point Laplacian Δ_h.
pub fn laplacian(f: &NodeField) -> NodeField {
    let h2 = f.mesh().h().powi(2);
    interior_map(*f.mesh(), |i, j| {
        (f.get(i + 1, j) + f.get(i - 1, j) + f.get(i, j + 1) + f.get(i, j - 1) - 4.0 * f.get(i, j)) / h2
    })
}

/// Δ_{h,k}: second difference along one axis.
pub fn second_difference(f: &NodeField, ax: Axis) -> NodeField {
    let h2 = f.mesh().h().powi(2);
    interior_map(*f.mesh(), |i, j| {
        let (a, b) = nb(i, j, ax, true);
        let (c, d) = nb(i, j, ax, false);
        (f.get(a, b) - 2.0 * f.get(i, j) + f.get(c, d)) / h2
    })
}

/// ∂_{h,k}: centered difference.
pub fn d_central(f: &NodeField, ax: Axis) -> NodeField {
    let h = f.mesh().h();
    interior_map(*f.mesh(), |i, j| {
        let (a, b) = nb(i, j, ax, true);
        let (c, d) = nb(i, j, ax, false);
        (f.get(a, b) - f.get(c, d)) / (2.0 * h)
    })
}

/// m_{h,k}: (v₊ + 2v + v₋)/4.
pub fn mean(f: &NodeField, ax: Axis) -> NodeField {
    interior_map(*f.mesh(), |i, j| {
        let (a, b) = nb(i, j, ax, true);
        let (c, d) = nb(i, j, ax, false);
        0.25 * (f.get(a, b) + 2.0 * f.get(i, j) + f.get(c, d))
    })
}

/// ∂⁺_{h,k} on Ω_{h,k}⁻.
pub fn d_plus(f: &NodeField, ax: Axis) -> StaggeredField {
    let h = f.mesh().h();
    StaggeredField::from_index_fn(*f.mesh(), ax, |i, j| {
        let (a, b) = nb(i, j, ax, true);
        (f.get(a, b) - f.get(i, j)) / h
    })
}

/// ∂⁻_{h,k}: entry (i,j) holds the backward difference at the next node along `ax`.
pub fn d_minus(f: &NodeField, ax: Axis) -> StaggeredField {
    d_plus(f, ax)
}

/// m⁺_{h,k} on Ω_{h,k}⁻.
pub fn mean_plus(f: &NodeField, ax: Axis) -> StaggeredField {
    StaggeredField::from_index_fn(*f.mesh(), ax, |i, j| {
        let (a, b) = nb(i, j, ax, true);
        0.5 * (f.get(a, b) + f.get(i, j))
    })
}

/// m⁻_{h,k}, shifted like [`d_minus`].
pub fn mean_minus(f: &NodeField, ax: Axis) -> StaggeredField {
    mean_plus(f, ax)
}

/// ∂⁺_{h,1}∂⁺_{h,2} on Ω_h⁻.
pub fn d_plus_plus(f: &NodeField) -> StaggeredField {
    let mesh = *f.mesh();
    let h2 = mesh.h().powi(2);
    let mut out = StaggeredField::zeros_corner(mesh);
    for (i, j) in out.clone().indices() {
        out.set(i, j, (f.get(i + 1, j + 1) - f.get(i + 1, j) - f.get(i, j + 1) + f.get(i, j)) / h2);
    }
    out
}

/// ∇_h = (∂_{h,1}, ∂_{h,2}).
pub fn gradient(f: &NodeField) -> (NodeField, NodeField) {
    (d_central(f, Axis::X1), d_central(f, Axis::X2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorTag {
    Laplacian,
    SecondDifference(Axis),
    Central(Axis),
    Plus(Axis),
    Minus(Axis),
    Mean(Axis),
    MeanPlus(Axis),
    MeanMinus(Axis),
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Applied {
    Node(NodeField),
    Staggered(StaggeredField),
    Pair(NodeField, NodeField),
}

pub fn apply(tag: OperatorTag, f: &NodeField) -> Applied {
    match tag {
        OperatorTag::Laplacian => Applied::Node(laplacian(f)),
        OperatorTag::SecondDifference(a) => Applied::Node(second_difference(f, a)),
        OperatorTag::Central(a) => Applied::Node(d_central(f, a)),
        OperatorTag::Mean(a) => Applied::Node(mean(f, a)),
        OperatorTag::Plus(a) => Applied::Staggered(d_plus(f, a)),
        OperatorTag::Minus(a) => Applied::Staggered(d_minus(f, a)),
        OperatorTag::MeanPlus(a) => Applied::Staggered(mean_plus(f, a)),
        OperatorTag::MeanMinus(a) => Applied::Staggered(mean_minus(f, a)),
        OperatorTag::Gradient => {
            let (a, b) = gradient(f);
            Applied::Pair(a, b)
        }
    }
}

/// Normal difference on one edge of a Dirichlet-zero field: (f_bdy − f_adj)/h on
/// Γ⁺ edges, the forward difference (f_adj − f_bdy)/h on Γ⁻ edges. Other edges are zero.
pub fn normal_difference(f: &NodeField, edge: Edge) -> Result<BoundaryTrace> {
    if !f.is_dirichlet_zero() {
        return Err(Error::Precondition("normal difference needs a Dirichlet-zero field".into()));
    }
    let mesh = *f.mesh();
    let h = mesh.h();
    let mut t = BoundaryTrace::zeros(mesh);
    for m in 1..=mesh.n() {
        let (bi, bj) = edge.node(&mesh, m);
        let (ai, aj) = edge.inner(&mesh, m);
        let d = if edge.is_plus() {
            (f.get(bi, bj) - f.get(ai, aj)) / h
        } else {
            (f.get(ai, aj) - f.get(bi, bj)) / h
        };
        t.set(edge, m, d);
    }
    Ok(t)
}

/// Outward normal difference on every edge; no boundary condition assumed.
pub fn outward_normal_difference(f: &NodeField) -> BoundaryTrace {
    let mesh = *f.mesh();
    let h = mesh.h();
    let mut t = BoundaryTrace::zeros(mesh);
    for e in Edge::ALL {
        for m in 1..=mesh.n() {
            let (bi, bj) = e.node(&mesh, m);
            let (ai, aj) = e.inner(&mesh, m);
            t.set(e, m, (f.get(bi, bj) - f.get(ai, aj)) / h);
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Identity {
    Ipp1,
    Ipp2,
    Ipp3,
    Ipp4,
    Ipp5,
    Ipp6,
    IppNew,
    New1,
}

impl Identity {
    pub const ALL: [Identity; 8] = [
        Identity::Ipp1,
        Identity::Ipp2,
        Identity::Ipp3,
        Identity::Ipp4,
        Identity::Ipp5,
        Identity::Ipp6,
        Identity::IppNew,
        Identity::New1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Identity::Ipp1 => "IPP1",
            Identity::Ipp2 => "IPP2",
            Identity::Ipp3 => "IPP3",
            Identity::Ipp4 => "IPP4",
            Identity::Ipp5 => "IPP5",
            Identity::Ipp6 => "IPP6",
            Identity::IppNew => "IPPnew",
            Identity::New1 => "New1",
        }
    }

    pub fn parse(s: &str) -> Result<Identity> {
        Identity::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }

    fn needs_zero_v(self) -> bool {
        !matches!(self, Identity::Ipp1 | Identity::Ipp2)
    }
}

/// One grid line, indices 0..=N+1.
struct Line<'a> {
    g: &'a [f64],
    f: &'a [f64],
    v: &'a [f64],
    h: f64,
}

fn int_open(h: f64, n: usize, term: impl Fn(usize) -> f64) -> f64 {
    let mut s = Sum::new();
    for j in 1..=n {
        s.add(term(j));
    }
    h * s.value()
}

fn int_left(h: f64, n: usize, term: impl Fn(usize) -> f64) -> f64 {
    let mut s = Sum::new();
    for j in 0..=n {
        s.add(term(j));
    }
    h * s.value()
}

fn int_right(h: f64, n: usize, term: impl Fn(usize) -> f64) -> f64 {
    let mut s = Sum::new();
    for j in 1..=n + 1 {
        s.add(term(j));
    }
    h * s.value()
}

impl Line<'_> {
    fn n(&self) -> usize {
        self.g.len() - 2
    }
    fn dp(x: &[f64], j: usize, h: f64) -> f64 {
        (x[j + 1] - x[j]) / h
    }
    fn dm(x: &[f64], j: usize, h: f64) -> f64 {
        (x[j] - x[j - 1]) / h
    }
    fn dc(x: &[f64], j: usize, h: f64) -> f64 {
        (x[j + 1] - x[j - 1]) / (2.0 * h)
    }
    fn lap(x: &[f64], j: usize, h: f64) -> f64 {
        (x[j + 1] - 2.0 * x[j] + x[j - 1]) / (h * h)
    }
    fn mp(x: &[f64], j: usize) -> f64 {
        0.5 * (x[j + 1] + x[j])
    }

    fn sides(&self, id: Identity) -> (f64, f64) {
        let (g, f, v, h, n) = (self.g, self.f, self.v, self.h, self.n());
        match id {
            Identity::Ipp1 => {
                let lhs = int_left(h, n, |j| g[j] * Self::dp(f, j, h));
                let rhs = -int_right(h, n, |j| Self::dm(g, j, h) * f[j]) + g[n + 1] * f[n + 1] - g[0] * f[0];
                (lhs, rhs)
            }
            Identity::Ipp2 => {
                let lhs = int_open(h, n, |j| g[j] * Self::dc(f, j, h));
                let rhs = int_left(h, n, |j| Self::mp(g, j) * Self::dp(f, j, h))
                    - 0.5 * h * g[0] * Self::dp(f, 0, h)
                    - 0.5 * h * g[n + 1] * Self::dm(f, n + 1, h);
                (lhs, rhs)
            }
            Identity::Ipp3 => {
                let lhs = 2.0 * int_open(h, n, |j| g[j] * v[j] * Self::dc(v, j, h));
                let rhs = -int_open(h, n, |j| v[j] * v[j] * Self::dc(g, j, h))
                    + 0.5 * h * h * int_left(h, n, |j| Self::dp(v, j, h).powi(2) * Self::dp(g, j, h));
                (lhs, rhs)
            }
            Identity::Ipp4 => {
                let lhs = int_open(h, n, |j| g[j] * Self::lap(v, j, h));
                let rhs = -int_left(h, n, |j| Self::dp(v, j, h) * Self::dp(g, j, h)) - Self::dp(v, 0, h) * g[0]
                    + Self::dm(v, n + 1, h) * g[n + 1];
                (lhs, rhs)
            }
            Identity::Ipp5 => {
                let lhs = int_open(h, n, |j| g[j] * v[j] * Self::lap(v, j, h));
                let rhs = -int_left(h, n, |j| Self::dp(v, j, h).powi(2) * Self::mp(g, j))
                    + 0.5 * int_open(h, n, |j| v[j] * v[j] * Self::lap(g, j, h));
                (lhs, rhs)
            }
            Identity::Ipp6 => {
                let lhs = int_open(h, n, |j| g[j] * Self::lap(v, j, h) * Self::dc(v, j, h));
                let rhs = -0.5 * int_left(h, n, |j| Self::dp(v, j, h).powi(2) * Self::dp(g, j, h))
                    + 0.5 * Self::dm(v, n + 1, h).powi(2) * g[n + 1]
                    - 0.5 * Self::dp(v, 0, h).powi(2) * g[0];
                (lhs, rhs)
            }
            Identity::IppNew => {
                let lhs = int_left(h, n, |j| Self::mp(v, j) * Self::dp(f, j, h) * Self::dp(g, j, h));
                let rhs = int_open(h, n, |j| v[j] * Self::dc(f, j, h) * Self::dc(g, j, h))
                    + 0.25 * h * h * int_open(h, n, |j| v[j] * Self::lap(f, j, h) * Self::lap(g, j, h));
                (lhs, rhs)
            }
            Identity::New1 => unreachable!("two-dimensional identity"),
        }
    }
}

fn line_of(field: &NodeField, ax: Axis, fixed: usize) -> Vec<f64> {
    let s = field.mesh().side();
    (0..s)
        .map(|k| match ax {
            Axis::X1 => field.get(k, fixed),
            Axis::X2 => field.get(fixed, k),
        })
        .collect()
}

fn normalized(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1.0)
}

/// Both sides of New-1: ∫ g Δ_{h,1}v ∂_{h,2}v over Ω_h against its three-term expansion.
pub fn new1_sides(g: &NodeField, v: &NodeField) -> (f64, f64) {
    let mesh = *g.mesh();
    let n = mesh.n();
    let h = mesh.h();
    let h2 = h * h;
    let lap1 = second_difference(v, Axis::X1);
    let d2v = d_central(v, Axis::X2); // zero on i = 0 and i = N+1
    let mut lhs = Sum::new();
    for i in 1..=n {
        for j in 1..=n {
            lhs.add(g.get(i, j) * lap1.get(i, j) * d2v.get(i, j));
        }
    }
    let mg = |i: usize, j: usize| 0.5 * (g.get(i + 1, j) + g.get(i, j));
    let mut t1 = Sum::new();
    let mut t2 = Sum::new();
    for i in 0..=n {
        for j in 1..=n {
            let dpv = (v.get(i + 1, j) - v.get(i, j)) / h;
            let d2mg = (mg(i, j + 1) - mg(i, j - 1)) / (2.0 * h);
            t1.add(dpv * dpv * d2mg);
            let m_d2v = 0.5 * (d2v.get(i + 1, j) + d2v.get(i, j));
            let dpg = (g.get(i + 1, j) - g.get(i, j)) / h;
            t2.add(dpv * m_d2v * dpg);
        }
    }
    let mut t3 = Sum::new();
    for i in 0..=n {
        for j in 0..=n {
            let dpp = (v.get(i + 1, j + 1) - v.get(i + 1, j) - v.get(i, j + 1) + v.get(i, j)) / h2;
            let d2pmg = (mg(i, j + 1) - mg(i, j)) / h;
            t3.add(dpp * dpp * d2pmg);
        }
    }
    let rhs = h2 * (0.5 * t1.value() - t2.value()) - 0.25 * h2 * h2 * t3.value();
    (h2 * lhs.value(), rhs)
}

/// Normalized residual |LHS − RHS| / (|LHS| + |RHS| + 1) of a named identity.
/// One-dimensional identities run along every interior row and column; the
/// maximum over lines is returned. `f` is the second function of IPP1, IPP2 and IPPnew.
pub fn ipp_residual(id: Identity, g: &NodeField, v: &NodeField, f: &NodeField) -> Result<f64> {
    g.mesh().check_same(v.mesh())?;
    g.mesh().check_same(f.mesh())?;
    if id.needs_zero_v() && !v.is_dirichlet_zero() {
        return Err(Error::Precondition(format!("{} needs v = 0 on the boundary", id.name())));
    }
    if id == Identity::New1 {
        let (l, r) = new1_sides(g, v);
        return Ok(normalized(l, r));
    }
    let n = g.mesh().n();
    let h = g.mesh().h();
    let mut worst: f64 = 0.0;
    for ax in Axis::BOTH {
        for fixed in 1..=n {
            let (gl, fl, vl) = (line_of(g, ax, fixed), line_of(f, ax, fixed), line_of(v, ax, fixed));
            let line = Line { g: &gl, f: &fl, v: &vl, h };
            let (l, r) = line.sides(id);
            worst = worst.max(normalized(l, r));
        }
    }
    Ok(worst)
}

/// One residual of the randomized identity suite.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IppRow {
    pub identity: &'static str,
    pub n: usize,
    pub trial: usize,
    pub residual: f64,
}

/// Residuals of every identity on `trials` random (g, f, v) per mesh, v Dirichlet-zero.
/// Trial t on mesh N draws from its own stream, so rows do not depend on the order of `ns`.
pub fn ipp_suite(ns: &[usize], trials: usize, seed: u64) -> Result<Vec<IppRow>> {
    use rand::{Rng, SeedableRng};
    let mut rows = vec![];
    for &n in ns {
        let m = Mesh::new(n)?;
        for t in 0..trials {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((n as u64) << 32) | t as u64);
            let mut rnd = || NodeField::from_values(m, (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g = rnd()?;
            let f = rnd()?;
            let v = rnd()?.with_zero_boundary();
            for id in Identity::ALL {
                rows.push(IppRow { identity: id.name(), n, trial: t, residual: ipp_residual(id, &g, &v, &f)? });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate_interior, integrate_staggered, Space};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rnd(mesh: Mesh, rng: &mut ChaCha8Rng) -> NodeField {
        NodeField::from_values(mesh, (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn laplacian_of_square() {
        let m = Mesh::new(3).unwrap();
        let f = NodeField::from_fn(m, |x, _| x * x);
        assert_eq!(laplacian(&f).get(2, 2), 2.0);
    }

    #[test]
    fn central_difference_exact_on_affine() {
        let m = Mesh::new(6).unwrap();
        let f = NodeField::from_fn(m, |x, y| x + 3.0 * y);
        let d = d_central(&f, Axis::X1);
        for i in 1..=6 {
            for j in 1..=6 {
                assert!((d.get(i, j) - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn laplacian_eigenvalue_small_mesh() {
        let m = Mesh::new(3).unwrap();
        let h = m.h();
        let v = NodeField::from_fn(m, |x, y| (PI * x).sin() * (PI * y).sin()).with_zero_boundary();
        let lam = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((lam - 18.7452).abs() < 1e-4);
        let l = laplacian(&v);
        for i in 1..=3 {
            for j in 1..=3 {
                assert!((-l.get(i, j) - lam * v.get(i, j)).abs() < 1e-12 * lam);
            }
        }
    }

    #[test]
    fn forward_backward_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mesh::new(5).unwrap();
        let f = rnd(m, &mut rng);
        let p = d_plus(&f, Axis::X2);
        let h = m.h();
        // (∂⁻f)_{i,j+1} = (f_{i,j+1} - f_{i,j})/h = (∂⁺f)_{i,j}
        assert_eq!(d_minus(&f, Axis::X2).get(3, 2), (f.get(3, 3) - f.get(3, 2)) / h);
        assert_eq!(p.get(3, 2), d_minus(&f, Axis::X2).get(3, 2));
        assert_eq!(p.len(), 30);
        let mm = mean(&f, Axis::X1);
        let mp = mean_plus(&f, Axis::X1);
        assert!((mm.get(2, 2) - 0.5 * (mp.get(2, 2) + mp.get(1, 2))).abs() < 1e-15);
    }

    #[test]
    fn normal_difference_examples() {
        let m = Mesh::new(8).unwrap();
        let z = normal_difference(&NodeField::zeros(m), Edge::X1Plus).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        let f = NodeField::from_fn(m, |x, y| (PI * x).sin() * (PI * y).sin()).with_zero_boundary();
        let t = normal_difference(&f, Edge::X1Plus).unwrap();
        let h = m.h();
        for j in 1..=8 {
            let expect = -(PI * (1.0 - h)).sin() * (PI * j as f64 * h).sin() / h;
            assert!((t.get(Edge::X1Plus, j) - expect).abs() < 1e-12);
        }
        assert!(normal_difference(&NodeField::constant(m, 1.0), Edge::X1Plus).is_err());
    }

    #[test]
    fn kavian_trace_vanishes_on_sub_edge() {
        for n in 8..20 {
            let m = Mesh::new(n).unwrap();
            let w = kavian(m);
            let t = normal_difference(&w, Edge::X1Plus).unwrap();
            for j in 1..=n {
                let x2 = m.x(j);
                if x2 > 0.25 && x2 < 0.75 {
                    assert_eq!(t.get(Edge::X1Plus, j), 0.0);
                }
            }
        }
    }

    pub(crate) fn kavian(m: Mesh) -> NodeField {
        NodeField::from_index_fn(m, |i, j| if i == j { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 })
            .with_zero_boundary()
    }

    #[test]
    fn kavian_is_eigenfunction() {
        let m = Mesh::new(9).unwrap();
        let w = kavian(m);
        let l = laplacian(&w);
        let c = 4.0 / m.h().powi(2);
        for i in 1..=9 {
            for j in 1..=9 {
                assert!((l.get(i, j) + c * w.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn all_identities_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [4, 8, 16] {
            let m = Mesh::new(n).unwrap();
            for _ in 0..20 {
                let g = rnd(m, &mut rng);
                let f = rnd(m, &mut rng);
                let v = rnd(m, &mut rng).with_zero_boundary();
                for id in Identity::ALL {
                    let r = ipp_residual(id, &g, &v, &f).unwrap();
                    assert!(r < 1e-12, "{} N={n} r={r}", id.name());
                }
            }
        }
    }

    #[test]
    fn identity_errors_and_zero_v() {
        let m = Mesh::new(4).unwrap();
        let one = NodeField::constant(m, 1.0);
        let z = NodeField::zeros(m);
        assert!(ipp_residual(Identity::Ipp3, &one, &one, &one).is_err());
        for id in Identity::ALL {
            assert_eq!(ipp_residual(id, &one, &z, &z).unwrap(), 0.0);
        }
        assert!(matches!(Identity::parse("IPP9"), Err(Error::UnknownIdentity(_))));
        assert_eq!(Identity::parse("ippnew").unwrap(), Identity::IppNew);
    }

    #[test]
    fn new1_constant_g_degenerates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mesh::new(8).unwrap();
        let v = rnd(m, &mut rng).with_zero_boundary();
        let (l, r) = new1_sides(&NodeField::constant(m, 1.0), &v);
        assert!(l.abs() < 1e-12 && r.abs() < 1e-12, "{l} {r}");
    }

    #[test]
    fn adjointness_and_negativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Mesh::new(10).unwrap();
        let u = rnd(m, &mut rng).with_zero_boundary();
        let v = rnd(m, &mut rng).with_zero_boundary();
        let a = integrate_interior(&laplacian(&u).mul(&v));
        let b = integrate_interior(&u.mul(&laplacian(&v)));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        let lhs = integrate_interior(&laplacian(&v).mul(&v));
        let mut rhs = 0.0;
        for ax in Axis::BOTH {
            let d = d_plus(&v, ax);
            rhs -= integrate_staggered(&d.zip_map(&d, |x, y| x * y), None).unwrap();
        }
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs());
        let _ = crate::grid::norm(&v, Space::H2).unwrap();
    }
}
