//! Discrete elliptic problem −Δ_h w + q w = g, its H²_h regularity ratio, and the
//! elliptic Carleman functional on the cylinder (−3,3)×Ω_h with a regularized weight.

use crate::diffops::{d_plus, laplacian};
use crate::error::{Error, Result};
use crate::grid::{norm, Axis, Edge, Mesh, NodeField, Space};
use crate::num::{plateau, Sum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticProblem {
    pub mesh: Mesh,
    pub q: NodeField,
    pub g: NodeField,
    /// ‖q‖_{L∞_h}
    pub m: f64,
}

impl EllipticProblem {
    pub fn new(q: NodeField, g: NodeField) -> Result<Self> {
        let mesh = *q.mesh();
        mesh.check_same(g.mesh())?;
        let m = q.max_abs_interior();
        Ok(Self { mesh, q, g, m })
    }

    /// −Δ_h w + q w on interior nodes, zero on the boundary.
    pub fn apply(&self, w: &NodeField) -> NodeField {
        laplacian(w).scale(-1.0).add(&self.q.mul(w)).with_zero_boundary()
    }

    pub fn residual(&self, w: &NodeField) -> f64 {
        let r = self.apply(w).sub(&self.g).with_zero_boundary();
        norm(&r, Space::Lp(2.0)).unwrap_or(f64::NAN)
    }
}

fn dot(a: &NodeField, b: &NodeField) -> f64 {
    let m = a.mesh();
    let n = m.n();
    let mut s = Sum::new();
    for i in 1..=n {
        for j in 1..=n {
            s.add(a.get(i, j) * b.get(i, j));
        }
    }
    s.value()
}

/// Jacobi-preconditioned conjugate gradient, relative tolerance 1e−12, cap 20N².
pub fn solve_elliptic(p: &EllipticProblem) -> Result<NodeField> {
    let mesh = p.mesh;
    let n = mesh.n();
    let h2 = mesh.h().powi(2);
    let g = p.g.clone().with_zero_boundary();
    let gnorm = dot(&g, &g).sqrt();
    let mut x = NodeField::zeros(mesh);
    if gnorm == 0.0 {
        return Ok(x);
    }
    let diag = p.q.map(|q| 4.0 / h2 + q);
    let precond = |r: &NodeField| r.zip_map(&diag, |a, d| if d != 0.0 { a / d } else { a }).with_zero_boundary();
    let mut r = g.clone();
    let mut z = precond(&r);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let cap = 20 * n * n;
    for _ in 0..cap {
        let ad = p.apply(&d);
        let curv = dot(&d, &ad);
        if !(curv > 0.0) {
            return Err(Error::NegativeCurvature(curv / dot(&d, &d)));
        }
        let alpha = rz / curv;
        x.axpy(alpha, &d);
        r.axpy(-alpha, &ad);
        if dot(&r, &r).sqrt() <= 1e-12 * gnorm {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        d = z.zip_map(&d, |a, b| a + beta * b);
    }
    let rel = dot(&r, &r).sqrt() / gnorm;
    if rel <= 1e-10 {
        Ok(x)
    } else {
        Err(Error::Divergence { step: cap })
    }
}

/// ‖w‖_{H²_h} / ‖g‖_{L²_h}.
pub fn h2_regularity_ratio(p: &EllipticProblem, w: &NodeField) -> Result<f64> {
    let gn = norm(&p.g, Space::Lp(2.0))?;
    if gn == 0.0 {
        return Err(Error::UndefinedRatio("g = 0".into()));
    }
    if !w.is_dirichlet_zero() {
        return Err(Error::Precondition("w must vanish on the boundary".into()));
    }
    Ok(norm(w, Space::H2)? / gn)
}

/// Disk-cap geometry: ω_r = Ω ∩ B(c, r) with c = (1+e, mid Γ₀) and r chosen so that
/// ∂ω_r ∩ ∂Ω is the closure of Γ₀ = {1}×(a,b). ψ_r = κ(r² − |x − c|²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticGeometry {
    pub gamma0: (f64, f64),
    pub offset: f64,
    pub kappa: f64,
    pub mu: f64,
    pub r0: f64,
    pub r_big: f64,
}

impl Default for EllipticGeometry {
    fn default() -> Self {
        Self { gamma0: (0.3, 0.7), offset: 0.05, kappa: 0.7, mu: 1.0, r0: 0.4, r_big: 0.1 }
    }
}

/// Regularized elliptic weight and the extrema entering the stability argument.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticWeight {
    pub geometry: EllipticGeometry,
    pub center: (f64, f64),
    pub radius: f64,
    /// ε₀ in the definition of ℐ.
    pub eps0: f64,
    /// ℐ_{ω_r}
    pub inf_omega: f64,
    /// 𝒮
    pub sup_all: f64,
    /// 𝒮_{(2,3)}
    pub sup_23: f64,
    /// 𝒮_{𝒞_r}
    pub sup_annulus: f64,
}

impl EllipticWeight {
    pub fn psi(&self, x1: f64, x2: f64) -> f64 {
        let d2 = (x1 - self.center.0).powi(2) + (x2 - self.center.1).powi(2);
        self.geometry.kappa * (self.radius * self.radius - d2)
    }

    pub fn grad_psi(&self, x1: f64, x2: f64) -> (f64, f64) {
        let k = self.geometry.kappa;
        (-2.0 * k * (x1 - self.center.0), -2.0 * k * (x2 - self.center.1))
    }

    pub fn phi(&self, s: f64, x1: f64, x2: f64) -> f64 {
        (self.geometry.mu * (self.psi(x1, x2) - s * s)).exp()
    }

    /// d(x, ω_r) for x ∈ Ω̄.
    pub fn dist_omega(&self, x1: f64, x2: f64) -> f64 {
        let rho = ((x1 - self.center.0).powi(2) + (x2 - self.center.1).powi(2)).sqrt();
        (rho - self.radius).max(0.0)
    }

    pub fn in_omega(&self, x1: f64, x2: f64) -> bool {
        self.dist_omega(x1, x2) == 0.0
    }

    /// ω_{r,R}
    pub fn in_omega_r(&self, x1: f64, x2: f64) -> bool {
        self.dist_omega(x1, x2) < self.geometry.r_big
    }

    pub fn in_annulus(&self, x1: f64, x2: f64) -> bool {
        let d = self.dist_omega(x1, x2);
        d >= 0.5 * self.geometry.r_big && d <= self.geometry.r_big
    }

    /// ℐ_{ω_r} − max(𝒮_{𝒞_r}, 𝒮_{(2,3)})
    pub fn ordering_gap(&self) -> f64 {
        self.inf_omega - self.sup_annulus.max(self.sup_23)
    }
}

/// Golden-section maximization of f on [a, b].
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..80 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    f(0.5 * (a + b))
}

/// Extremum of ψ over {x ∈ Ω̄ : member(x)} by grid search at step `step`, then
/// golden-section refinement along the steepest direction through the best node.
fn extremum<M: Fn(f64, f64) -> bool>(w: &EllipticWeight, member: M, step: f64, maximize: bool) -> Option<f64> {
    let sgn = if maximize { 1.0 } else { -1.0 };
    let m = (1.0 / step).ceil() as usize;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..=m {
        for j in 0..=m {
            let (x1, x2) = (i as f64 / m as f64, j as f64 / m as f64);
            if !member(x1, x2) {
                continue;
            }
            let v = sgn * w.psi(x1, x2);
            if best.is_none_or(|b| v > b.0) {
                best = Some((v, x1, x2));
            }
        }
    }
    let (v0, x1, x2) = best?;
    let (g1, g2) = w.grad_psi(x1, x2);
    let gn = (g1 * g1 + g2 * g2).sqrt();
    if gn == 0.0 {
        return Some(sgn * v0);
    }
    let (u1, u2) = (sgn * g1 / gn, sgn * g2 / gn);
    let f = |t: f64| {
        let (y1, y2) = (x1 + t * u1, x2 + t * u2);
        if (0.0..=1.0).contains(&y1) && (0.0..=1.0).contains(&y2) && member(y1, y2) {
            sgn * w.psi(y1, y2)
        } else {
            f64::NEG_INFINITY
        }
    };
    let v = golden_max(f, -step, step).max(v0);
    Some(sgn * v)
}

pub fn build_elliptic_weight(geom: EllipticGeometry, search_step: f64) -> Result<EllipticWeight> {
    let (a, b) = geom.gamma0;
    if !(0.0 < a && a < b && b < 1.0) || !(geom.offset > 0.0) || !(geom.kappa > 0.0) || !(geom.mu >= 1.0) {
        return Err(Error::InvalidParameter("elliptic geometry".into()));
    }
    if !(geom.r_big > 0.0 && geom.r_big < 0.5 * geom.r0) {
        return Err(Error::InvalidParameter("need 0 < R < R0/2".into()));
    }
    let half = 0.5 * (b - a);
    let radius = (geom.offset.powi(2) + half * half).sqrt();
    let center = (1.0 + geom.offset, 0.5 * (a + b));
    if center.1 - radius - geom.r_big <= 0.0 || center.1 + radius + geom.r_big >= 1.0 {
        return Err(Error::InvalidParameter("ω_{r,R} reaches the edges x2 = 0 or x2 = 1".into()));
    }
    let mut w = EllipticWeight {
        geometry: geom,
        center,
        radius,
        eps0: 0.0,
        inf_omega: 0.0,
        sup_all: 0.0,
        sup_23: 0.0,
        sup_annulus: 0.0,
    };
    check_weight_bullets(&w)?;
    let step = search_step;
    let inf_om = extremum(&w, |x, y| w.in_omega(x, y), step, false).ok_or(Error::WeightConstruction("empty ω_r".into()))?;
    let sup_c = extremum(&w, |x, y| w.in_annulus(x, y), step, true).ok_or(Error::WeightConstruction("empty annulus".into()))?;
    let sup_all = extremum(&w, |_, _| true, step, true).unwrap();
    if !(inf_om > sup_c) {
        return Err(Error::WeightConstruction(format!("inf over ω_r of ψ = {inf_om} <= sup over annulus = {sup_c}")));
    }
    let room = (inf_om - sup_c).min(4.0 + inf_om - sup_all);
    let eps0 = (0.5 * room).sqrt().min(0.9);
    let mu = geom.mu;
    w.eps0 = eps0;
    w.inf_omega = (mu * (inf_om - eps0 * eps0)).exp();
    w.sup_all = (mu * sup_all).exp();
    w.sup_23 = (mu * (sup_all - 4.0)).exp();
    w.sup_annulus = (mu * sup_c).exp();
    if !(w.ordering_gap() > 0.0) {
        return Err(Error::WeightConstruction("ordering of extrema fails".into()));
    }
    Ok(w)
}

/// Dense-sampling check of the five weight conditions, plus ‖ψ_r‖∞ ≤ 1 and
/// |∇ψ_r| > 0 on ω̄_{r,R}.
fn check_weight_bullets(w: &EllipticWeight) -> Result<()> {
    let mut failed = vec![];
    let m = 400;
    let (mut min_om, mut max_om, mut min_grad, mut max_abs) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for i in 0..=m {
        for j in 0..=m {
            let (x1, x2) = (i as f64 / m as f64, j as f64 / m as f64);
            let p = w.psi(x1, x2);
            max_abs = max_abs.max(p.abs());
            if w.in_omega(x1, x2) {
                min_om = min_om.min(p);
                max_om = max_om.max(p.abs());
            }
            if w.dist_omega(x1, x2) <= w.geometry.r_big {
                let (g1, g2) = w.grad_psi(x1, x2);
                min_grad = min_grad.min((g1 * g1 + g2 * g2).sqrt());
            }
        }
    }
    if min_om < -1e-14 {
        failed.push("psi >= 0 on the closure of omega_r");
    }
    if !(min_grad > 0.0) {
        failed.push("inf |grad psi| > 0");
    }
    // arc ∂ω_r \ Γ₀, parametrized by angle
    let th = (w.center.0 - 1.0).atan2(0.5 * (w.geometry.gamma0.1 - w.geometry.gamma0.0)).abs();
    let th0 = std::f64::consts::FRAC_PI_2 + th;
    let (mut dnu, mut zero) = (f64::NEG_INFINITY, 0.0f64);
    for k in 0..1000 {
        let a = th0 + (k as f64 + 0.5) / 1000.0 * (2.0 * std::f64::consts::PI - 2.0 * th0);
        let (x1, x2) = (w.center.0 + w.radius * a.cos(), w.center.1 + w.radius * a.sin());
        let (g1, g2) = w.grad_psi(x1, x2);
        dnu = dnu.max(g1 * a.cos() + g2 * a.sin());
        zero = zero.max(w.psi(x1, x2).abs());
    }
    if !(dnu < 0.0) {
        failed.push("normal derivative < 0 on the arc");
    }
    if zero > 1e-12 {
        failed.push("psi = 0 on the arc");
    }
    if max_om > 0.5 {
        failed.push("|psi| <= 1/2 on omega_r");
    }
    if max_abs > 1.0 {
        failed.push("|psi| <= 1 on Omega");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::WeightConstruction(failed.join("; ")))
    }
}

/// Uniform s-grid on [−3,3].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SGrid {
    pub ds: f64,
    pub len: usize,
}

impl SGrid {
    pub fn with_step(step: f64) -> Self {
        let n = (6.0 / step).round().max(2.0) as usize;
        Self { ds: 6.0 / n as f64, len: n + 1 }
    }
    pub fn s(&self, k: usize) -> f64 {
        -3.0 + k as f64 * self.ds
    }
}

/// Elliptic Carleman terms. All carry the factor e^{−2τ𝒮}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticFunctionals {
    pub lhs_v: f64,
    pub lhs_ds: f64,
    pub lhs_grad: f64,
    pub rhs_source: f64,
    pub rhs_obs: f64,
    pub ratio: f64,
}

/// (−∂_ss − Δ_h + q) w with the 3-point s-difference.
pub fn elliptic_source(w: &[NodeField], q: &NodeField, sg: SGrid) -> Vec<NodeField> {
    let len = w.len();
    let ds2 = sg.ds * sg.ds;
    (0..len)
        .map(|k| {
            if k == 0 || k == len - 1 {
                return NodeField::zeros(*q.mesh());
            }
            let dss = w[k + 1].add(&w[k - 1]).sub(&w[k].scale(2.0)).scale(1.0 / ds2);
            dss.scale(-1.0).sub(&laplacian(&w[k])).add(&q.mul(&w[k])).with_zero_boundary()
        })
        .collect()
}

pub fn elliptic_carleman_functionals(weight: &EllipticWeight, w: &[NodeField], q: &NodeField, sg: SGrid, tau: f64, eps_tau_h: f64) -> Result<EllipticFunctionals> {
    let mesh = *q.mesh();
    let h = mesh.h();
    if w.len() != sg.len {
        return Err(Error::InvalidParameter(format!("{} s-slices for an s-grid of {}", w.len(), sg.len)));
    }
    if tau * h > eps_tau_h {
        return Err(Error::InadmissibleParameter(format!("tau*h = {} > {eps_tau_h}", tau * h)));
    }
    for (k, f) in w.iter().enumerate() {
        mesh.check_same(f.mesh())?;
        if !f.is_dirichlet_zero() {
            return Err(Error::Precondition(format!("w not zero on the boundary at s-index {k}")));
        }
    }
    if w[0].max_abs() != 0.0 || w[sg.len - 1].max_abs() != 0.0 {
        return Err(Error::Precondition("w must vanish at s = ±3".into()));
    }
    let n = mesh.n();
    for f in w {
        for i in 1..=n {
            for j in 1..=n {
                if f.get(i, j) != 0.0 && !weight.in_omega_r(mesh.x(i), mesh.x(j)) {
                    return Err(Error::Precondition("w is not supported in ω_{r,R}".into()));
                }
            }
        }
    }
    let g = elliptic_source(w, q, sg);
    let smax = weight.sup_all;
    let ew = |s: f64, i: usize, j: usize| (2.0 * tau * (weight.phi(s, mesh.x(i), mesh.x(j)) - smax)).exp();
    let h2 = h * h;
    let (a, b) = weight.geometry.gamma0;
    let mut t = [Sum::new(), Sum::new(), Sum::new(), Sum::new(), Sum::new()];
    for k in 0..sg.len {
        let s = sg.s(k);
        let ws = if k == 0 || k == sg.len - 1 { 0.5 * sg.ds } else { sg.ds };
        let e = NodeField::from_index_fn(mesh, |i, j| ew(s, i, j));
        for i in 1..=n {
            for j in 1..=n {
                t[0].add(ws * h2 * e.get(i, j) * w[k].get(i, j).powi(2));
                t[3].add(ws * h2 * e.get(i, j) * g[k].get(i, j).powi(2));
                if k + 1 < sg.len {
                    // forward s-difference on the s-intervals, weight at the left node
                    let d = (w[k + 1].get(i, j) - w[k].get(i, j)) / sg.ds;
                    t[1].add(sg.ds * h2 * e.get(i, j) * d * d);
                }
            }
        }
        for ax in Axis::BOTH {
            let dp = d_plus(&w[k], ax);
            for (i, j) in dp.indices() {
                t[2].add(ws * h2 * e.get(i, j) * dp.get(i, j).powi(2));
            }
        }
        for m in 1..=n {
            let x2 = mesh.x(m);
            if x2 > a && x2 < b {
                let (bi, bj) = Edge::X1Plus.node(&mesh, m);
                let (ai, aj) = Edge::X1Plus.inner(&mesh, m);
                let d = (w[k].get(bi, bj) - w[k].get(ai, aj)) / h;
                t[4].add(ws * h * e.get(bi, bj) * d * d);
            }
        }
    }
    let v: Vec<f64> = t.iter().map(|s| s.value()).collect();
    let lhs = [tau.powi(3) * v[0], tau * v[1], tau * v[2]];
    let rhs = [v[3], tau * v[4]];
    let (l, r) = (lhs.iter().sum::<f64>(), rhs.iter().sum::<f64>());
    let ratio = if l == 0.0 { 0.0 } else if r == 0.0 { f64::INFINITY } else { l / r };
    Ok(EllipticFunctionals { lhs_v: lhs[0], lhs_ds: lhs[1], lhs_grad: lhs[2], rhs_source: rhs[0], rhs_obs: rhs[1], ratio })
}

/// w = χ_S(s)·(1 − x₁)·b(x)·(1 + c₁ sin(kπx₂))·(1 + c₂ cos(ωs)), with b a radial
/// cutoff equal to 1 on ω_r and 0 outside ω_{r,R}. Seed 0 has c₁ = c₂ = 0.
pub fn elliptic_sample(weight: &EllipticWeight, mesh: Mesh, sg: SGrid, seed: u64) -> Vec<NodeField> {
    let (c1, k, c2, om) = if seed == 0 {
        (0.0, 1.0, 0.0, 0.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (rng.random_range(-0.5..0.5), rng.random_range(1..=3) as f64, rng.random_range(-0.5..0.5), rng.random_range(0.5..4.0))
    };
    let rr = weight.geometry.r_big;
    let space = NodeField::from_fn(mesh, |x1, x2| {
        let d = weight.dist_omega(x1, x2);
        let b = plateau(d, 0.0, 0.9 * rr).0;
        (1.0 - x1) * b * (1.0 + c1 * (k * std::f64::consts::PI * x2).sin())
    })
    .with_zero_boundary();
    (0..sg.len)
        .map(|i| {
            let s = sg.s(i);
            let f = plateau(s, 2.0, 3.0).0 * (1.0 + c2 * (om * s).cos());
            if i == 0 || i == sg.len - 1 {
                NodeField::zeros(mesh)
            } else {
                space.scale(f)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticSweepRow {
    pub n: usize,
    pub tau: f64,
    pub c_emp: f64,
}

/// max ratio over `samples` jets for each N at fixed τh, s-step = h, q from `q`.
pub fn elliptic_sweep<Q: Fn(f64, f64) -> f64>(weight: &EllipticWeight, ns: &[usize], tau_h: f64, samples: usize, seed: u64, q: Q, eps_tau_h: f64) -> Result<Vec<EllipticSweepRow>> {
    let mut rows = vec![];
    for &n in ns {
        let mesh = Mesh::new(n)?;
        let tau = tau_h / mesh.h();
        let sg = SGrid::with_step(mesh.h());
        let qf = NodeField::from_fn(mesh, &q);
        let mut c = 0.0f64;
        for s in 0..samples as u64 {
            let w = elliptic_sample(weight, mesh, sg, seed + s);
            c = c.max(elliptic_carleman_functionals(weight, &w, &qf, sg, tau, eps_tau_h)?.ratio);
        }
        rows.push(EllipticSweepRow { n, tau, c_emp: c });
    }
    Ok(rows)
}

/// Fixed smooth family used for the regularity check: q = 1 + x₁x₂, g = e^{x₁} cos(2x₂).
pub fn regularity_family(mesh: Mesh) -> Result<EllipticProblem> {
    EllipticProblem::new(
        NodeField::from_fn(mesh, |x, y| 1.0 + x * y),
        NodeField::from_fn(mesh, |x, y| x.exp() * (2.0 * y).cos()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sinsin(mesh: Mesh) -> NodeField {
        NodeField::from_fn(mesh, |x, y| (PI * x).sin() * (PI * y).sin()).with_zero_boundary()
    }

    #[test]
    fn eigenfunction_solve() {
        let mesh = Mesh::new(16).unwrap();
        let h = mesh.h();
        let lam = 2.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let u = sinsin(mesh);
        let p = EllipticProblem::new(NodeField::zeros(mesh), u.scale(lam)).unwrap();
        let w = solve_elliptic(&p).unwrap();
        assert!(w.sub(&u).max_abs() / u.max_abs() < 1e-9);
        assert!(p.residual(&w) <= 1e-10 * norm(&p.g, Space::Lp(2.0)).unwrap());
    }

    #[test]
    fn zero_rhs_and_manufactured() {
        let mesh = Mesh::new(12).unwrap();
        let p = EllipticProblem::new(NodeField::constant(mesh, 1.0), NodeField::zeros(mesh)).unwrap();
        assert_eq!(solve_elliptic(&p).unwrap().max_abs(), 0.0);
        assert!(matches!(h2_regularity_ratio(&p, &NodeField::zeros(mesh)), Err(Error::UndefinedRatio(_))));
        let ws = NodeField::from_fn(mesh, |x, y| x * (1.0 - x) * y * (1.0 - y)).with_zero_boundary();
        let q = NodeField::constant(mesh, 1.0);
        let g = laplacian(&ws).scale(-1.0).add(&ws).with_zero_boundary();
        let w = solve_elliptic(&EllipticProblem::new(q, g).unwrap()).unwrap();
        assert!(w.sub(&ws).max_abs() < 1e-9);
    }

    #[test]
    fn indefinite_operator_detected() {
        let mesh = Mesh::new(8).unwrap();
        let q = NodeField::constant(mesh, -200.0);
        let g = sinsin(mesh);
        match solve_elliptic(&EllipticProblem::new(q, g).unwrap()) {
            Err(Error::NegativeCurvature(c)) => assert!(c < 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn solver_is_self_adjoint() {
        let mesh = Mesh::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rnd = || NodeField::from_values(mesh, (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap().with_zero_boundary();
        let q = rnd().map(|v| v.abs());
        let (g1, g2) = (rnd(), rnd());
        let s1 = solve_elliptic(&EllipticProblem::new(q.clone(), g1.clone()).unwrap()).unwrap();
        let s2 = solve_elliptic(&EllipticProblem::new(q, g2.clone()).unwrap()).unwrap();
        let (a, b) = (dot(&s1, &g2), dot(&g1, &s2));
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()));
    }

    #[test]
    fn h2_norm_matches_direct_sum_for_eigenfunction() {
        let mesh = Mesh::new(9).unwrap();
        let (n, h) = (mesh.n(), mesh.h());
        let u = sinsin(mesh);
        let direct = {
            let f = |i: usize, j: usize| u.get(i, j);
            let mut s = 0.0;
            for i in 0..=n + 1 {
                for j in 0..=n + 1 {
                    s += h * h * f(i, j).powi(2);
                }
            }
            for i in 0..=n {
                for j in 1..=n {
                    s += h * h * ((f(i + 1, j) - f(i, j)) / h).powi(2) + h * h * ((f(j, i + 1) - f(j, i)) / h).powi(2);
                }
            }
            for i in 1..=n {
                for j in 1..=n {
                    let d1 = (f(i + 1, j) - 2.0 * f(i, j) + f(i - 1, j)) / (h * h);
                    let d2 = (f(i, j + 1) - 2.0 * f(i, j) + f(i, j - 1)) / (h * h);
                    s += h * h * (d1 * d1 + d2 * d2);
                }
            }
            for i in 0..=n {
                for j in 0..=n {
                    let m = (f(i + 1, j + 1) - f(i + 1, j) - f(i, j + 1) + f(i, j)) / (h * h);
                    s += h * h * m * m;
                }
            }
            s.sqrt()
        };
        assert!((norm(&u, Space::H2).unwrap() - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn regularity_ratio_bounded() {
        let mut r = vec![];
        for n in [10, 20, 40] {
            let p = regularity_family(Mesh::new(n).unwrap()).unwrap();
            let w = solve_elliptic(&p).unwrap();
            r.push(h2_regularity_ratio(&p, &w).unwrap());
        }
        let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |a, &x| (a.0.min(x), a.1.max(x)));
        assert!(hi / lo < 1.5, "{r:?}");
    }

    #[test]
    fn default_weight_is_valid() {
        let w = build_elliptic_weight(EllipticGeometry::default(), 0.25 / 41.0).unwrap();
        assert!(w.ordering_gap() > 0.0);
        assert!(w.inf_omega > w.sup_annulus && w.inf_omega > w.sup_23);
        assert!(w.sup_all >= w.inf_omega);
        // Γ₀ endpoints sit on the circle
        assert!(w.psi(1.0, 0.3).abs() < 1e-14 && w.psi(1.0, 0.7).abs() < 1e-14);
        let mut bad = EllipticGeometry::default();
        bad.kappa = 5.0;
        assert!(matches!(build_elliptic_weight(bad, 0.01), Err(Error::WeightConstruction(_))));
    }

    #[test]
    fn functionals_zero_support_and_admissibility() {
        let wt = build_elliptic_weight(EllipticGeometry::default(), 0.01).unwrap();
        let mesh = Mesh::new(10).unwrap();
        let sg = SGrid::with_step(mesh.h());
        let q = NodeField::constant(mesh, 1.0);
        let z = vec![NodeField::zeros(mesh); sg.len];
        let f = elliptic_carleman_functionals(&wt, &z, &q, sg, 1.0, 0.2).unwrap();
        assert_eq!((f.lhs_v, f.rhs_source, f.ratio), (0.0, 0.0, 0.0));
        let mut bad = z.clone();
        bad[5].set(2, 2, 1.0);
        assert!(matches!(elliptic_carleman_functionals(&wt, &bad, &q, sg, 1.0, 0.2), Err(Error::Precondition(_))));
        assert!(matches!(elliptic_carleman_functionals(&wt, &z, &q, sg, 3.0, 0.2), Err(Error::InadmissibleParameter(_))));
        let w = elliptic_sample(&wt, mesh, sg, 0);
        let f = elliptic_carleman_functionals(&wt, &w, &q, sg, 1.0, 0.2).unwrap();
        assert!(f.ratio.is_finite() && f.ratio > 0.0 && f.rhs_obs > 0.0);
    }

    #[test]
    fn elliptic_sweep_stable() {
        let wt = build_elliptic_weight(EllipticGeometry::default(), 0.01).unwrap();
        let rows = elliptic_sweep(&wt, &[10, 20, 40], 0.1, 4, 0, |x, y| 1.0 + x * y, 0.2).unwrap();
        let c: Vec<f64> = rows.iter().map(|r| r.c_emp).collect();
        let (lo, hi) = c.iter().fold((f64::INFINITY, 0.0f64), |a, &x| (a.0.min(x), a.1.max(x)));
        assert!(hi / lo < 2.0, "{c:?}");
    }
}
