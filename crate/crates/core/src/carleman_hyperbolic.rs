//! Carleman weight ψ = |x − x_a|² − βt² + c₀, φ = e^{μψ}, the conjugated wave
//! operator e^{τφ}□_h e^{−τφ} with its A_{ℓ,k} coefficients, the L₁/L₂/R
//! splitting, the cross products of L₁v and L₂v, and the weighted functionals of
//! the boundary, distributed and t = 0 estimates.

use crate::diffops::{d_central, d_plus, laplacian, second_difference};
use crate::error::{Error, Result};
use crate::grid::{Axis, Edge, Mesh, NodeField, SubsetMask};
use crate::num::{plateau, GaussLegendre, Sum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanParams {
    pub a: f64,
    pub beta: f64,
    pub c0: f64,
    pub mu: f64,
    pub tau: f64,
    pub t_final: f64,
    /// Admissibility bound on τh.
    pub eps_tau_h: f64,
}

impl CarlemanParams {
    pub fn new(a: f64, beta: f64, c0: f64, mu: f64, tau: f64, t_final: f64, eps_tau_h: f64) -> Result<Self> {
        let p = Self { a, beta, c0, mu, tau, t_final, eps_tau_h };
        p.validate()?;
        Ok(p)
    }

    /// T = 1.6, a = 0.1, β = 0.99·min(1, (2+4a+0.05)/T²), c₀ = 1 + βT² − 2a² + 0.01, μ = 1.
    pub fn gamma_preset(tau: f64) -> Self {
        let t: f64 = 1.6;
        let a = 0.1;
        let beta = (0.99 * ((2.0 + 4.0 * a + 0.05) / (t * t)).min(1.0)).clamp(1e-6, 1.0 - 1e-6);
        let c0 = 1.0 + beta * t * t - 2.0 * a * a + 0.01;
        Self { a, beta, c0, mu: 1.0, tau, t_final: t, eps_tau_h: 0.2 }
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        self.tau = tau;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.a > 0.0) {
            return bad("a must be positive");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0,1)");
        }
        if !(self.mu >= 1.0) {
            return bad("mu must be >= 1");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.t_final > 0.0) {
            return bad("T must be positive");
        }
        if self.psi_min() < 1.0 - 1e-12 {
            return Err(Error::InvalidParameter(format!("min psi = {} < 1", self.psi_min())));
        }
        Ok(())
    }

    pub fn alpha1(&self) -> f64 {
        (self.beta + 1.0) / (self.beta + 2.0)
    }

    pub fn psi(&self, t: f64, x1: f64, x2: f64) -> f64 {
        (x1 + self.a).powi(2) + (x2 + self.a).powi(2) - self.beta * t * t + self.c0
    }
    pub fn psi_t(&self, t: f64) -> f64 {
        -2.0 * self.beta * t
    }
    pub fn psi_tt(&self) -> f64 {
        -2.0 * self.beta
    }
    /// ∂_{x_k}ψ at coordinate x_k.
    pub fn psi_x(&self, xk: f64) -> f64 {
        2.0 * (xk + self.a)
    }
    pub fn phi(&self, t: f64, x1: f64, x2: f64) -> f64 {
        (self.mu * self.psi(t, x1, x2)).exp()
    }

    /// Exact minimum of ψ on [−T,T]×[0,1]², attained at x = 0, t = ±T.
    pub fn psi_min(&self) -> f64 {
        2.0 * self.a * self.a - self.beta * self.t_final * self.t_final + self.c0
    }

    pub fn psi_max(&self) -> f64 {
        2.0 * (1.0 + self.a).powi(2) + self.c0
    }

    pub fn phi_max(&self) -> f64 {
        (self.mu * self.psi_max()).exp()
    }

    /// η > 0 with sup_{|t| ≥ T−η} ψ ≤ inf_x ψ(0,x); needs βT² > 2 + 4a.
    pub fn eta(&self) -> Result<f64> {
        let need = (2.0 + 4.0 * self.a) / self.beta;
        let eta = self.t_final - need.sqrt();
        if eta > 0.0 {
            Ok(eta)
        } else {
            Err(Error::InvalidParameter(format!("beta T^2 = {} <= 2 + 4a", self.beta * self.t_final.powi(2))))
        }
    }

    pub fn check_admissible(&self, h: f64) -> Result<()> {
        let th = self.tau * h;
        if th > self.eps_tau_h * (1.0 + 1e-12) {
            return Err(Error::InadmissibleParameter(format!("tau*h = {th} > {}", self.eps_tau_h)));
        }
        Ok(())
    }
}

/// Uniform time grid t0 + n dt, n < len.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    /// Grid on [−T,T] with 2n+1 points, dt ≤ `max_dt`.
    pub fn symmetric(t_final: f64, max_dt: f64) -> Self {
        let n = (t_final / max_dt).ceil().max(1.0) as usize;
        Self { t0: -t_final, dt: t_final / n as f64, len: 2 * n + 1 }
    }

    /// Step resolving the time profile of e^{2τφ} near t = 0.
    pub fn for_params(p: &CarlemanParams) -> Self {
        let width = 1.0 / (4.0 * p.tau * p.mu * p.beta * p.phi_max()).sqrt();
        Self::symmetric(p.t_final, (0.2 * width).min(0.01))
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|n| self.time(n)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        crate::num::trapezoid_weights(self.len, self.dt)
    }

    /// Index of t = 0, if it is a grid point.
    pub fn zero_index(&self) -> Option<usize> {
        let k = (-self.t0 / self.dt).round();
        (k >= 0.0 && (k as usize) < self.len && (self.time(k as usize)).abs() < 1e-12).then_some(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFields {
    pub grid: TimeGrid,
    pub psi: Vec<NodeField>,
    pub phi: Vec<NodeField>,
    pub psi_t: Vec<f64>,
    pub psi_tt: f64,
}

pub fn weight_fields(p: &CarlemanParams, mesh: Mesh, grid: TimeGrid) -> WeightFields {
    let mut psi = Vec::with_capacity(grid.len);
    let mut phi = Vec::with_capacity(grid.len);
    for t in grid.times() {
        let s = NodeField::from_fn(mesh, |x1, x2| p.psi(t, x1, x2));
        phi.push(s.map(|v| (p.mu * v).exp()));
        psi.push(s);
    }
    WeightFields { grid, psi, phi, psi_t: grid.times().iter().map(|&t| p.psi_t(t)).collect(), psi_tt: p.psi_tt() }
}

/// A_{1..4,k} at one node by composite Gauss–Legendre in σ, split at σ = 0.
/// `phix` is φ(t,x), `xs` is x_k + a.
fn node_coefficients(p: &CarlemanParams, h: f64, phix: f64, xs: f64, gl: &GaussLegendre) -> Result<[f64; 4]> {
    let (mu, tau) = (p.mu, p.tau);
    let e_at = |s: f64| (mu * (2.0 * xs * s * h + s * s * h * h)).exp();
    let spread = tau * h * mu * phix * e_at(1.0).max(e_at(-1.0)) * 2.0 * (xs + h);
    let panels = ((spread / 4.0).ceil() as usize).max(1);
    let mut acc = [Sum::new(), Sum::new(), Sum::new(), Sum::new()];
    let w = 1.0 / panels as f64;
    for side in [-1.0, 1.0] {
        for pnl in 0..panels {
            let lo = pnl as f64 * w;
            for (u, wt) in gl.nodes.iter().zip(&gl.weights) {
                let s = side * (lo + 0.5 * w * (1.0 + u));
                let e = e_at(s);
                let phy = phix * e;
                let r = (-tau * phix * (e - 1.0)).exp();
                let d = 2.0 * (xs + s * h);
                let ww = 0.5 * w * wt;
                let tri = 1.0 - s.abs();
                acc[0].add(ww * 0.5 * phy * d * r);
                acc[1].add(ww * tri * phy * phy * d * d * r);
                acc[2].add(ww * tri * phy * d * d * r);
                acc[3].add(ww * tri * phy * 2.0 * r);
            }
        }
    }
    let out = [acc[0].value(), acc[1].value(), acc[2].value(), acc[3].value()];
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InadmissibleParameter(format!("weight ratio overflows at tau*h = {}", tau * h)));
    }
    Ok(out)
}

fn a0(p: &CarlemanParams, h: f64, a: &[f64; 4]) -> f64 {
    let (t, m) = (p.tau, p.mu);
    0.5 * h * h * (t * t * m * m * a[1] - t * m * m * a[2] - t * m * a[3])
}

/// All five coefficients at one node along `axis`.
pub fn coefficient_at(p: &CarlemanParams, h: f64, t: f64, x1: f64, x2: f64, axis: Axis, order: usize) -> Result<[f64; 5]> {
    let gl = GaussLegendre::new(order);
    let xk = if axis == Axis::X1 { x1 } else { x2 };
    let a = node_coefficients(p, h, p.phi(t, x1, x2), xk + p.a, &gl)?;
    Ok([a0(p, h, &a), a[0], a[1], a[2], a[3]])
}

/// f_{ℓ,k}, the h → 0 limits of A_{ℓ,k}.
pub fn limit_at(p: &CarlemanParams, t: f64, x1: f64, x2: f64, axis: Axis) -> [f64; 5] {
    let phi = p.phi(t, x1, x2);
    let d = p.psi_x(if axis == Axis::X1 { x1 } else { x2 });
    [0.0, phi * d, phi * phi * d * d, phi * d * d, 2.0 * phi]
}

/// A_{ℓ,k} on every node of Ω̄_h at every time of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub mesh: Mesh,
    pub grid: TimeGrid,
    pub order: usize,
    /// a[n][ℓ][k]
    a: Vec<[[NodeField; 2]; 5]>,
}

impl Coefficients {
    pub fn get(&self, l: usize, axis: Axis, n: usize) -> &NodeField {
        &self.a[n][l][axis.k() - 1]
    }

    /// A_ℓ = A_{ℓ,1} + A_{ℓ,2}
    pub fn sum(&self, l: usize, n: usize) -> NodeField {
        self.a[n][l][0].add(&self.a[n][l][1])
    }
}

/// Nodes used for the order-q versus order-2q check: a strided sub-grid that
/// always contains the last row and column.
fn check_nodes(s: usize) -> Vec<usize> {
    let stride = (s / 24).max(1);
    let mut v: Vec<usize> = (0..s).step_by(stride).collect();
    if *v.last().unwrap() != s - 1 {
        v.push(s - 1);
    }
    v
}

pub fn coefficients(p: &CarlemanParams, mesh: Mesh, grid: TimeGrid, order: usize) -> Result<Coefficients> {
    let h = mesh.h();
    p.check_admissible(h)?;
    let gl = GaussLegendre::new(order);
    let gl2 = GaussLegendre::new(2 * order);
    let s = mesh.side();
    let mut a = Vec::with_capacity(grid.len);
    let checks = check_nodes(s);
    for (n, t) in grid.times().into_iter().enumerate() {
        let mut f: [[NodeField; 2]; 5] = std::array::from_fn(|_| [NodeField::zeros(mesh), NodeField::zeros(mesh)]);
        for i in 0..s {
            for j in 0..s {
                let (x1, x2) = (mesh.x(i), mesh.x(j));
                let phix = p.phi(t, x1, x2);
                for (k, xk) in [x1, x2].into_iter().enumerate() {
                    let c = node_coefficients(p, h, phix, xk + p.a, &gl)?;
                    if n % 16 == 0 && checks.binary_search(&i).is_ok() && checks.binary_search(&j).is_ok() {
                        let c2 = node_coefficients(p, h, phix, xk + p.a, &gl2)?;
                        for (u, v) in c.iter().zip(&c2) {
                            let rel = (u - v).abs() / v.abs().max(f64::MIN_POSITIVE);
                            if rel > 1e-10 {
                                return Err(Error::QuadratureNonConvergence(rel));
                            }
                        }
                    }
                    f[0][k].set(i, j, a0(p, h, &c));
                    for l in 0..4 {
                        f[l + 1][k].set(i, j, c[l]);
                    }
                }
            }
        }
        a.push(f);
    }
    Ok(Coefficients { mesh, grid, order, a })
}

/// sup over nodes of Ω̄_h and the given times of |A_{ℓ,k} − f_{ℓ,k}|, indexed [ℓ][k].
pub fn prox_c2_sup(p: &CarlemanParams, mesh: Mesh, times: &[f64], order: usize) -> Result<[[f64; 2]; 5]> {
    let h = mesh.h();
    p.check_admissible(h)?;
    let gl = GaussLegendre::new(order);
    let s = mesh.side();
    let mut sup = [[0.0f64; 2]; 5];
    for &t in times {
        for i in 0..s {
            for j in 0..s {
                let (x1, x2) = (mesh.x(i), mesh.x(j));
                let phix = p.phi(t, x1, x2);
                for (k, xk) in [x1, x2].into_iter().enumerate() {
                    let c = node_coefficients(p, h, phix, xk + p.a, &gl)?;
                    let d = p.psi_x(xk);
                    let lim = [phix * d, phix * phix * d * d, phix * d * d, 2.0 * phix];
                    sup[0][k] = sup[0][k].max(a0(p, h, &c).abs());
                    for l in 0..4 {
                        sup[l + 1][k] = sup[l + 1][k].max((c[l] - lim[l]).abs());
                    }
                }
            }
        }
    }
    Ok(sup)
}

/// v, ∂_t v, ∂_tt v on a time grid, exact in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub mesh: Mesh,
    pub grid: TimeGrid,
    pub v: Vec<NodeField>,
    pub vt: Vec<NodeField>,
    pub vtt: Vec<NodeField>,
}

impl Jet {
    pub fn zeros(mesh: Mesh, grid: TimeGrid) -> Self {
        let z = vec![NodeField::zeros(mesh); grid.len];
        Self { mesh, grid, v: z.clone(), vt: z.clone(), vtt: z }
    }

    /// Separable jet Σ_m f_m(t) g_m(x), where `time` returns (f, f', f'') per mode.
    pub fn separable<F: Fn(f64) -> Vec<(f64, f64, f64)>>(mesh: Mesh, grid: TimeGrid, shapes: &[NodeField], time: F) -> Self {
        let mut j = Self::zeros(mesh, grid);
        for n in 0..grid.len {
            let prof = time(grid.time(n));
            for (g, (f, f1, f2)) in shapes.iter().zip(prof) {
                j.v[n].axpy(f, g);
                j.vt[n].axpy(f1, g);
                j.vtt[n].axpy(f2, g);
            }
        }
        j
    }

    pub fn scale(&self, c: f64) -> Self {
        let s = |v: &Vec<NodeField>| v.iter().map(|f| f.scale(c)).collect();
        Self { mesh: self.mesh, grid: self.grid, v: s(&self.v), vt: s(&self.vt), vtt: s(&self.vtt) }
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().chain(&self.vt).chain(&self.vtt).all(|f| f.max_abs() == 0.0)
    }

    /// Assumption-W shape: zero on ∂Ω_h and v(±T) = ∂_t v(±T) = 0.
    pub fn check_admissible(&self) -> Result<()> {
        let scale = self.v.iter().map(|f| f.max_abs()).fold(0.0, f64::max).max(1.0);
        let scale_t = self.vt.iter().map(|f| f.max_abs()).fold(0.0, f64::max).max(1.0);
        for (n, f) in self.v.iter().enumerate() {
            if !f.is_dirichlet_zero() {
                return Err(Error::Precondition(format!("v not zero on the boundary at step {n}")));
            }
        }
        let last = self.grid.len - 1;
        for n in [0, last] {
            if self.v[n].max_abs() > 1e-12 * scale || self.vt[n].max_abs() > 1e-12 * scale_t {
                return Err(Error::Precondition("v or its time derivative does not vanish at ±T".into()));
            }
        }
        Ok(())
    }

    /// □_h v = ∂_tt v − Δ_h v at interior nodes.
    pub fn box_h(&self, n: usize) -> NodeField {
        self.vtt[n].sub(&laplacian(&self.v[n])).with_zero_boundary()
    }
}

fn check_jet(p: &CarlemanParams, c: &Coefficients, v: &Jet) -> Result<()> {
    c.mesh.check_same(&v.mesh)?;
    if c.grid != v.grid {
        return Err(Error::InvalidParameter("coefficient and jet time grids differ".into()));
    }
    p.check_admissible(v.mesh.h())?;
    v.check_admissible()
}

/// e^{τφ}□_h(e^{−τφ}v) evaluated directly from weight ratios.
pub fn conjugate_route_a(p: &CarlemanParams, v: &Jet) -> Result<Vec<NodeField>> {
    v.check_admissible()?;
    let mesh = v.mesh;
    let h2 = mesh.h().powi(2);
    let (tau, mu) = (p.tau, p.mu);
    let n = mesh.n();
    let mut out = Vec::with_capacity(v.grid.len);
    for k in 0..v.grid.len {
        let t = v.grid.time(k);
        let phi = NodeField::from_fn(mesh, |x1, x2| p.phi(t, x1, x2));
        let pt = p.psi_t(t);
        let mut l = NodeField::zeros(mesh);
        for i in 1..=n {
            for j in 1..=n {
                let f = phi.get(i, j);
                let ft = mu * f * pt;
                let ftt = mu * f * p.psi_tt() + mu * mu * f * pt * pt;
                let time = v.vtt[k].get(i, j) - 2.0 * tau * ft * v.vt[k].get(i, j) + (tau * tau * ft * ft - tau * ftt) * v.v[k].get(i, j);
                let mut space = -4.0 * v.v[k].get(i, j);
                for (a, b) in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
                    space += (-tau * (phi.get(a, b) - f)).exp() * v.v[k].get(a, b);
                }
                l.set(i, j, time - space / h2);
            }
        }
        out.push(l);
    }
    Ok(out)
}

/// The expanded form of the conjugate operator in terms of the A_{ℓ,k}.
pub fn conjugate_route_b(p: &CarlemanParams, c: &Coefficients, v: &Jet) -> Result<Vec<NodeField>> {
    check_jet(p, c, v)?;
    let mesh = v.mesh;
    let (tau, mu) = (p.tau, p.mu);
    let n = mesh.n();
    let mut out = Vec::with_capacity(v.grid.len);
    for k in 0..v.grid.len {
        let t = v.grid.time(k);
        let pt = p.psi_t(t);
        let lap = [second_difference(&v.v[k], Axis::X1), second_difference(&v.v[k], Axis::X2)];
        let dc = [d_central(&v.v[k], Axis::X1), d_central(&v.v[k], Axis::X2)];
        let mut l = NodeField::zeros(mesh);
        for i in 1..=n {
            for j in 1..=n {
                let f = p.phi(t, mesh.x(i), mesh.x(j));
                let vv = v.v[k].get(i, j);
                let mut s = v.vtt[k].get(i, j) - 2.0 * tau * mu * f * pt * v.vt[k].get(i, j)
                    + tau * tau * mu * mu * f * f * pt * pt * vv
                    - tau * mu * mu * f * pt * pt * vv
                    - tau * mu * f * p.psi_tt() * vv;
                for ax in Axis::BOTH {
                    let q = ax.k() - 1;
                    let a = |l: usize| c.get(l, ax, k).get(i, j);
                    s -= (1.0 + a(0)) * lap[q].get(i, j);
                    s += 2.0 * tau * mu * a(1) * dc[q].get(i, j);
                    s -= (tau * tau * mu * mu * a(2) - tau * mu * mu * a(3) - tau * mu * a(4)) * vv;
                }
                l.set(i, j, s);
            }
        }
        out.push(l);
    }
    Ok(out)
}

/// ∫_{-T}^{T}∫_{Ω_h} f g by trapezoid in time.
pub fn qh_inner(grid: &TimeGrid, f: &[NodeField], g: &[NodeField]) -> f64 {
    let w = grid.weights();
    let mut s = Sum::new();
    for ((a, b), w) in f.iter().zip(g).zip(&w) {
        s.add(w * crate::grid::integrate_interior(&a.mul(b)));
    }
    s.value()
}

/// Relative L²(L²_h) distance between the two routes.
pub fn route_gap(p: &CarlemanParams, c: &Coefficients, v: &Jet) -> Result<f64> {
    let a = conjugate_route_a(p, v)?;
    let b = conjugate_route_b(p, c, v)?;
    let d: Vec<NodeField> = a.iter().zip(&b).map(|(x, y)| x.sub(y)).collect();
    let num = qh_inner(&v.grid, &d, &d).sqrt();
    let den = qh_inner(&v.grid, &a, &a).sqrt();
    Ok(if den == 0.0 { num } else { num / den })
}

/// Terms of L₁v = n1 + n2 + n3 and L₂v = m1 + m2 + m3, and Rv.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub l1_terms: [Vec<NodeField>; 3],
    pub l2_terms: [Vec<NodeField>; 3],
    pub r: Vec<NodeField>,
}

impl Split {
    fn total(terms: &[Vec<NodeField>; 3]) -> Vec<NodeField> {
        (0..terms[0].len()).map(|n| terms[0][n].add(&terms[1][n]).add(&terms[2][n])).collect()
    }
    pub fn l1(&self) -> Vec<NodeField> {
        Self::total(&self.l1_terms)
    }
    pub fn l2(&self) -> Vec<NodeField> {
        Self::total(&self.l2_terms)
    }
}

pub fn split(p: &CarlemanParams, c: &Coefficients, v: &Jet) -> Result<Split> {
    check_jet(p, c, v)?;
    let mesh = v.mesh;
    let (tau, mu, al) = (p.tau, p.mu, p.alpha1());
    let n = mesh.n();
    let len = v.grid.len;
    let mut l1: [Vec<NodeField>; 3] = std::array::from_fn(|_| Vec::with_capacity(len));
    let mut l2: [Vec<NodeField>; 3] = std::array::from_fn(|_| Vec::with_capacity(len));
    let mut r = Vec::with_capacity(len);
    for k in 0..len {
        let t = v.grid.time(k);
        let pt = p.psi_t(t);
        let ptt = p.psi_tt();
        let lap = [second_difference(&v.v[k], Axis::X1), second_difference(&v.v[k], Axis::X2)];
        let dc = [d_central(&v.v[k], Axis::X1), d_central(&v.v[k], Axis::X2)];
        let mut f: [NodeField; 7] = std::array::from_fn(|_| NodeField::zeros(mesh));
        for i in 1..=n {
            for j in 1..=n {
                let ph = p.phi(t, mesh.x(i), mesh.x(j));
                let vv = v.v[k].get(i, j);
                let a = |l: usize, ax: Axis| c.get(l, ax, k).get(i, j);
                let a2 = a(2, Axis::X1) + a(2, Axis::X2);
                let a3 = a(3, Axis::X1) + a(3, Axis::X2);
                let a4 = a(4, Axis::X1) + a(4, Axis::X2);
                let n2: f64 = -Axis::BOTH.iter().map(|&ax| (1.0 + a(0, ax)) * lap[ax.k() - 1].get(i, j)).sum::<f64>();
                let a1d: f64 = Axis::BOTH.iter().map(|&ax| a(1, ax) * dc[ax.k() - 1].get(i, j)).sum();
                f[0].set(i, j, v.vtt[k].get(i, j));
                f[1].set(i, j, n2);
                f[2].set(i, j, tau * tau * mu * mu * (ph * ph * pt * pt - a2) * vv);
                f[3].set(i, j, (al - 1.0) * tau * mu * (ph * ptt - a4) * vv);
                f[4].set(i, j, -tau * mu * mu * (ph * pt * pt - a3) * vv);
                f[5].set(i, j, -2.0 * tau * mu * (ph * pt * v.vt[k].get(i, j) - a1d));
                f[6].set(i, j, al * tau * mu * (ph * ptt - a4) * vv);
            }
        }
        let [f0, f1, f2, f3, f4, f5, f6] = f;
        l1[0].push(f0);
        l1[1].push(f1);
        l1[2].push(f2);
        l2[0].push(f3);
        l2[1].push(f4);
        l2[2].push(f5);
        r.push(f6);
    }
    Ok(Split { l1_terms: l1, l2_terms: l2, r })
}

/// Max relative residual of L₁v + L₂v − (L_h v + Rv), with L_h v from route B.
pub fn splitting_residual(p: &CarlemanParams, c: &Coefficients, v: &Jet) -> Result<f64> {
    let s = split(p, c, v)?;
    let lh = conjugate_route_b(p, c, v)?;
    let (l1, l2) = (s.l1(), s.l2());
    let mut worst: f64 = 0.0;
    for n in 0..lh.len() {
        let lhs = l1[n].add(&l2[n]);
        let rhs = lh[n].add(&s.r[n]);
        let scale = lhs.max_abs() + rhs.max_abs() + 1.0;
        worst = worst.max(lhs.sub(&rhs).max_abs() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossProducts {
    /// I_nm, n-th term of L₁v times m-th term of L₂v.
    pub i: [[f64; 3]; 3],
    pub sum: f64,
    /// ∫∫ L₁v L₂v computed directly.
    pub l1l2: f64,
    pub l1_sq: f64,
    pub l2_sq: f64,
    pub lh_sq: f64,
    pub r_sq: f64,
    pub i_v: f64,
    pub i_dv: f64,
    /// −τμΣ_k∫_{Σ⁺_k} g_k|∂⁻v|², with g_k = (1+A_{0,k})A_{1,k}.
    pub i_gamma_plus: f64,
    /// τμΣ_k∫_{Σ⁻_k} g_k|∂⁺v|².
    pub i_gamma_minus: f64,
    /// −2τμΣ_k∫_{Σ⁺_k} φ∂_kψ|∂⁻v|².
    pub i_gamma_bound: f64,
    pub i_tych: f64,
    pub remainder: f64,
}

impl CrossProducts {
    pub fn i_gamma(&self) -> f64 {
        self.i_gamma_plus + self.i_gamma_minus
    }
}

pub fn cross_product_terms(p: &CarlemanParams, c: &Coefficients, v: &Jet) -> Result<CrossProducts> {
    let s = split(p, c, v)?;
    let g = &v.grid;
    let mut i = [[0.0; 3]; 3];
    for (a, row) in i.iter_mut().enumerate() {
        for (b, e) in row.iter_mut().enumerate() {
            *e = qh_inner(g, &s.l1_terms[a], &s.l2_terms[b]);
        }
    }
    let sum = i.iter().flatten().copied().collect::<Sum>().value();
    let (l1, l2) = (s.l1(), s.l2());
    let lh = conjugate_route_b(p, c, v)?;
    let mesh = v.mesh;
    let h = mesh.h();
    let nn = mesh.n();
    let (tau, mu, al) = (p.tau, p.mu, p.alpha1());
    let w = g.weights();
    let lap_psi = 4.0;

    let mut iv = Sum::new();
    let mut idv = Sum::new();
    let mut gp = Sum::new();
    let mut gm = Sum::new();
    let mut gb = Sum::new();
    let mut ty = Sum::new();
    for n in 0..g.len {
        let t = g.time(n);
        let pt = p.psi_t(t);
        let ptt = p.psi_tt();
        let vn = &v.v[n];
        let vt = &v.vt[n];
        let h2w = w[n] * h * h;
        let dc = [d_central(vn, Axis::X1), d_central(vn, Axis::X2)];
        for a in 1..=nn {
            for b in 1..=nn {
                let (x1, x2) = (mesh.x(a), mesh.x(b));
                let ph = p.phi(t, x1, x2);
                let gx = [p.psi_x(x1), p.psi_x(x2)];
                let grad2 = gx[0] * gx[0] + gx[1] * gx[1];
                let x = pt * pt - grad2;
                let dd = 4.0 * grad2; // ∇ψ·∇|∇ψ|²
                let coef = tau.powi(3) * mu.powi(3) * ph.powi(3) * (al * x * (ptt - lap_psi) + 2.0 * ptt * grad2 + dd)
                    + 2.0 * tau.powi(3) * mu.powi(4) * ph.powi(3) * x * x;
                let val = vn.get(a, b);
                iv.add(h2w * coef * val * val);
                let dtv = vt.get(a, b);
                let gdot = dc[0].get(a, b) * gx[0] + dc[1].get(a, b) * gx[1];
                let mut e = 2.0 * tau * mu * mu * dtv * dtv * ph * pt * pt + 2.0 * tau * mu * mu * gdot * gdot * ph
                    - 4.0 * tau * mu * mu * dtv * pt * ph * gdot
                    + tau * mu * dtv * dtv * ph * (2.0 * ptt - al * (ptt - lap_psi));
                for k in 0..2 {
                    e -= 2.0 * tau * mu * mu * dc[k].get(a, b).powi(2) * ph * gx[k] * gx[k];
                }
                idv.add(h2w * e);
            }
        }
        // staggered parts of I_∂v, coefficients at the midpoint
        for ax in Axis::BOTH {
            let dp = d_plus(vn, ax);
            let (di, dj) = ax.step();
            for (a, b) in dp.indices() {
                let xm1 = 0.5 * (mesh.x(a) + mesh.x(a + di));
                let xm2 = 0.5 * (mesh.x(b) + mesh.x(b + dj));
                let ph = p.phi(t, xm1, xm2);
                let gk = p.psi_x(if ax == Axis::X1 { xm1 } else { xm2 });
                let d2 = dp.get(a, b).powi(2);
                let e = tau * mu * d2 * ph * (al * (ptt - lap_psi) + 2.0 * 2.0) + 2.0 * tau * mu * mu * d2 * ph * gk * gk;
                idv.add(h2w * e);
            }
        }
        // boundary terms
        for ax in Axis::BOTH {
            let (plus, minus) = match ax {
                Axis::X1 => (Edge::X1Plus, Edge::X1Minus),
                Axis::X2 => (Edge::X2Plus, Edge::X2Minus),
            };
            let gk = |i: usize, j: usize| (1.0 + c.get(0, ax, n).get(i, j)) * c.get(1, ax, n).get(i, j);
            for m in 1..=nn {
                let (bi, bj) = plus.node(&mesh, m);
                let (ai, aj) = plus.inner(&mesh, m);
                let dm = (vn.get(bi, bj) - vn.get(ai, aj)) / h;
                gp.add(-w[n] * h * tau * mu * gk(bi, bj) * dm * dm);
                let xk = if ax == Axis::X1 { mesh.x(bi) } else { mesh.x(bj) };
                gb.add(-2.0 * w[n] * h * tau * mu * p.phi(t, mesh.x(bi), mesh.x(bj)) * p.psi_x(xk) * dm * dm);
                let (bi, bj) = minus.node(&mesh, m);
                let (ai, aj) = minus.inner(&mesh, m);
                let dpl = (vn.get(ai, aj) - vn.get(bi, bj)) / h;
                gm.add(w[n] * h * tau * mu * gk(bi, bj) * dpl * dpl);
            }
        }
        // Tychonoff terms
        for ax in Axis::BOTH {
            let dpt = d_plus(vt, ax);
            let a1 = c.get(1, ax, n);
            let (di, dj) = ax.step();
            for (a, b) in dpt.indices() {
                let da1 = (a1.get(a + di, b + dj) - a1.get(a, b)) / h;
                ty.add(-0.5 * h2w * tau * mu * (h * dpt.get(a, b)).powi(2) * da1);
            }
        }
        let g12 = |i: usize, j: usize| (1.0 + c.get(0, Axis::X1, n).get(i, j)) * c.get(1, Axis::X2, n).get(i, j);
        let g21 = |i: usize, j: usize| (1.0 + c.get(0, Axis::X2, n).get(i, j)) * c.get(1, Axis::X1, n).get(i, j);
        let dpp = crate::diffops::d_plus_plus(vn);
        for (a, b) in dpp.indices() {
            let m1 = |i: usize, j: usize| 0.5 * (g12(i + 1, j) + g12(i, j));
            let m2 = |i: usize, j: usize| 0.5 * (g21(i, j + 1) + g21(i, j));
            let coef = (m1(a, b + 1) - m1(a, b)) / h + (m2(a + 1, b) - m2(a, b)) / h;
            ty.add(0.5 * h2w * tau * mu * (h * dpp.get(a, b)).powi(2) * coef);
        }
    }
    let i_v = iv.value();
    let i_dv = idv.value();
    let (i_gamma_plus, i_gamma_minus, i_tych) = (gp.value(), gm.value(), ty.value());
    let remainder = sum - (i_v + i_dv + i_gamma_plus + i_gamma_minus + i_tych);
    Ok(CrossProducts {
        i,
        sum,
        l1l2: qh_inner(g, &l1, &l2),
        l1_sq: qh_inner(g, &l1, &l1),
        l2_sq: qh_inner(g, &l2, &l2),
        lh_sq: qh_inner(g, &lh, &lh),
        r_sq: qh_inner(g, &s.r, &s.r),
        i_v,
        i_dv,
        i_gamma_plus,
        i_gamma_minus,
        i_gamma_bound: gb.value(),
        i_tych,
        remainder,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Boundary,
    Distributed,
    T0,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(Self::Boundary),
            "distributed" => Ok(Self::Distributed),
            "t0" => Ok(Self::T0),
            _ => Err(Error::InvalidParameter(format!("unknown variant {s}"))),
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Self::Boundary => "boundary",
            Self::Distributed => "distributed",
            Self::T0 => "t0",
        }
    }
}

/// Observation sets for the functionals.
#[derive(Debug, Clone)]
pub struct Masks {
    /// Boundary mask; only its part on Γ⁺_{h,k} enters.
    pub gamma0: SubsetMask,
    /// Interior mask with staggered companions.
    pub omega: SubsetMask,
}

impl Masks {
    /// Γ₀ = Γ₊ and ω the collar of width δ.
    pub fn gamma_plus(mesh: Mesh, delta: f64) -> Self {
        Self {
            gamma0: SubsetMask::boundary(mesh, &crate::grid::BoundarySet::gamma_plus()),
            omega: SubsetMask::interior(mesh, &crate::grid::Region::collar(delta)),
        }
    }
}

/// Named terms of one estimate. Every term carries the factor e^{−2τ·φmax}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Functionals {
    pub variant: Variant,
    pub lhs: Vec<(String, f64)>,
    pub rhs: Vec<(String, f64)>,
    pub lhs_total: f64,
    pub rhs_total: f64,
    pub ratio: f64,
}

impl Functionals {
    fn build(variant: Variant, lhs: Vec<(String, f64)>, rhs: Vec<(String, f64)>) -> Self {
        let lhs_total: f64 = lhs.iter().map(|x| x.1).sum();
        let rhs_total: f64 = rhs.iter().map(|x| x.1).sum();
        let ratio = ratio(lhs_total, rhs_total);
        Self { variant, lhs, rhs, lhs_total, rhs_total, ratio }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.lhs.iter().chain(&self.rhs).find(|x| x.0 == name).map(|x| x.1)
    }

    /// LHS over the RHS with one term removed.
    pub fn ratio_without(&self, name: &str) -> f64 {
        let r: f64 = self.rhs.iter().filter(|x| x.0 != name).map(|x| x.1).sum();
        ratio(self.lhs_total, r)
    }

    /// Name of the largest RHS term.
    pub fn dominant_rhs(&self) -> &str {
        self.rhs.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|x| x.0.as_str()).unwrap_or("")
    }
}

fn ratio(l: f64, r: f64) -> f64 {
    if l == 0.0 {
        0.0
    } else if r == 0.0 {
        f64::INFINITY
    } else {
        l / r
    }
}

pub fn carleman_functionals(p: &CarlemanParams, w: &Jet, variant: Variant, masks: &Masks) -> Result<Functionals> {
    let mesh = w.mesh;
    let h = mesh.h();
    p.check_admissible(h)?;
    w.check_admissible()?;
    mesh.check_same(masks.gamma0.mesh())?;
    mesh.check_same(masks.omega.mesh())?;
    if !masks.gamma0.is_boundary() {
        return Err(Error::NotBoundaryMask);
    }
    let zero = w.grid.zero_index();
    if variant == Variant::T0 {
        let z = zero.ok_or_else(|| Error::Precondition("t = 0 is not on the time grid".into()))?;
        if w.v[z].max_abs() > 1e-12 * w.v.iter().map(|f| f.max_abs()).fold(1.0, f64::max) {
            return Err(Error::Precondition("w(0) must vanish for the t0 variant".into()));
        }
    }
    let tau = p.tau;
    let phimax = p.phi_max();
    let tw = w.grid.weights();
    let n = mesh.n();
    let h2 = h * h;
    let mut t = [(); 10].map(|_| Sum::new());
    // 0 dt, 1 grad, 2 v, 3 box, 4 obs, 5 pen, 6 ω dt, 7 ω grad, 8 ω v, 9 dt(0)
    for k in 0..w.grid.len {
        let time = w.grid.time(k);
        let wt = |i: usize, j: usize| (2.0 * tau * (p.phi(time, mesh.x(i), mesh.x(j)) - phimax)).exp();
        let weight = NodeField::from_index_fn(mesh, wt);
        let bx = w.box_h(k);
        let (v, vt) = (&w.v[k], &w.vt[k]);
        let c = tw[k] * h2;
        for i in 1..=n {
            for j in 1..=n {
                let e = weight.get(i, j);
                let (a, b, d) = (vt.get(i, j).powi(2), v.get(i, j).powi(2), bx.get(i, j).powi(2));
                t[0].add(c * e * a);
                t[2].add(c * e * b);
                t[3].add(c * e * d);
                if masks.omega.contains_node(i, j) {
                    t[6].add(c * e * a);
                    t[8].add(c * e * b);
                }
                if Some(k) == zero {
                    t[9].add(h2 * e * a);
                }
            }
        }
        for ax in Axis::BOTH {
            let dp = d_plus(v, ax);
            let dpt = d_plus(vt, ax);
            for (i, j) in dp.indices() {
                let e = weight.get(i, j);
                let g2 = dp.get(i, j).powi(2);
                t[1].add(c * e * g2);
                t[5].add(c * e * dpt.get(i, j).powi(2));
                if masks.omega.contains_staggered(ax, i, j) {
                    t[7].add(c * e * g2);
                }
            }
        }
        for e in [Edge::X1Plus, Edge::X2Plus] {
            for m in 1..=n {
                if !masks.gamma0.contains_boundary(e, m) {
                    continue;
                }
                let (bi, bj) = e.node(&mesh, m);
                let (ai, aj) = e.inner(&mesh, m);
                let dm = (v.get(bi, bj) - v.get(ai, aj)) / h;
                t[4].add(tw[k] * h * weight.get(bi, bj) * dm * dm);
            }
        }
    }
    let tv: Vec<f64> = t.iter().map(|s| s.value()).collect();
    let mut lhs = vec![
        ("dt".to_string(), tau * tv[0]),
        ("grad".to_string(), tau * tv[1]),
        ("v".to_string(), tau.powi(3) * tv[2]),
    ];
    let mut rhs = vec![("box".to_string(), tv[3])];
    match variant {
        Variant::Boundary | Variant::T0 => rhs.push(("observation".to_string(), tau * tv[4])),
        Variant::Distributed => {
            rhs.push(("omega_dt".to_string(), tau * tv[6]));
            rhs.push(("omega_grad".to_string(), tau * tv[7]));
            rhs.push(("omega_v".to_string(), tau.powi(3) * tv[8]));
        }
    }
    rhs.push(("penalization".to_string(), tau * h2 * tv[5]));
    if variant == Variant::T0 {
        // the t = 0 estimate bounds this term alone
        lhs = vec![("dt_at_0".to_string(), tau.sqrt() * tv[9])];
    }
    Ok(Functionals::build(variant, lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleKind {
    /// χ(t)·Σ c_m cos(ω_m t + θ_m) sin(kπx₁) sin(lπx₂); seed 0 is χ(t) sin(πx₁) sin(πx₂).
    Smooth,
    /// χ(t)·sin(ωt)·g(x), vanishing at t = 0.
    Odd,
    /// χ(t)·cos(2t/h)·w_K with w_K the checkerboard-diagonal field.
    Kavian,
}

/// Time cutoff: 1 on |t| ≤ T/2, 0 with its first two derivatives at ±T.
pub fn time_cutoff(t: f64, t_final: f64) -> (f64, f64, f64) {
    plateau(t, 0.5 * t_final, t_final)
}

fn product(cut: (f64, f64, f64), f: (f64, f64, f64)) -> (f64, f64, f64) {
    (cut.0 * f.0, cut.1 * f.0 + cut.0 * f.1, cut.2 * f.0 + 2.0 * cut.1 * f.1 + cut.0 * f.2)
}

fn sine_mode(mesh: Mesh, k: usize, l: usize) -> NodeField {
    use std::f64::consts::PI;
    NodeField::from_fn(mesh, |x, y| (k as f64 * PI * x).sin() * (l as f64 * PI * y).sin()).with_zero_boundary()
}

pub fn sample_jet(p: &CarlemanParams, mesh: Mesh, grid: TimeGrid, kind: SampleKind, seed: u64) -> Jet {
    let tf = p.t_final;
    match kind {
        SampleKind::Kavian => {
            let h = mesh.h();
            let g = crate::wavesolve::kavian_field(mesh);
            let w = 2.0 / h;
            Jet::separable(mesh, grid, &[g], |t| {
                let c = (w * t).cos();
                let s = (w * t).sin();
                vec![product(time_cutoff(t, tf), (c, -w * s, -w * w * c))]
            })
        }
        SampleKind::Smooth if seed == 0 => {
            Jet::separable(mesh, grid, &[sine_mode(mesh, 1, 1)], |t| vec![time_cutoff(t, tf)])
        }
        SampleKind::Smooth | SampleKind::Odd => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes = if kind == SampleKind::Odd { 1 } else { 3 };
            let mut shapes = vec![];
            let mut prm = vec![];
            for _ in 0..modes {
                let k = rng.random_range(1..=3);
                let l = rng.random_range(1..=3);
                shapes.push(sine_mode(mesh, k, l).scale(rng.random_range(-1.0..1.0)));
                prm.push((rng.random_range(0.5..6.0), rng.random_range(0.0..std::f64::consts::TAU)));
            }
            let odd = kind == SampleKind::Odd;
            Jet::separable(mesh, grid, &shapes, move |t| {
                prm.iter()
                    .map(|&(om, th)| {
                        let th = if odd { -std::f64::consts::FRAC_PI_2 } else { th };
                        let (c, s) = ((om * t + th).cos(), (om * t + th).sin());
                        product(time_cutoff(t, tf), (c, -om * s, -om * om * c))
                    })
                    .collect()
            })
        }
    }
}

/// One row of a Carleman sweep: the worst LHS/RHS over the samples at one mesh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub tau: f64,
    pub tau_h: f64,
    pub variant: Variant,
    pub samples: usize,
    pub c_emp: f64,
    pub worst_seed: u64,
}

/// C_emp = max LHS/RHS over `samples` random jets for each N, at fixed τh.
/// The t0 variant uses odd-in-time samples.
pub fn carleman_sweep(base: &CarlemanParams, ns: &[usize], tau_h: f64, variant: Variant, samples: usize, seed: u64, omega_delta: f64) -> Result<Vec<SweepRow>> {
    let mut rows = vec![];
    for &n in ns {
        let mesh = Mesh::new(n)?;
        let p = base.with_tau(tau_h / mesh.h())?;
        p.check_admissible(mesh.h())?;
        let grid = TimeGrid::for_params(&p);
        let masks = Masks::gamma_plus(mesh, omega_delta);
        let kind = if variant == Variant::T0 { SampleKind::Odd } else { SampleKind::Smooth };
        let mut worst = (0.0f64, seed);
        for s in 0..samples as u64 {
            let w = sample_jet(&p, mesh, grid, kind, seed + s);
            let f = carleman_functionals(&p, &w, variant, &masks)?;
            if f.ratio > worst.0 {
                worst = (f.ratio, seed + s);
            }
        }
        rows.push(SweepRow { n, tau: p.tau, tau_h, variant, samples, c_emp: worst.0, worst_seed: worst.1 });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundarySet;

    fn params_for(n: usize, tau_h: f64) -> (CarlemanParams, Mesh) {
        let mesh = Mesh::new(n).unwrap();
        (CarlemanParams::gamma_preset(tau_h / mesh.h()), mesh)
    }

    #[test]
    fn preset_and_weight() {
        let p = CarlemanParams::gamma_preset(4.0);
        p.validate().unwrap();
        assert!((p.beta - 0.9475).abs() < 1e-4);
        assert!((p.psi(0.0, 0.0, 0.0) - (2.0 * p.a * p.a + p.c0)).abs() < 1e-15);
        assert!((p.psi(p.t_final, 0.0, 0.0) - 1.01).abs() < 1e-12);
        let eta = p.eta().unwrap();
        // sup over |t| >= T − η is at x = (1,1); inf at t = 0 is at x = 0
        let sup = p.psi(p.t_final - eta, 1.0, 1.0);
        assert!(sup <= p.psi(0.0, 0.0, 0.0) + 1e-12);
        assert!((p.alpha1() - (p.beta + 1.0) / (p.beta + 2.0)).abs() < 1e-15);
        let mut bad = p;
        bad.c0 = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn phi_monotone_in_psi() {
        let p = CarlemanParams::gamma_preset(2.0);
        let m = Mesh::new(6).unwrap();
        let wf = weight_fields(&p, m, TimeGrid::symmetric(p.t_final, 0.4));
        for (s, f) in wf.psi.iter().zip(&wf.phi) {
            let mut pairs: Vec<(f64, f64)> = s.values().iter().copied().zip(f.values().iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn coefficient_identities_and_small_tau_limit() {
        let p = CarlemanParams::gamma_preset(1e-9);
        let h = 0.05;
        let (x1, x2, t) = (0.4, 0.7, 0.3);
        let c = coefficient_at(&p, h, t, x1, x2, Axis::X1, 16).unwrap();
        // ratio ≡ 1: A1 = ½∫φ∂ψ dσ by a plain rule
        let gl = GaussLegendre::new(40);
        let direct = 0.5 * gl.composite(-1.0, 1.0, 2, |s| p.phi(t, x1 + s * h, x2) * p.psi_x(x1 + s * h));
        assert!((c[1] - direct).abs() < 1e-9 * direct);
        // exact identities at a finite tau
        let p = CarlemanParams::gamma_preset(3.0);
        let c = coefficient_at(&p, h, t, x1, x2, Axis::X1, 16).unwrap();
        let f = |x: f64| p.phi(t, x, x2);
        let rp = (-p.tau * (f(x1 + h) - f(x1))).exp();
        let rm = (-p.tau * (f(x1 - h) - f(x1))).exp();
        let a1 = (rm - rp) / (2.0 * p.tau * h * p.mu);
        assert!((c[1] - a1).abs() < 1e-11 * a1.abs());
        let b = (rp + rm - 2.0) / (h * h);
        let (tt, mu) = (p.tau, p.mu);
        let lhs = tt * tt * mu * mu * c[2] - tt * mu * mu * c[3] - tt * mu * c[4];
        assert!((lhs - b).abs() < 1e-10 * b.abs());
    }

    #[test]
    fn quadrature_self_convergence() {
        for tau_h in [0.05, 0.1, 0.2] {
            let (p, m) = params_for(10, tau_h);
            for t in [0.0, 0.8] {
                for (x1, x2) in [(0.0, 0.0), (1.0, 1.0), (0.5, 0.9)] {
                    for ax in Axis::BOTH {
                        let a = coefficient_at(&p, m.h(), t, x1, x2, ax, 16).unwrap();
                        let b = coefficient_at(&p, m.h(), t, x1, x2, ax, 32).unwrap();
                        for l in 1..5 {
                            assert!((a[l] - b[l]).abs() <= 1e-12 * b[l].abs(), "l={l} {} {}", a[l], b[l]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn inadmissible_tau() {
        let m = Mesh::new(10).unwrap();
        let p = CarlemanParams::gamma_preset(0.5 / m.h());
        let g = TimeGrid::symmetric(p.t_final, 0.1);
        let err = coefficients(&p, m, g, 16).unwrap_err();
        assert!(err.to_string().contains("inadmissible-parameter"));
        let w = Jet::zeros(m, g);
        assert!(carleman_functionals(&p, &w, Variant::Boundary, &Masks::gamma_plus(m, 0.2)).is_err());
    }

    #[test]
    fn routes_agree_and_split_is_exact() {
        let (p, m) = params_for(8, 0.1);
        let g = TimeGrid::symmetric(p.t_final, 0.2);
        let c = coefficients(&p, m, g, 16).unwrap();
        for seed in 1..4 {
            let v = sample_jet(&p, m, g, SampleKind::Smooth, seed);
            assert!(route_gap(&p, &c, &v).unwrap() < 1e-8);
            assert!(splitting_residual(&p, &c, &v).unwrap() < 1e-10);
        }
        let z = Jet::zeros(m, g);
        assert!(conjugate_route_a(&p, &z).unwrap().iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn tau_zero_limit_is_box() {
        let m = Mesh::new(6).unwrap();
        let p = CarlemanParams::gamma_preset(1e-12);
        let g = TimeGrid::symmetric(p.t_final, 0.1);
        let v = sample_jet(&p, m, g, SampleKind::Smooth, 2);
        let a = conjugate_route_a(&p, &v).unwrap();
        for (n, f) in a.iter().enumerate() {
            assert!(f.sub(&v.box_h(n)).max_abs() < 1e-8 * (1.0 + f.max_abs()));
        }
    }

    #[test]
    fn cross_products_regroup() {
        let (p, m) = params_for(8, 0.05);
        let g = TimeGrid::symmetric(p.t_final, 0.1);
        let c = coefficients(&p, m, g, 16).unwrap();
        let v = sample_jet(&p, m, g, SampleKind::Smooth, 5);
        let x = cross_product_terms(&p, &c, &v).unwrap();
        assert!((x.sum - x.l1l2).abs() <= 1e-9 * x.l1l2.abs().max(1.0));
        assert!(x.l1_sq + x.l2_sq + 2.0 * x.l1l2 <= (2.0 * x.lh_sq + 2.0 * x.r_sq) * (1.0 + 1e-12));
        assert!(x.i_gamma_plus <= 0.0 && x.i_gamma_minus >= 0.0 && x.i_gamma_bound <= 0.0);
        for th in [1e-3, 2e-4] {
            let (p, m) = params_for(8, th);
            let c = coefficients(&p, m, g, 16).unwrap();
            let v = sample_jet(&p, m, g, SampleKind::Smooth, 5);
            let x = cross_product_terms(&p, &c, &v).unwrap();
            // at small τh the grouped terms carry the cross product
            let scale = x.i_v.abs().max(x.i_dv.abs()).max(x.i_gamma().abs());
            assert!(x.remainder.abs() < 0.25 * scale, "{th}: {x:?}");
            assert!(x.i_gamma() >= x.i_gamma_bound);
        }
    }

    #[test]
    fn functionals_zero_and_kavian() {
        let (p, m) = params_for(10, 0.1);
        let g = TimeGrid::for_params(&p);
        let masks = Masks::gamma_plus(m, 0.2);
        let z = carleman_functionals(&p, &Jet::zeros(m, g), Variant::Boundary, &masks).unwrap();
        assert_eq!(z.ratio, 0.0);
        assert!(z.rhs.iter().all(|x| x.1 == 0.0));
        let km = Masks { gamma0: SubsetMask::boundary(m, &BoundarySet::sub_edge(Edge::X1Plus, 0.25, 0.75)), ..masks };
        let w = sample_jet(&p, m, g, SampleKind::Kavian, 0);
        let f = carleman_functionals(&p, &w, Variant::Boundary, &km).unwrap();
        assert_eq!(f.term("observation").unwrap(), 0.0);
        assert_eq!(f.dominant_rhs(), "penalization");
        assert!(f.lhs_total > 0.0 && f.ratio.is_finite());
    }

    #[test]
    fn t0_variant_needs_zero_at_origin() {
        let (p, m) = params_for(8, 0.1);
        let g = TimeGrid::for_params(&p);
        let masks = Masks::gamma_plus(m, 0.2);
        let w = sample_jet(&p, m, g, SampleKind::Odd, 3);
        let f = carleman_functionals(&p, &w, Variant::T0, &masks).unwrap();
        assert!(f.lhs_total > 0.0 && f.ratio.is_finite());
        let s = sample_jet(&p, m, g, SampleKind::Smooth, 0);
        assert!(carleman_functionals(&p, &s, Variant::T0, &masks).is_err());
    }

    #[test]
    fn remainder_operator_is_first_order_in_tau() {
        let m = Mesh::new(12).unwrap();
        let mut cs = vec![];
        for tau in [0.01, 0.02] {
            let p = CarlemanParams::gamma_preset(tau);
            let g = TimeGrid::symmetric(p.t_final, 0.2);
            let c = coefficients(&p, m, g, 16).unwrap();
            let v = sample_jet(&p, m, g, SampleKind::Smooth, 0);
            let s = split(&p, &c, &v).unwrap();
            let vn = qh_inner(&g, &v.v, &v.v).sqrt();
            cs.push(qh_inner(&g, &s.r, &s.r).sqrt() / (tau * vn));
        }
        assert!((cs[1] / cs[0] - 1.0).abs() < 0.05, "{cs:?}");
    }
}
