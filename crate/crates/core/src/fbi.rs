//! FBI kernel F(z) = (1/2π)∫e^{izξ}e^{−ξ^{2n}}dξ, its scaled version
//! F_λ(z) = λ^γ F(λ^γ z), the transform v_{a,λ}(s,x) = ∫F_λ(a+is−t)η(t)ζ(t,x)dt,
//! and the discrete logarithmic-stability experiment assembled from them.

use crate::carleman_elliptic::{build_elliptic_weight, elliptic_carleman_functionals, EllipticGeometry, EllipticWeight, SGrid};
use crate::carleman_hyperbolic::{Jet, TimeGrid};
use crate::error::{Error, Result};
use crate::grid::{norm, Axis, Edge, Mesh, NodeField, Space};
use crate::num::{plateau, smoothstep_d1, smoothstep_d2, GaussLegendre, Sum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gaussian-polynomial kernel of order n, scaled by λ.
#[derive(Debug, Clone)]
pub struct FbiKernel {
    pub n: u32,
    pub gamma: f64,
    pub lambda: f64,
    /// Truncation Ξ of the ξ-integral.
    pub xi_max: f64,
    /// Largest |Im| of the unscaled argument the truncation is valid for.
    pub strip: f64,
    pub order: usize,
    gl: GaussLegendre,
}

impl FbiKernel {
    pub fn new(n: u32, lambda: f64, strip: f64, order: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("kernel order n must be >= 1".into()));
        }
        if !(lambda > 0.0) || !(strip >= 0.0) || order == 0 {
            return Err(Error::InvalidParameter("lambda > 0, strip >= 0 and order >= 1 required".into()));
        }
        let p = 2 * n as i32;
        // smallest Ξ with Ξ^{2n} − strip·Ξ ≥ 42, so the tail is below e^{−42}
        let g = |x: f64| x.powi(p) - strip * x - 42.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self { n, gamma: 1.0 - 1.0 / (2.0 * n as f64), lambda, xi_max: hi, strip, order, gl: GaussLegendre::new(order) })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.n, lambda, self.strip, self.order)
    }

    /// 1/(1+α) < γ < 1 and 1/(2n−1) < α.
    pub fn admits_alpha(&self, alpha: f64) -> bool {
        1.0 / (2.0 * self.n as f64 - 1.0) < alpha && 1.0 / (1.0 + alpha) < self.gamma
    }

    pub fn scale(&self) -> f64 {
        self.lambda.powf(self.gamma)
    }

    fn integrate<G: Fn(f64) -> Complex64>(&self, z: Complex64, f: G) -> Complex64 {
        let xm = self.xi_max;
        let panels = ((xm * (z.re.abs() + z.im.abs()) / 4.0).ceil() as usize + 2).max(2);
        let w = xm / panels as f64;
        let mut re = Sum::new();
        let mut im = Sum::new();
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * w;
            for (x, wt) in self.gl.nodes.iter().zip(&self.gl.weights) {
                let xi = mid + 0.5 * w * x;
                let v = f(xi) * (0.5 * w * wt);
                re.add(v.re);
                im.add(v.im);
            }
        }
        Complex64::new(re.value(), im.value())
    }

    fn check_strip(&self, z: Complex64) -> Result<()> {
        if z.im.abs() > self.strip * (1.0 + 1e-12) {
            return Err(Error::StripExceeded { im: z.im, strip: self.strip });
        }
        Ok(())
    }

    /// Unscaled F(z), using evenness: F(z) = (1/π)∫₀^Ξ cos(zξ)e^{−ξ^{2n}}dξ.
    pub fn f(&self, z: Complex64) -> Result<Complex64> {
        self.check_strip(z)?;
        let p = 2 * self.n as i32;
        Ok(self.integrate(z, |xi| (z * xi).cos() * (-xi.powi(p)).exp()) / PI)
    }

    /// F'(z) = −(1/π)∫₀^Ξ ξ sin(zξ)e^{−ξ^{2n}}dξ.
    pub fn f_prime(&self, z: Complex64) -> Result<Complex64> {
        self.check_strip(z)?;
        let p = 2 * self.n as i32;
        Ok(-self.integrate(z, |xi| (z * xi).sin() * (xi * (-xi.powi(p)).exp())) / PI)
    }

    /// F_λ(z) = λ^γ F(λ^γ z).
    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        let l = self.scale();
        Ok(self.f(z * l)? * l)
    }

    /// F_λ'(z) = λ^{2γ} F'(λ^γ z).
    pub fn eval_prime(&self, z: Complex64) -> Result<Complex64> {
        let l = self.scale();
        Ok(self.f_prime(z * l)? * (l * l))
    }
}

/// Closed form for n = 1: F(z) = e^{−z²/4}/(2√π).
pub fn gaussian_closed_form(z: Complex64) -> Complex64 {
    (-z * z / 4.0).exp() / (2.0 * PI.sqrt())
}

/// Fitted constants of the growth and sector-decay bounds, and the violations found
/// when verifying them for F_λ on a finer, offset grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub n: u32,
    pub c0_big: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// (λ, growth violation, decay violation); ≤ 0 means the bound holds.
    pub checks: Vec<(f64, f64, f64)>,
    pub max_violation: f64,
}

/// Absolute floor below which kernel values are quadrature noise.
pub const FIT_FLOOR: f64 = 1e-14;

/// Fits (C₀, c₀, c₁) for fixed c₂ on the box |Re z| ≤ re_max, |Im z| ≤ im_max for F,
/// then checks the λ-scaled bounds for each λ at z = w/λ^γ, w on a finer offset grid.
pub fn kernel_decay_check(k: &FbiKernel, lambdas: &[f64], re_max: f64, im_max: f64, c2: f64) -> Result<DecayFit> {
    let inv_g = 1.0 / k.gamma;
    let fit_pts = grid_points(re_max, im_max, 48, 16, 0.0);
    let mut vals = Vec::with_capacity(fit_pts.len());
    for &z in &fit_pts {
        let f = k.f(z)?.norm();
        let fp = k.f_prime(z)?.norm();
        vals.push((z, f, fp));
    }
    let c0_big = 1.05 * vals.iter().filter(|v| v.0.im == 0.0).map(|v| v.1 + v.2).fold(0.0, f64::max);
    let mut c0 = 0.0f64;
    for &(z, f, fp) in &vals {
        if z.im != 0.0 {
            c0 = c0.max(((f + fp) / c0_big).ln() / z.im.abs().powf(inv_g));
        }
    }
    c0 *= 1.05;
    let mut c1 = f64::INFINITY;
    for &(z, f, _) in &vals {
        let r = z.norm();
        if r > 0.0 && z.im.abs() <= c2 * z.re.abs() && f > FIT_FLOOR {
            c1 = c1.min(-(f / c0_big).ln() / r.powf(inv_g));
        }
    }
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::FitInfeasible(format!("decay rate c1 = {c1}")));
    }
    c1 *= 0.95;
    let mut checks = vec![];
    let verify = grid_points(re_max, im_max, 97, 31, 0.37);
    for &lam in lambdas {
        let kl = k.with_lambda(lam)?;
        let l = kl.scale();
        let (mut vg, mut vd) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &w in &verify {
            let z = w / l;
            let f = kl.eval(z)?.norm();
            let fp = kl.eval_prime(z)?.norm();
            let growth = c0_big * l * l * (c0 * lam * z.im.abs().powf(inv_g)).exp();
            vg = vg.max(f + fp - growth);
            if z.im.abs() <= c2 * z.re.abs() {
                let decay = c0_big * l * (-c1 * lam * z.norm().powf(inv_g)).exp();
                vd = vd.max(f - decay);
            }
        }
        checks.push((lam, vg - FIT_FLOOR, vd - FIT_FLOOR));
    }
    let max_violation = checks.iter().map(|c| c.1.max(c.2)).fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit { n: k.n, c0_big, c0, c1, c2, checks, max_violation })
}

fn grid_points(re_max: f64, im_max: f64, nr: usize, ni: usize, offset: f64) -> Vec<Complex64> {
    let mut v = vec![];
    for a in 0..=nr {
        let x = -re_max + 2.0 * re_max * ((a as f64 + offset) / nr as f64).min(1.0);
        for b in 0..=ni {
            let y = -im_max + 2.0 * im_max * ((b as f64 + offset) / ni as f64).min(1.0);
            v.push(Complex64::new(x, y));
        }
        v.push(Complex64::new(x, 0.0));
    }
    v
}

/// sup over |ξ| ≤ 4λ^γ of |∫F_λ(t)e^{−iξt}dt − exp(−(ξ/λ^γ)^{2n})|.
pub fn fourier_identity_error(k: &FbiKernel) -> Result<f64> {
    let l = k.scale();
    // |F(u)| < 1e−17 beyond u_max for the orders in use
    let u_max = 12.0 + 8.0 * k.n as f64;
    let t_max = u_max / l;
    let gl = GaussLegendre::new(24);
    let panels = (4.0 * u_max) as usize;
    let w = t_max / panels as f64;
    let mut samples = vec![];
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * w;
        for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
            let t = mid + 0.5 * w * x;
            samples.push((t, 0.5 * w * wt, k.eval(Complex64::new(t, 0.0))?.re));
        }
    }
    let mut worst = 0.0f64;
    for i in 0..=80 {
        let xi = -4.0 * l + 8.0 * l * i as f64 / 80.0;
        // F_λ is real and even on the real axis
        let got = 2.0 * samples.iter().map(|&(t, w, f)| w * f * (xi * t).cos()).collect::<Sum>().value();
        let want = (-(xi / l).powi(2 * k.n as i32)).exp();
        worst = worst.max((got - want).abs());
    }
    Ok(worst)
}

/// η(t), χ_S(s), χ_R(x) and bounds on their second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSet {
    pub t_final: f64,
    pub r_big: f64,
    pub eta_d2_max: f64,
    pub chi_s_d2_max: f64,
    pub chi_r_d2_max: f64,
}

/// max|smoothstep''| on [0,1], attained at s = 1/2 ± √3/6.
fn smoothstep_d2_max() -> f64 {
    smoothstep_d2(0.5 - 3f64.sqrt() / 6.0).abs()
}

impl CutoffSet {
    pub fn new(t_final: f64, r_big: f64) -> Self {
        let m = smoothstep_d2_max();
        Self {
            t_final,
            r_big,
            eta_d2_max: m / (0.25 * t_final).powi(2),
            chi_s_d2_max: m,
            chi_r_d2_max: m / (0.5 * r_big).powi(2),
        }
    }
    /// 1 on |t| ≤ T/2, 0 on |t| ≥ 3T/4.
    pub fn eta(&self, t: f64) -> (f64, f64, f64) {
        plateau(t, 0.5 * self.t_final, 0.75 * self.t_final)
    }
    /// 1 on |s| ≤ 2, 0 on |s| ≥ 3.
    pub fn chi_s(&self, s: f64) -> f64 {
        plateau(s, 2.0, 3.0).0
    }
    /// 1 on d ≤ R/2, 0 on d ≥ R, as a function of d = d(x, ω).
    pub fn chi_r(&self, d: f64) -> f64 {
        plateau(d, 0.5 * self.r_big, self.r_big).0
    }
    pub fn slope_max(&self) -> f64 {
        smoothstep_d1(0.5) / (0.25 * self.t_final)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub re: NodeField,
    pub im: NodeField,
}

impl ComplexField {
    pub fn zeros(mesh: Mesh) -> Self {
        Self { re: NodeField::zeros(mesh), im: NodeField::zeros(mesh) }
    }
    pub fn max_abs(&self) -> f64 {
        self.re.values().iter().zip(self.im.values()).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re.get(i, j), self.im.get(i, j))
    }
}

/// v_{a,λ}(s,·) for each s, by the trapezoid rule over supp η on the grid of ζ.
pub fn fbi_transform(k: &FbiKernel, a: f64, zeta: &[NodeField], grid: &TimeGrid, cut: &CutoffSet, s_values: &[f64]) -> Result<Vec<ComplexField>> {
    if zeta.len() != grid.len || zeta.is_empty() {
        return Err(Error::InvalidParameter("zeta does not match its time grid".into()));
    }
    let tf = cut.t_final;
    if a.abs() > 0.25 * tf + 1e-12 {
        return Err(Error::Domain(format!("a = {a} outside [−T/4, T/4]")));
    }
    if (grid.t0 + tf).abs() > 1e-9 || (grid.time(grid.len - 1) - tf).abs() > 1e-9 {
        return Err(Error::Domain("zeta must be given on [−T, T]".into()));
    }
    let mesh = *zeta[0].mesh();
    let w = grid.weights();
    let active: Vec<usize> = (0..grid.len).filter(|&n| cut.eta(grid.time(n)).0 != 0.0).collect();
    let mut out = Vec::with_capacity(s_values.len());
    for &s in s_values {
        if s.abs() > 3.0 + 1e-12 {
            return Err(Error::Domain(format!("s = {s} outside [−3, 3]")));
        }
        let mut re = vec![Sum::new(); mesh.len()];
        let mut im = vec![Sum::new(); mesh.len()];
        for &n in &active {
            let t = grid.time(n);
            let c = k.eval(Complex64::new(a - t, s))? * (w[n] * cut.eta(t).0);
            for (idx, z) in zeta[n].values().iter().enumerate() {
                if *z != 0.0 {
                    re[idx].add(c.re * z);
                    im[idx].add(c.im * z);
                }
            }
        }
        let collect = |v: Vec<Sum>| NodeField::from_values(mesh, v.iter().map(|s| s.value()).collect());
        out.push(ComplexField { re: collect(re)?, im: collect(im)? });
    }
    Ok(out)
}

/// max |D_s v − i D_a v| / max |D_a v| on a (a,s) stencil with fourth-order central
/// differences of step `d`, at all nodes.
pub fn cauchy_riemann_residual(k: &FbiKernel, a: f64, s: f64, d: f64, zeta: &[NodeField], grid: &TimeGrid, cut: &CutoffSet) -> Result<f64> {
    let st = [-2.0, -1.0, 1.0, 2.0];
    let c = [1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
    let along_a: Vec<ComplexField> = st.iter().map(|o| fbi_transform(k, a + o * d, zeta, grid, cut, &[s]).map(|mut v| v.remove(0))).collect::<Result<_>>()?;
    let along_s: Vec<f64> = st.iter().map(|o| s + o * d).collect();
    let along_s = fbi_transform(k, a, zeta, grid, cut, &along_s)?;
    let mesh = *zeta[0].mesh();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for i in 0..mesh.side() {
        for j in 0..mesh.side() {
            let da: Complex64 = (0..4).map(|q| along_a[q].get(i, j) * c[q]).sum::<Complex64>() / d;
            let ds: Complex64 = (0..4).map(|q| along_s[q].get(i, j) * c[q]).sum::<Complex64>() / d;
            num = num.max((ds - Complex64::i() * da).norm());
            den = den.max(da.norm());
        }
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// Source of ζ_h for the log-stability experiment. Both choices solve the
/// semi-discrete wave equation with q_h = 0 and f_h = 0 exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ZetaSpec {
    /// Σ (a cos(ω t) + b sin(ω t)) sin(kπx₁) sin(lπx₂), ω² the discrete eigenvalue.
    Modes(Vec<(usize, usize, f64, f64)>),
    /// cos(2t/h) w_K.
    Kavian,
}

pub fn zeta_jet(spec: &ZetaSpec, mesh: Mesh, grid: TimeGrid) -> Jet {
    let h = mesh.h();
    match spec {
        ZetaSpec::Kavian => {
            let om = 2.0 / h;
            Jet::separable(mesh, grid, &[crate::wavesolve::kavian_field(mesh)], move |t| {
                vec![((om * t).cos(), -om * (om * t).sin(), -om * om * (om * t).cos())]
            })
        }
        ZetaSpec::Modes(modes) => {
            let shapes: Vec<NodeField> = modes
                .iter()
                .map(|&(k, l, _, _)| NodeField::from_fn(mesh, |x, y| (k as f64 * PI * x).sin() * (l as f64 * PI * y).sin()).with_zero_boundary())
                .collect();
            let coeffs: Vec<(f64, f64, f64)> = modes
                .iter()
                .map(|&(k, l, a, b)| {
                    let lam = 4.0 / (h * h) * ((k as f64 * PI * h / 2.0).sin().powi(2) + (l as f64 * PI * h / 2.0).sin().powi(2));
                    (lam.sqrt(), a, b)
                })
                .collect();
            Jet::separable(mesh, grid, &shapes, move |t| {
                coeffs
                    .iter()
                    .map(|&(om, a, b)| {
                        let (c, s) = ((om * t).cos(), (om * t).sin());
                        (a * c + b * s, om * (-a * s + b * c), -om * om * (a * c + b * s))
                    })
                    .collect()
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStabilityConfig {
    pub n: usize,
    pub t_final: f64,
    pub kernel_n: u32,
    pub alpha: f64,
    pub eps_tau_h: f64,
    pub strip: f64,
    pub geometry: EllipticGeometry,
    pub zeta: ZetaSpec,
    /// Time step of the sampled ζ_h.
    pub dt: f64,
    /// Factors applied to the measurement norm in the scaling sweep.
    pub measurement_scales: Vec<f64>,
}

impl Default for LogStabilityConfig {
    fn default() -> Self {
        Self {
            n: 10,
            t_final: 16.0,
            kernel_n: 2,
            alpha: 0.5,
            eps_tau_h: 0.2,
            strip: 8.0,
            geometry: EllipticGeometry::default(),
            zeta: ZetaSpec::Modes(vec![(1, 1, 1.0, 0.0), (2, 1, 0.5, 0.3)]),
            dt: 0.02,
            measurement_scales: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaChoice {
    /// "lambda_star", "optimal" or "h_cap"
    pub case: &'static str,
    pub lambda: f64,
    pub lambda_0: f64,
    pub lambda_star: f64,
    pub lambda_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogStabilityReport {
    pub n: usize,
    pub h: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub kernel: DecayFit,
    pub weight: EllipticWeight,
    pub c3: f64,
    pub c6: f64,
    pub eps_star: f64,
    /// 𝒟 = ‖ζ_h‖_{H²_h((−T,T)×Ω_h)}
    pub d_norm: f64,
    pub measurement: f64,
    pub rho: f64,
    pub choice: LambdaChoice,
    /// ‖ζ_h‖_{H¹_h((−T/8,T/8)×ω_h)}
    pub lhs: f64,
    /// 𝒟·log(2+ρ)^{−1/(1+α)}
    pub term_log: f64,
    /// 𝒟·h^{1/(1+α)}
    pub term_h: f64,
    pub ratio: f64,
    /// λ^{−γ}𝒟 + e^{c₆λ/2}·measurement at the chosen λ.
    pub step5_bound: f64,
    pub elliptic_tau: f64,
    pub elliptic_lambda: f64,
    pub elliptic_ratio: f64,
    /// (scale, bound) with the measurement multiplied by scale.
    pub measurement_sweep: Vec<(f64, f64)>,
    /// (‖(ζ⁰,ζ¹)‖_{H¹₀×L²}, Λ_h, h^{1/(1+α)}‖(ζ⁰,ζ¹)‖_{H²∩H¹₀×H¹₀})
    pub weak_observability: (f64, f64, f64),
}

fn grad_sq_masked<M: Fn(usize, usize) -> bool>(f: &NodeField, inside: M) -> f64 {
    let h = f.mesh().h();
    let mut s = Sum::new();
    for ax in Axis::BOTH {
        let d = crate::diffops::d_plus(f, ax);
        let (di, dj) = ax.step();
        for (i, j) in d.indices() {
            if inside(i, j) && inside(i + di, j + dj) {
                s.add(h * h * d.get(i, j).powi(2));
            }
        }
    }
    s.value()
}

fn l2_masked<M: Fn(usize, usize) -> bool>(f: &NodeField, inside: M) -> f64 {
    let m = f.mesh();
    let h = m.h();
    let mut s = Sum::new();
    for i in 1..=m.n() {
        for j in 1..=m.n() {
            if inside(i, j) {
                s.add(h * h * f.get(i, j).powi(2));
            }
        }
    }
    s.value()
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn log_stability_experiment(cfg: &LogStabilityConfig) -> Result<LogStabilityReport> {
    let mesh = Mesh::new(cfg.n)?;
    let h = mesh.h();
    let tf = cfg.t_final;
    let kernel = FbiKernel::new(cfg.kernel_n, 1.0, cfg.strip, 16).map_err(|e| e.in_stage("kernel"))?;
    if !kernel.admits_alpha(cfg.alpha) {
        return Err(Error::InvalidParameter(format!("kernel order n = {} does not cover alpha = {}", cfg.kernel_n, cfg.alpha)).in_stage("kernel"));
    }
    let fit = kernel_decay_check(&kernel, &[1.0, 4.0], 8.0, 3.0, 0.5).map_err(|e| e.in_stage("kernel-fit"))?;
    let weight = build_elliptic_weight(cfg.geometry, h / 4.0).map_err(|e| e.in_stage("weight"))?;
    let gamma = kernel.gamma;
    let gap = weight.ordering_gap();
    let c3 = 2.0 * 3f64.powf(1.0 / gamma) * fit.c0;
    let c6 = c3 * (1.0 + 2.0 * (weight.sup_all - weight.inf_omega) / gap) + 0.1;
    let eps_star = cfg.eps_tau_h * gap / c3;

    let grid = TimeGrid::symmetric(tf, cfg.dt.min(h / 8.0).min(tf));
    let z = zeta_jet(&cfg.zeta, mesh, grid);
    let tw = grid.weights();
    // 𝒟, measurement and LHS
    let (mut d2, mut meas2, mut lhs2) = (Sum::new(), Sum::new(), Sum::new());
    let (a, b) = cfg.geometry.gamma0;
    let in_om = |i: usize, j: usize| weight.in_omega(mesh.x(i), mesh.x(j));
    for n in 0..grid.len {
        let t = grid.time(n);
        let (v, vt, vtt) = (&z.v[n], &z.vt[n], &z.vtt[n]);
        let val = sq(norm(v, Space::H2)?) + sq(norm(vt, Space::H1)?) + sq(norm(vtt, Space::Lp(2.0))?);
        d2.add(tw[n] * val);
        for m in 1..=mesh.n() {
            let x2 = mesh.x(m);
            if x2 > a && x2 < b {
                let (bi, bj) = Edge::X1Plus.node(&mesh, m);
                let (ai, aj) = Edge::X1Plus.inner(&mesh, m);
                meas2.add(tw[n] * h * sq((v.get(bi, bj) - v.get(ai, aj)) / h));
            }
        }
        if t.abs() <= tf / 8.0 + 1e-12 {
            // trapezoid restricted to [−T/8, T/8]: half weight at the cut ends
            let wt = if (t.abs() - tf / 8.0).abs() < 0.5 * grid.dt { 0.5 * grid.dt } else { grid.dt };
            lhs2.add(wt * (l2_masked(v, in_om) + l2_masked(vt, in_om) + grad_sq_masked(v, in_om)));
        }
    }
    let d_norm = d2.value().sqrt();
    let measurement = meas2.value().sqrt();
    let lhs = lhs2.value().sqrt();
    let rho = if measurement == 0.0 { f64::INFINITY } else { d_norm / measurement };

    let choose = |rho: f64| {
        let lambda_star = gap / c3;
        let lambda_cap = eps_star / h;
        let lambda_0 = (2.0 + rho).ln() / c6;
        let (case, lambda) = if lambda_0 <= lambda_star {
            ("lambda_star", lambda_star)
        } else if lambda_0 >= lambda_cap {
            ("h_cap", lambda_cap)
        } else {
            ("optimal", lambda_0)
        };
        LambdaChoice { case, lambda, lambda_0, lambda_star, lambda_cap }
    };
    let choice = choose(rho);
    let expo = 1.0 / (1.0 + cfg.alpha);
    let bound = |rho: f64| d_norm * (2.0 + rho).ln().powf(-expo) + d_norm * h.powf(expo);
    let term_log = if rho.is_infinite() { 0.0 } else { d_norm * (2.0 + rho).ln().powf(-expo) };
    let term_h = d_norm * h.powf(expo);
    let total = term_log + term_h;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / total };
    let step5_bound = d_norm * choice.lambda.powf(-gamma) + (c6 * choice.lambda / 2.0).exp() * measurement;
    let measurement_sweep = cfg
        .measurement_scales
        .iter()
        .map(|&s| {
            let r = if measurement * s == 0.0 { f64::INFINITY } else { d_norm / (measurement * s) };
            (s, if r.is_infinite() { term_h } else { bound(r) })
        })
        .collect();

    // FBI transform at a = 0 and the elliptic Carleman functional of χ_S χ_R v.
    let lambda_e = choice.lambda.max(1.0);
    let tau_e = (c3 * lambda_e / gap).min(cfg.eps_tau_h / h).max(1.0_f64.min(cfg.eps_tau_h / h));
    let kl = kernel.with_lambda(lambda_e).map_err(|e| e.in_stage("fbi-transform"))?;
    let sg = SGrid::with_step(h);
    let svals: Vec<f64> = (0..sg.len).map(|k| sg.s(k)).collect();
    let cut = CutoffSet::new(tf, cfg.geometry.r_big);
    let v = fbi_transform(&kl, 0.0, &z.v, &grid, &cut, &svals).map_err(|e| e.in_stage("fbi-transform"))?;
    let chi_r = NodeField::from_fn(mesh, |x1, x2| cut.chi_r(weight.dist_omega(x1, x2)));
    let part = |f: &dyn Fn(&ComplexField) -> &NodeField| -> Vec<NodeField> {
        v.iter().zip(&svals).map(|(c, &s)| f(c).mul(&chi_r).scale(cut.chi_s(s)).with_zero_boundary()).collect()
    };
    let q = NodeField::zeros(mesh);
    let fr = elliptic_carleman_functionals(&weight, &part(&|c| &c.re), &q, sg, tau_e, cfg.eps_tau_h).map_err(|e| e.in_stage("elliptic-carleman"))?;
    let fi = elliptic_carleman_functionals(&weight, &part(&|c| &c.im), &q, sg, tau_e, cfg.eps_tau_h).map_err(|e| e.in_stage("elliptic-carleman"))?;
    let el = fr.lhs_v + fr.lhs_ds + fr.lhs_grad + fi.lhs_v + fi.lhs_ds + fi.lhs_grad;
    let er = fr.rhs_source + fr.rhs_obs + fi.rhs_source + fi.rhs_obs;
    let elliptic_ratio = if el == 0.0 { 0.0 } else { el / er };

    let zero = grid.zero_index().ok_or_else(|| Error::Precondition("t = 0 not on the grid".into()))?;
    let (z0, z1) = (&z.v[zero], &z.vt[zero]);
    let low = (sq(norm(z0, Space::H10)?) + sq(norm(z1, Space::Lp(2.0))?)).sqrt();
    let high = (sq(norm(z0, Space::H2)?) + sq(norm(z1, Space::H10)?)).sqrt();
    let lam_h = if low == 0.0 { 0.0 } else { high / low };

    Ok(LogStabilityReport {
        n: cfg.n,
        h,
        gamma,
        alpha: cfg.alpha,
        kernel: fit,
        weight,
        c3,
        c6,
        eps_star,
        d_norm,
        measurement,
        rho,
        choice,
        lhs,
        term_log,
        term_h,
        ratio,
        step5_bound,
        elliptic_tau: tau_e,
        elliptic_lambda: lambda_e,
        elliptic_ratio,
        measurement_sweep,
        weak_observability: (low, lam_h, h.powf(expo) * high),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_case_matches_closed_form() {
        let k = FbiKernel::new(1, 1.0, 1.0, 16).unwrap();
        let mut worst = 0.0f64;
        for a in 0..=30 {
            for b in 0..=10 {
                let z = Complex64::new(-3.0 + 0.2 * a as f64, -1.0 + 0.2 * b as f64);
                let e = gaussian_closed_form(z);
                worst = worst.max((k.f(z).unwrap() - e).norm() / e.norm());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        let f0 = k.f(Complex64::new(0.0, 0.0)).unwrap();
        assert!((f0.re - 0.282_094_791_773_878_1).abs() < 1e-12 && f0.im.abs() < 1e-15);
    }

    #[test]
    fn kernel_is_even_and_strip_enforced() {
        for n in 1..=3 {
            let k = FbiKernel::new(n, 1.0, 2.0, 16).unwrap();
            for z in [Complex64::new(0.7, 0.3), Complex64::new(-2.5, 1.9), Complex64::new(4.0, -0.5)] {
                assert!((k.f(z).unwrap() - k.f(-z).unwrap()).norm() < 1e-12);
            }
            assert!((-(k.xi_max.powi(2 * n as i32))).exp() < 1e-18);
            assert!(matches!(k.f(Complex64::new(0.0, 2.5)), Err(Error::StripExceeded { .. })));
        }
        assert!(FbiKernel::new(2, 1.0, 1.0, 16).unwrap().admits_alpha(0.5));
        assert!(!FbiKernel::new(1, 1.0, 1.0, 16).unwrap().admits_alpha(0.5));
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let k = FbiKernel::new(2, 4.0, 3.0, 16).unwrap();
        let z = Complex64::new(0.3, 0.2);
        let d = 1e-5;
        let fd = (k.eval(z + d).unwrap() - k.eval(z - d).unwrap()) / (2.0 * d);
        let an = k.eval_prime(z).unwrap();
        assert!((fd - an).norm() < 1e-6 * an.norm());
    }

    #[test]
    fn gaussian_decay_on_real_axis() {
        let k = FbiKernel::new(1, 1.0, 3.0, 16).unwrap();
        let fit = kernel_decay_check(&k, &[1.0], 8.0, 3.0, 0.5).unwrap();
        // |F(x)| = e^{−x²/4}/(2√π) and x² = |x|^{1/γ}; the sector costs a little
        assert!(fit.c1 > 0.1 && fit.c1 < 0.25 * 1.01, "{}", fit.c1);
    }

    #[test]
    fn decay_fit_verifies() {
        for n in 1..=3 {
            let k = FbiKernel::new(n, 1.0, 3.0, 16).unwrap();
            let fit = kernel_decay_check(&k, &[1.0, 4.0, 16.0], 8.0, 3.0, 0.5).unwrap();
            assert!(fit.max_violation <= 0.0, "n={n}: {fit:?}");
        }
    }

    #[test]
    fn fourier_identity() {
        for (n, lam) in [(1, 1.0), (2, 4.0), (3, 2.0)] {
            let k = FbiKernel::new(n, lam, 0.0, 16).unwrap();
            assert!(fourier_identity_error(&k).unwrap() < 1e-6);
        }
    }

    #[test]
    fn cutoffs() {
        let c = CutoffSet::new(16.0, 0.1);
        assert_eq!(c.eta(7.9).0, 1.0);
        assert_eq!(c.eta(12.0).0, 0.0);
        assert_eq!(c.chi_s(2.0), 1.0);
        assert_eq!(c.chi_s(3.0), 0.0);
        assert_eq!(c.chi_r(0.05), 1.0);
        assert_eq!(c.chi_r(0.1), 0.0);
        let d = 1e-3;
        for i in 0..400 {
            let t = 7.5 + i as f64 * 0.01;
            let d2 = (c.eta(t + d).0 - 2.0 * c.eta(t).0 + c.eta(t - d).0) / (d * d);
            assert!(d2.abs() <= c.eta_d2_max * 1.001);
        }
    }

    fn constant_series(mesh: Mesh, t: f64, dt: f64) -> (Vec<NodeField>, TimeGrid, NodeField) {
        let g = NodeField::from_fn(mesh, |x, y| x * (1.0 - x) * y).with_zero_boundary();
        let grid = TimeGrid::symmetric(t, dt);
        (vec![g.clone(); grid.len], grid, g)
    }

    #[test]
    fn transform_zero_linear_and_approximate_identity() {
        let mesh = Mesh::new(4).unwrap();
        let (zeta, grid, g) = constant_series(mesh, 16.0, 0.01);
        let cut = CutoffSet::new(16.0, 0.1);
        let k = FbiKernel::new(1, 64.0, 30.0, 16).unwrap();
        let zero = vec![NodeField::zeros(mesh); grid.len];
        assert_eq!(fbi_transform(&k, 0.0, &zero, &grid, &cut, &[0.0]).unwrap()[0].max_abs(), 0.0);
        let v = fbi_transform(&k, 0.0, &zeta, &grid, &cut, &[0.0]).unwrap().remove(0);
        assert!(v.re.sub(&g).max_abs() < 0.03 * g.max_abs());
        let twice: Vec<NodeField> = zeta.iter().map(|f| f.scale(2.0)).collect();
        let v2 = fbi_transform(&k, 1.0, &twice, &grid, &cut, &[0.5]).unwrap().remove(0);
        let v1 = fbi_transform(&k, 1.0, &zeta, &grid, &cut, &[0.5]).unwrap().remove(0);
        assert!(v2.re.sub(&v1.re.scale(2.0)).max_abs() < 1e-12 * (1.0 + v2.max_abs()));
        assert!(fbi_transform(&k, 5.0, &zeta, &grid, &cut, &[0.0]).is_err());
        assert!(fbi_transform(&k, 0.0, &zeta, &grid, &cut, &[3.5]).is_err());
    }

    #[test]
    fn transform_is_holomorphic() {
        let mesh = Mesh::new(4).unwrap();
        let grid = TimeGrid::symmetric(16.0, 0.02);
        let z = zeta_jet(&ZetaSpec::Modes(vec![(1, 1, 1.0, 0.5)]), mesh, grid);
        let cut = CutoffSet::new(16.0, 0.1);
        let k = FbiKernel::new(2, 2.0, 8.0, 16).unwrap();
        let r = cauchy_riemann_residual(&k, 0.5, 0.4, 0.01, &z.v, &grid, &cut).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn approximate_identity_rate() {
        // ζ(t) = |sin t| g(x) has an H¹ kink; C = error·λ^γ / ‖ηζ‖_{H¹} stays bounded
        let mesh = Mesh::new(3).unwrap();
        let tf = 16.0;
        let grid = TimeGrid::symmetric(tf, 0.004);
        let g = NodeField::constant(mesh, 1.0).with_zero_boundary();
        let zeta: Vec<NodeField> = grid.times().iter().map(|t| g.scale(t.sin().abs())).collect();
        let cut = CutoffSet::new(tf, 0.1);
        let h1 = {
            let w = grid.weights();
            grid.times().iter().zip(&w).map(|(&t, w)| {
                let (e, e1, _) = cut.eta(t);
                let (f, f1) = (t.sin().abs(), t.cos() * t.sin().signum());
                w * ((e * f).powi(2) + (e1 * f + e * f1).powi(2))
            }).sum::<f64>().sqrt()
        };
        let mut cs = vec![];
        for lam in [4.0, 8.0, 16.0] {
            let k = FbiKernel::new(1, lam, 0.0, 16).unwrap();
            let mut err = 0.0;
            let step = 0.1;
            let mut a = -tf / 8.0;
            while a <= tf / 8.0 + 1e-9 {
                let v = fbi_transform(&k, a, &zeta, &grid, &cut, &[0.0]).unwrap().remove(0);
                err += step * (v.re.get(1, 1) - a.sin().abs()).powi(2);
                a += step;
            }
            cs.push(err.sqrt() * k.scale() / h1);
        }
        assert!(cs[1] <= 1.3 * cs[0] && cs[2] <= 1.3 * cs[1], "{cs:?}");
    }

    #[test]
    fn log_stability_pipeline() {
        let cfg = LogStabilityConfig { n: 6, ..Default::default() };
        let r = log_stability_experiment(&cfg).unwrap();
        assert!(r.measurement > 0.0 && r.rho.is_finite() && r.d_norm > 0.0);
        assert!(r.ratio.is_finite() && r.lhs > 0.0);
        assert!(r.measurement_sweep.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!(r.c3 > 0.0 && r.c6 > r.c3 && r.eps_star > 0.0);
        let kav = log_stability_experiment(&LogStabilityConfig { n: 6, zeta: ZetaSpec::Kavian, ..Default::default() }).unwrap();
        assert!(kav.measurement < 1e-12 * kav.d_norm);
        assert_eq!(kav.term_log, 0.0);
        assert!(kav.lhs <= kav.term_h);
        let zero = log_stability_experiment(&LogStabilityConfig { n: 6, zeta: ZetaSpec::Modes(vec![]), ..Default::default() }).unwrap();
        assert_eq!((zero.lhs, zero.d_norm), (0.0, 0.0));
    }
}
