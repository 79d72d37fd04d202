//! Penalized flux measurements, stability sweeps over pairs of potentials, the
//! consistent discrete data built from a manufactured trajectory, and adjoint-based
//! reconstruction of the potential.

use crate::diffops::{d_plus, laplacian};
use crate::error::{Error, Result};
use crate::grid::{
    constant_extension_l2_error, integrate_interior_masked, integrate_staggered, l2_sq, restrict_cell_average,
    stag_sq, Axis, BoundarySet, BoundaryTrace, Edge, Mesh, NodeField, Region, StaggeredField, SubsetMask, Support,
};
use crate::num::{ddt_stencil, log_slope, trapezoid_weights, Sum};
use crate::wavesolve::{flux_of, penalization_of, solve, BoundaryData, Flux, Penalization, TimeSeries, WaveProblem, WaveSolution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The pair (flux on Γ₀, h ∂⁺_k ∂_tt y) with its cached norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub flux: Flux,
    pub pen: Penalization,
    /// ‖flux‖_{H¹(0,T;L²_h(Γ₀,h))}
    pub flux_h1: f64,
    /// ‖pen‖_{L²(0,T;L²_h)}
    pub pen_l2: f64,
}

impl Measurement {
    pub fn from_series(y: &TimeSeries, gamma0: &SubsetMask) -> Result<Self> {
        let flux = flux_of(y, gamma0)?;
        let pen = penalization_of(y)?;
        Self::from_parts(flux, pen)
    }

    fn from_parts(flux: Flux, pen: Penalization) -> Result<Self> {
        let flux_h1 = flux.h1_sq()?.sqrt();
        let pen_l2 = pen.norm();
        Ok(Self { flux, pen, flux_h1, pen_l2 })
    }

    pub fn recompute_norms(&self) -> Result<(f64, f64)> {
        Ok((self.flux.h1_sq()?.sqrt(), self.pen.norm()))
    }

    /// Discrete norm of the pair: flux H¹ norm plus penalization norm.
    pub fn norm(&self) -> f64 {
        self.flux_h1 + self.pen_l2
    }

    pub fn sub(&self, other: &Measurement) -> Result<Measurement> {
        if self.flux.traces.len() != other.flux.traces.len() || self.pen.frames.len() != other.pen.frames.len() {
            return Err(Error::Precondition("measurements on different time grids".into()));
        }
        let traces = self.flux.traces.iter().zip(&other.flux.traces).map(|(a, b)| a.sub(b)).collect();
        let frames = self
            .pen
            .frames
            .iter()
            .zip(&other.pen.frames)
            .map(|(a, b)| [a[0].zip_map(&b[0], |x, y| x - y), a[1].zip_map(&b[1], |x, y| x - y)])
            .collect();
        Self::from_parts(Flux { mask: self.flux.mask.clone(), dt: self.flux.dt, traces }, Penalization { dt: self.pen.dt, frames })
    }
}

pub fn measure(sol: &WaveSolution, gamma0: &SubsetMask) -> Result<Measurement> {
    Measurement::from_series(&sol.y, gamma0)
}

/// Node-to-node normal differences along an edge, corners included (length N+2).
fn edge_normal_profile(f: &NodeField, e: Edge) -> Vec<f64> {
    let m = *f.mesh();
    let h = m.h();
    let top = m.n() + 1;
    (0..=top)
        .map(|k| {
            let (b, a) = match e {
                Edge::X1Plus => ((top, k), (top - 1, k)),
                Edge::X1Minus => ((0, k), (1, k)),
                Edge::X2Plus => ((k, top), (k, top - 1)),
                Edge::X2Minus => ((k, 0), (k, 1)),
            };
            (f.get(b.0, b.1) - f.get(a.0, a.1)) / h
        })
        .collect()
}

/// ∫ |∂_ν e_h f|² over the part of ∂Ω in `set`; e_h bilinear, so ∂_ν e_h is
/// piecewise linear along each edge.
fn extension_flux_sq(profiles: &[(Edge, Vec<f64>)], set: &BoundarySet, h: f64) -> f64 {
    let mut s = Sum::new();
    for (e, g) in profiles {
        for k in 0..g.len() - 1 {
            if set.contains(*e, (k as f64 + 0.5) * h) {
                let (a, b) = (g[k], g[k + 1]);
                s.add(h * (a * a + a * b + b * b) / 3.0);
            }
        }
    }
    s.value()
}

/// ∫_Ω |∇ e_h f|²
fn extension_grad_sq(f: &NodeField) -> f64 {
    let m = *f.mesh();
    let h = m.h();
    let top = m.n() + 1;
    let mut s = Sum::new();
    for i in 0..top {
        for j in 0..top {
            let a1 = (f.get(i + 1, j) - f.get(i, j)) / h;
            let b1 = (f.get(i + 1, j + 1) - f.get(i, j + 1)) / h;
            let a2 = (f.get(i, j + 1) - f.get(i, j)) / h;
            let b2 = (f.get(i + 1, j + 1) - f.get(i + 1, j)) / h;
            s.add(h * h * (a1 * a1 + a1 * b1 + b1 * b1 + a2 * a2 + a2 * b2 + b2 * b2) / 3.0);
        }
    }
    s.value()
}

/// ‖M̃_h‖ computed on the extensions: ‖∂_ν e_h y‖_{H¹(0,T;L²(Γ₀))} + ‖h ∇e_h ∂_tt y‖_{L²((0,T)×Ω)}.
pub fn product_norm(y: &TimeSeries, set: &BoundarySet) -> Result<f64> {
    let len = y.len();
    if len < 3 {
        return Err(Error::TooFewSnapshots { need: 3, got: len });
    }
    let mesh = *y.mesh();
    let h = mesh.h();
    let dt = y.dt();
    let edges: Vec<Edge> = Edge::ALL.into_iter().filter(|e| set.pieces.iter().any(|p| p.0 == *e)).collect();
    let prof: Vec<Vec<(Edge, Vec<f64>)>> =
        y.snapshots().iter().map(|s| edges.iter().map(|&e| (e, edge_normal_profile(s, e))).collect()).collect();
    let w = trapezoid_weights(len, dt);
    let mut flux = Sum::new();
    for n in 0..len {
        flux.add(w[n] * extension_flux_sq(&prof[n], set, h));
        let deriv: Vec<(Edge, Vec<f64>)> = (0..edges.len())
            .map(|k| {
                let mut v = vec![0.0; mesh.side()];
                for (src, c) in ddt_stencil(n, len, dt) {
                    for (a, b) in v.iter_mut().zip(&prof[src][k].1) {
                        *a += c * b;
                    }
                }
                (edges[k], v)
            })
            .collect();
        flux.add(w[n] * extension_flux_sq(&deriv, set, h));
    }
    let s = y.snapshots();
    let wp = trapezoid_weights(len - 2, dt);
    let mut pen = Sum::new();
    for n in 1..len - 1 {
        let dtt = s[n + 1].sub(&s[n].scale(2.0)).add(&s[n - 1]).scale(1.0 / (dt * dt));
        pen.add(wp[n - 1] * h * h * extension_grad_sq(&dtt));
    }
    Ok(flux.value().sqrt() + pen.value().sqrt())
}

/// A closed-form trajectory ỹ together with the extension q̃ of the boundary values of q.
#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub name: &'static str,
    pub y: fn(f64, f64, f64) -> f64,
    pub y_t: fn(f64, f64, f64) -> f64,
    pub y_tt: fn(f64, f64, f64) -> f64,
    pub q_tilde: fn(f64, f64) -> f64,
    /// True potential used to synthesize measurements.
    pub q_true: fn(f64, f64) -> f64,
    /// Outward normal derivative of y[q_true] on ∂Ω, when known in closed form.
    pub normal: Option<fn(f64, f64, f64) -> f64>,
}

fn product_shape(x1: f64, x2: f64) -> f64 {
    2.0 + (PI * x1).sin() * (PI * x2).cos()
}

fn bump_q(x1: f64, x2: f64) -> f64 {
    1.0 + 0.5 * (PI * x1).sin() * (PI * x2).sin()
}

fn product_normal(t: f64, x1: f64, x2: f64) -> f64 {
    let a = 1.0 + t * t;
    // outward derivative on each edge of the unit square
    if x1 >= 1.0 {
        a * PI * (PI * x1).cos() * (PI * x2).cos()
    } else if x1 <= 0.0 {
        -a * PI * (PI * x1).cos() * (PI * x2).cos()
    } else if x2 >= 1.0 {
        -a * PI * (PI * x1).sin() * (PI * x2).sin()
    } else {
        a * PI * (PI * x1).sin() * (PI * x2).sin()
    }
}

impl Manufactured {
    pub const NAMES: [&'static str; 4] = ["product", "matched", "constant", "crossing"];

    pub fn preset(name: &str) -> Result<Self> {
        let m = match name {
            // ỹ = (1+t²)(2 + sin πx₁ cos πx₂), q = 1 + ½ sin πx₁ sin πx₂, q̃ = 1
            "product" => Self {
                name: "product",
                y: |t, x1, x2| (1.0 + t * t) * product_shape(x1, x2),
                y_t: |t, x1, x2| 2.0 * t * product_shape(x1, x2),
                y_tt: |_, x1, x2| 2.0 * product_shape(x1, x2),
                q_tilde: |_, _| 1.0,
                q_true: bump_q,
                normal: None,
            },
            // same trajectory with q = q̃ = 1, so ỹ = y[q]
            "matched" => Self { name: "matched", q_true: |_, _| 1.0, normal: Some(product_normal), ..Self::preset("product")? },
            "constant" => Self {
                name: "constant",
                y: |t, _, _| 2.0 * (1.0 + t * t),
                y_t: |t, _, _| 4.0 * t,
                y_tt: |_, _, _| 4.0,
                q_tilde: |_, _| 1.0,
                q_true: |_, _| 1.0,
                normal: Some(|_, _, _| 0.0),
            },
            "crossing" => Self {
                name: "crossing",
                y: |t, x1, _| (1.0 + t * t) * (x1 - 0.5),
                y_t: |t, x1, _| 2.0 * t * (x1 - 0.5),
                y_tt: |_, x1, _| 2.0 * (x1 - 0.5),
                q_tilde: |_, _| 1.0,
                q_true: |_, _| 1.0,
                normal: None,
            },
            other => return Err(Error::Config(format!("unknown manufactured preset '{other}' (known: {:?})", Self::NAMES))),
        };
        Ok(m)
    }
}

/// Discrete data (y⁰_h, y¹_h, f_h, f_{∂,h}) on a time grid of `steps` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteData {
    pub mesh: Mesh,
    pub y0: NodeField,
    pub y1: NodeField,
    pub source: TimeSeries,
    pub boundary: Vec<BoundaryTrace>,
    pub q_tilde: NodeField,
    /// The restricted trajectory ỹ_h at every step.
    pub y_tilde: TimeSeries,
    pub t_final: f64,
    pub dt: f64,
    pub alpha0: f64,
    pub regularity: &'static str,
}

impl DiscreteData {
    pub fn problem(&self, q: &NodeField) -> WaveProblem {
        WaveProblem::new(q.clone(), self.y0.clone(), self.y1.clone(), self.t_final)
            .with_dt(self.dt)
            .with_source(self.source.clone())
            .with_boundary(BoundaryData::Series(self.boundary.clone()))
    }

    pub fn solve(&self, q: &NodeField) -> Result<WaveSolution> {
        solve(&self.problem(q))
    }
}

const RESTRICT_PTS: usize = 3;

/// Builds the discrete data by cell-average restriction of ỹ, with f_h assembled from
/// the discrete Laplacian so that ỹ_h solves the semi-discrete problem with q̃_h.
pub fn consistency_data(mf: &Manufactured, mesh: Mesh, t_final: f64, dt: f64, alpha0: f64) -> Result<DiscreteData> {
    let steps = ((t_final / dt).round() as usize).max(1);
    let dt = t_final / steps as f64;
    let r = |f: &dyn Fn(f64, f64) -> f64| restrict_cell_average(mesh, f, RESTRICT_PTS);
    let y0 = r(&|x1, x2| (mf.y)(0.0, x1, x2))?;
    let inf = y0.values().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if inf < alpha0 * (1.0 - 1e-12) {
        return Err(Error::Config(format!("inf |y0| = {inf:.3e} below alpha0 = {alpha0}")));
    }
    let y1 = r(&|x1, x2| (mf.y_t)(0.0, x1, x2))?;
    let q_tilde = r(&|x1, x2| (mf.q_tilde)(x1, x2))?;
    let mut src = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut bdy = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = n as f64 * dt;
        let yh = r(&|x1, x2| (mf.y)(t, x1, x2))?;
        let ytt = r(&|x1, x2| (mf.y_tt)(t, x1, x2))?;
        let f = ytt.sub(&laplacian(&yh)).add(&q_tilde.mul(&yh)).with_zero_boundary();
        bdy.push(BoundaryTrace::of(&yh));
        src.push(f);
        ys.push(yh);
    }
    Ok(DiscreteData {
        mesh,
        y0,
        y1,
        source: TimeSeries::new(mesh, 0.0, dt, src)?,
        boundary: bdy,
        q_tilde,
        y_tilde: TimeSeries::new(mesh, 0.0, dt, ys)?,
        t_final,
        dt,
        alpha0,
        regularity: "manufactured",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariant {
    Boundary,
    Distributed,
    Log,
}

impl SweepVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(Self::Boundary),
            "distributed" => Ok(Self::Distributed),
            "log" => Ok(Self::Log),
            _ => Err(Error::Config(format!("unknown variant '{s}' (boundary|distributed|log)"))),
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Self::Boundary => "boundary",
            Self::Distributed => "distributed",
            Self::Log => "log",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Trig,
    Bump,
    Mixed,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trig" => Ok(Self::Trig),
            "bump" => Ok(Self::Bump),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::Config(format!("unknown perturbation family '{s}' (trig|bump|mixed)"))),
        }
    }
}

/// Random perturbation δq with sup |δq| = 1, defined in the continuum so that the
/// same sample is used on every mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    modes: Vec<(f64, f64, f64)>,
    bumps: Vec<(f64, f64, f64, f64)>,
    norm: f64,
}

/// C² bump (1 − r²/ρ²)³ on r < ρ.
fn bump(x1: f64, x2: f64, c1: f64, c2: f64, rho: f64) -> f64 {
    let r2 = ((x1 - c1).powi(2) + (x2 - c2).powi(2)) / (rho * rho);
    if r2 < 1.0 {
        (1.0 - r2).powi(3)
    } else {
        0.0
    }
}

impl Perturbation {
    /// Perturbation for sample `index`; the stream is selected by the index so the draw
    /// does not depend on evaluation order.
    pub fn sample(family: Family, seed: u64, index: u64, localized: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut modes = vec![];
        let mut bumps = vec![];
        let trig = !localized && matches!(family, Family::Trig | Family::Mixed);
        let bmp = localized || matches!(family, Family::Bump | Family::Mixed);
        if trig {
            for _ in 0..rng.random_range(1..=3) {
                modes.push((rng.random_range(1..=4) as f64, rng.random_range(1..=4) as f64, rng.random_range(-1.0..1.0)));
            }
        }
        if bmp {
            for _ in 0..rng.random_range(1..=2) {
                // localized bumps stay in (0.15, 0.65)², away from a collar of Γ₊ and from ∂Ω
                let (lo, hi, rmax) = if localized { (0.3, 0.5, 0.15) } else { (0.25, 0.75, 0.2) };
                bumps.push((rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(0.08..rmax), rng.random_range(-1.0..1.0)));
            }
        }
        let mut p = Self { modes, bumps, norm: 1.0 };
        let mut sup = 0.0f64;
        for a in 0..=200 {
            for b in 0..=200 {
                sup = sup.max(p.eval(a as f64 / 200.0, b as f64 / 200.0).abs());
            }
        }
        p.norm = if sup > 0.0 { sup } else { 1.0 };
        p
    }

    pub fn zero() -> Self {
        Self { modes: vec![], bumps: vec![], norm: 1.0 }
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let mut v = 0.0;
        for &(k, l, c) in &self.modes {
            v += c * (k * PI * x1).sin() * (l * PI * x2).sin();
        }
        for &(c1, c2, r, c) in &self.bumps {
            v += c * bump(x1, x2, c1, c2, r);
        }
        v / self.norm
    }

    pub fn field(&self, mesh: Mesh, amplitude: f64) -> NodeField {
        NodeField::from_fn(mesh, |x, y| amplitude * self.eval(x, y)).with_zero_boundary()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub t_final: f64,
    pub dt_factor: f64,
    /// L^∞ cap on both potentials.
    pub m: f64,
    pub alpha0: f64,
    pub samples: usize,
    pub seed: u64,
    pub family: Family,
    /// sup |q_b − q_a| before scaling.
    pub amplitude: f64,
    pub scale: f64,
    pub variant: SweepVariant,
    /// Collar width of the distributed observation set.
    pub delta: f64,
    /// Observed sub-edge {1}×(a,b) for the logarithmic variant.
    pub sub_edge: (f64, f64),
    pub alpha: f64,
    pub preset: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ns: vec![10, 20, 40],
            t_final: 1.6,
            dt_factor: 0.125,
            m: 3.0,
            alpha0: 0.5,
            samples: 20,
            seed: 0,
            family: Family::Mixed,
            amplitude: 0.5,
            scale: 1.0,
            variant: SweepVariant::Boundary,
            delta: 0.2,
            sub_edge: (0.3, 0.7),
            alpha: 0.5,
            preset: "product".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRecord {
    pub n: usize,
    pub sample: usize,
    pub dq_norm: f64,
    /// Discrete gap: flux H¹ norm plus penalization norm (plus the ω terms for the
    /// distributed variant).
    pub measurement_gap: f64,
    pub pen: f64,
    /// The same gap computed on the extensions e_h.
    pub product_gap: f64,
    pub ratio: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub variant: SweepVariant,
    /// (N, max ratio)
    pub max_ratio: Vec<(usize, f64)>,
    pub growth: f64,
    /// Range of product_gap / measurement_gap over all records.
    pub equivalence: (f64, f64),
    /// sup_t ‖y_h[q_a]‖_{L^∞} + ‖∂_t y_h[q_a]‖ part of the a-priori bound, per N.
    pub k_bound: Vec<(usize, f64)>,
}

/// Reference potential q_a = 1 + ½ sin πx₁ sin πx₂.
pub fn reference_potential(mesh: Mesh) -> NodeField {
    NodeField::from_fn(mesh, bump_q)
}

fn omega_terms(dv: &TimeSeries, omega: &SubsetMask) -> Result<f64> {
    let w = trapezoid_weights(dv.len(), dv.dt());
    let dvt = dv.derivative()?;
    let mut s = Sum::new();
    for n in 0..dv.len() {
        let v = &dv.snapshots()[n];
        let vt = &dvt.snapshots()[n];
        let a = integrate_interior_masked(&v.mul(v), omega)? + integrate_interior_masked(&vt.mul(vt), omega)?;
        let mut g = 0.0;
        for ax in Axis::BOTH {
            let d = d_plus(v, ax);
            g += integrate_staggered(&d.zip_map(&d, |x, y| x * y), Some(omega))?;
        }
        s.add(w[n] * a);
        s.add(w[n] * g);
    }
    Ok(s.value().sqrt())
}

fn h1_linf(y: &TimeSeries) -> Result<f64> {
    let w = trapezoid_weights(y.len(), y.dt());
    let yt = y.derivative()?;
    let mut s = Sum::new();
    for n in 0..y.len() {
        s.add(w[n] * (y.snapshots()[n].max_abs().powi(2) + yt.snapshots()[n].max_abs().powi(2)));
    }
    Ok(s.value().sqrt())
}

/// Ratios ‖q_a − q_b‖_{L²_h} / gap over random pairs for each N.
pub fn lipschitz_sweep(cfg: &SweepConfig) -> Result<(Vec<StabilityRecord>, SweepSummary)> {
    let mf = Manufactured::preset(&cfg.preset)?;
    let mut records = vec![];
    let mut k_bound = vec![];
    let localized = cfg.variant == SweepVariant::Log;
    let perts: Vec<Perturbation> = (0..cfg.samples).map(|s| Perturbation::sample(cfg.family, cfg.seed, s as u64, localized)).collect();
    for &n in &cfg.ns {
        let mesh = Mesh::new(n)?;
        let h = mesh.h();
        let data = consistency_data(&mf, mesh, cfg.t_final, cfg.dt_factor * h, cfg.alpha0).map_err(|e| e.in_stage("consistency"))?;
        let qa = reference_potential(mesh);
        if qa.max_abs_interior() > cfg.m {
            return Err(Error::Config(format!("‖q_a‖∞ exceeds m = {}", cfg.m)));
        }
        let (set, omega) = match cfg.variant {
            SweepVariant::Boundary | SweepVariant::Distributed => (BoundarySet::gamma_plus(), SubsetMask::interior(mesh, &Region::collar(cfg.delta))),
            SweepVariant::Log => (BoundarySet::sub_edge(Edge::X1Plus, cfg.sub_edge.0, cfg.sub_edge.1), SubsetMask::interior(mesh, &Region::collar(cfg.delta))),
        };
        let gamma0 = SubsetMask::boundary(mesh, &set);
        let sa = data.solve(&qa).map_err(|e| e.in_stage("forward"))?;
        k_bound.push((n, h1_linf(&sa.y)?));
        let ma = measure(&sa, &gamma0)?;
        let rows: Vec<Result<StabilityRecord>> = perts
            .par_iter()
            .enumerate()
            .map(|(s, p)| {
                let dq = p.field(mesh, cfg.amplitude * cfg.scale);
                let qb = qa.add(&dq);
                if qb.max_abs_interior() > cfg.m {
                    return Err(Error::Config(format!("‖q_b‖∞ exceeds m = {} (sample {s})", cfg.m)));
                }
                let dq_norm = l2_sq(&dq).sqrt();
                if dq_norm == 0.0 {
                    return Ok(StabilityRecord { n, sample: s, dq_norm, measurement_gap: 0.0, pen: 0.0, product_gap: 0.0, ratio: None, skipped: Some("q_b = q_a".into()) });
                }
                let sb = data.solve(&qb).map_err(|e| e.in_stage("forward"))?;
                let diff = measure(&sb, &gamma0)?.sub(&ma)?;
                let dy = sa.y.sub(&sb.y)?;
                let product_gap = product_norm(&dy, &set)?;
                let gap = match cfg.variant {
                    SweepVariant::Boundary => diff.norm(),
                    SweepVariant::Distributed => omega_terms(&sa.velocity.sub(&sb.velocity)?, &omega)? + diff.pen_l2,
                    SweepVariant::Log => {
                        let e = 1.0 / (1.0 + cfg.alpha);
                        let lg = if diff.flux_h1 == 0.0 { 0.0 } else { (2.0 + 1.0 / diff.flux_h1).ln().powf(-e) };
                        h.powf(e) + lg + diff.pen_l2
                    }
                };
                let ratio = (gap > 0.0).then(|| dq_norm / gap);
                let skipped = if gap > 0.0 { None } else { Some("zero measurement gap".into()) };
                Ok(StabilityRecord { n, sample: s, dq_norm, measurement_gap: diff.norm(), pen: diff.pen_l2, product_gap, ratio, skipped })
            })
            .collect();
        for r in rows {
            records.push(r?);
        }
    }
    let mut max_ratio = vec![];
    for &n in &cfg.ns {
        let m = records.iter().filter(|r| r.n == n).filter_map(|r| r.ratio).fold(0.0, f64::max);
        max_ratio.push((n, m));
    }
    let lo = max_ratio.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = max_ratio.iter().map(|x| x.1).fold(0.0, f64::max);
    let growth = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let mut eq = (f64::INFINITY, 0.0f64);
    for r in &records {
        if r.measurement_gap > 0.0 {
            let f = r.product_gap / r.measurement_gap;
            eq = (eq.0.min(f), eq.1.max(f));
        }
    }
    Ok((records, SweepSummary { variant: cfg.variant, max_ratio, growth, equivalence: eq, k_bound }))
}

/// Everything needed to evaluate the misfit J(q).
#[derive(Debug, Clone)]
pub struct InverseSetup {
    pub data: DiscreteData,
    pub set: BoundarySet,
    pub gamma0: SubsetMask,
    /// Nodes where q is known and held fixed (besides ∂Ω_h).
    pub known: Option<SubsetMask>,
    pub target: Measurement,
    pub reg: f64,
}

impl InverseSetup {
    pub fn new(data: DiscreteData, set: BoundarySet, target: Measurement) -> Self {
        let gamma0 = SubsetMask::boundary(data.mesh, &set);
        Self { data, set, gamma0, known: None, target, reg: 0.0 }
    }

    /// Synthetic noiseless target from q_true.
    pub fn synthetic(data: DiscreteData, set: BoundarySet, q_true: &NodeField) -> Result<Self> {
        let gamma0 = SubsetMask::boundary(data.mesh, &set);
        let target = measure(&data.solve(q_true)?, &gamma0)?;
        Ok(Self { data, set, gamma0, known: None, target, reg: 0.0 })
    }

    fn free(&self, i: usize, j: usize) -> bool {
        !self.data.mesh.is_boundary(i, j) && self.known.as_ref().is_none_or(|k| !k.contains_node(i, j))
    }

    fn project(&self, g: &mut NodeField) {
        let m = self.data.mesh;
        for i in 0..m.side() {
            for j in 0..m.side() {
                if !self.free(i, j) {
                    g.set(i, j, 0.0);
                }
            }
        }
    }

    fn reg_term(&self, q: &NodeField) -> f64 {
        if self.reg == 0.0 {
            return 0.0;
        }
        0.5 * self.reg * Axis::BOTH.iter().map(|&ax| stag_sq(&d_plus(q, ax))).sum::<f64>()
    }

    /// J(q) = ½‖flux − target‖²_{H¹} + ½‖pen − target‖²_{L²} + ½ε_reg‖∇_h q‖².
    pub fn objective(&self, q: &NodeField) -> Result<f64> {
        let sol = self.data.solve(q)?;
        let d = measure(&sol, &self.gamma0)?.sub(&self.target)?;
        Ok(0.5 * (d.flux_h1 * d.flux_h1 + d.pen_l2 * d.pen_l2) + self.reg_term(q))
    }

    /// J and its gradient with respect to the nodal values of q, by the adjoint of the
    /// leapfrog recursion.
    pub fn gradient(&self, q: &NodeField) -> Result<(f64, NodeField)> {
        let mesh = self.data.mesh;
        let h = mesh.h();
        let sol = self.data.solve(q)?;
        let d = measure(&sol, &self.gamma0)?.sub(&self.target)?;
        let j = 0.5 * (d.flux_h1 * d.flux_h1 + d.pen_l2 * d.pen_l2) + self.reg_term(q);
        let ys = sol.y.snapshots();
        let len = ys.len();
        let nt = len - 1;
        let dt = sol.y.dt();
        // ∂J/∂y^n
        let mut g: Vec<NodeField> = vec![NodeField::zeros(mesh); len];
        let w = trapezoid_weights(len, dt);
        let dflux = d.flux.derivative()?;
        // weight on each flux trace value: from the L² part and through the time stencil
        let mut tr: Vec<Vec<f64>> = d.flux.traces.iter().enumerate().map(|(n, t)| t.values().iter().map(|v| w[n] * h * v).collect()).collect();
        for n in 0..len {
            for (k, c) in ddt_stencil(n, len, dt) {
                for (a, b) in tr[k].iter_mut().zip(dflux[n].values()) {
                    *a += w[n] * h * c * b;
                }
            }
        }
        for n in 0..len {
            let t = BoundaryTrace::from_values(mesh, std::mem::take(&mut tr[n]))?;
            for e in Edge::ALL {
                for m in 1..=mesh.n() {
                    if self.gamma0.contains_boundary(e, m) {
                        let (ai, aj) = e.inner(&mesh, m);
                        let v = g[n].get(ai, aj) - t.get(e, m) / h;
                        g[n].set(ai, aj, v);
                    }
                }
            }
        }
        let wp = trapezoid_weights(len - 2, dt);
        let c = h / (dt * dt);
        for n in 1..nt {
            let fr = &d.pen.frames[n - 1];
            let mut back = NodeField::zeros(mesh);
            for (ax, f) in Axis::BOTH.iter().zip(fr.iter()) {
                add_d_plus_transpose(&mut back, f, *ax, wp[n - 1] * h * h * c);
            }
            g[n + 1].axpy(1.0, &back);
            g[n].axpy(-2.0, &back);
            g[n - 1].axpy(1.0, &back);
        }
        // reverse sweep: p^n = g^n + Aᵀp^{n+1} − p^{n+2}, A = 2 + dt²(Δ_h − q)
        let dt2 = dt * dt;
        let apply_at = |p: &NodeField| -> NodeField {
            let mut out = laplacian(p);
            for i in 1..=mesh.n() {
                for jj in 1..=mesh.n() {
                    out.set(i, jj, 2.0 * p.get(i, jj) + dt2 * (out.get(i, jj) - q.get(i, jj) * p.get(i, jj)));
                }
            }
            out.with_zero_boundary()
        };
        let mut grad = NodeField::zeros(mesh);
        let mut p_next2 = NodeField::zeros(mesh);
        let mut p_next = g[nt].clone().with_zero_boundary();
        for n in (1..nt).rev() {
            // p_next = p^{n+1}; y^{n+1} = A y^n − y^{n−1} + …
            grad.axpy(-dt2, &p_next.mul(&ys[n]));
            let p = g[n].clone().with_zero_boundary().add(&apply_at(&p_next)).sub(&p_next2);
            p_next2 = p_next;
            p_next = p;
        }
        // p_next = p^1; y^1 = y^0 + dt y¹ + ½dt²(Δ_h y^0 − q y^0 + f^0)
        grad.axpy(-0.5 * dt2, &p_next.mul(&ys[0]));
        if self.reg > 0.0 {
            grad.axpy(-self.reg * h * h, &laplacian(q));
        }
        self.project(&mut grad);
        Ok((j, grad))
    }
}

/// out += coef · (∂⁺_ax)ᵀ f
fn add_d_plus_transpose(out: &mut NodeField, f: &StaggeredField, ax: Axis, coef: f64) {
    let h = out.mesh().h();
    let (di, dj) = ax.step();
    for (i, j) in f.indices() {
        let v = coef * f.get(i, j) / h;
        out.set(i + di, j + dj, out.get(i + di, j + dj) + v);
        out.set(i, j, out.get(i, j) - v);
    }
}

fn dot(a: &NodeField, b: &NodeField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect::<Sum>().value()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// max over directions of |FD − ⟨∇J, δq⟩| / |⟨∇J, δq⟩| at ε = eps_rel.
    pub rel_err: f64,
    /// Convergence order of the central difference under ε-halving, per direction.
    pub slopes: Vec<f64>,
}

/// Central differences of J against the adjoint gradient in random directions: the
/// error at `eps_rel`, and the observed order over the halving sequence `eps_slope`.
pub fn gradient_check(setup: &InverseSetup, q: &NodeField, directions: usize, seed: u64, eps_slope: &[f64], eps_rel: f64) -> Result<GradientCheck> {
    let (_, g) = setup.gradient(q)?;
    let mesh = setup.data.mesh;
    let mut rel_err = 0.0f64;
    let mut slopes = vec![];
    for d in 0..directions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(d as u64);
        let vals = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut dir = NodeField::from_values(mesh, vals)?;
        setup.project(&mut dir);
        let exact = dot(&g, &dir);
        let fd = |e: f64| -> Result<f64> {
            let mut qp = q.clone();
            qp.axpy(e, &dir);
            let mut qm = q.clone();
            qm.axpy(-e, &dir);
            Ok((setup.objective(&qp)? - setup.objective(&qm)?) / (2.0 * e))
        };
        rel_err = rel_err.max((fd(eps_rel)? - exact).abs() / exact.abs());
        if eps_slope.len() >= 2 {
            let errs = eps_slope.iter().map(|&e| Ok((fd(e)? - exact).abs())).collect::<Result<Vec<f64>>>()?;
            slopes.push(log_slope(eps_slope, &errs));
        }
    }
    Ok(GradientCheck { rel_err, slopes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    pub max_iter: usize,
    /// Stop when ‖∇J‖ < grad_tol · ‖∇J(q_init)‖.
    pub grad_tol: f64,
    /// Stop when J < j_tol · J(q_init).
    pub j_tol: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { max_iter: 300, grad_tol: 1e-6, j_tol: 1e-10, armijo: 1e-4, max_halvings: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub grad: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub q: NodeField,
    pub log: Vec<IterRecord>,
    pub converged: bool,
}

/// Gradient descent with Barzilai–Borwein trial steps and Armijo backtracking.
pub fn reconstruct(setup: &InverseSetup, q_init: &NodeField, opts: &ReconstructOptions) -> Result<Reconstruction> {
    let mut q = q_init.clone();
    let (mut j, mut g) = setup.gradient(&q)?;
    let j0 = j;
    let g0 = dot(&g, &g).sqrt();
    let mut log = vec![IterRecord { iter: 0, j, grad: g0, step: 0.0 }];
    if j == 0.0 || g0 == 0.0 {
        return Ok(Reconstruction { q, log, converged: true });
    }
    // initial step moves q by at most 0.1 in sup norm
    let mut alpha = 0.1 / g.max_abs();
    for it in 1..=opts.max_iter {
        let gg = dot(&g, &g);
        let mut step = alpha;
        let mut halvings = 0;
        let (qn, jn) = loop {
            let mut trial = q.clone();
            trial.axpy(-step, &g);
            let jt = setup.objective(&trial)?;
            if jt <= j - opts.armijo * step * gg {
                break (trial, jt);
            }
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(Error::Stagnation { iter: it, j, grad: gg.sqrt() });
            }
            step *= 0.5;
        };
        let (_, gn) = setup.gradient(&qn)?;
        let s = qn.sub(&q);
        let yv = gn.sub(&g);
        let sy = dot(&s, &yv);
        alpha = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * step };
        q = qn;
        j = jn;
        g = gn;
        let gnorm = dot(&g, &g).sqrt();
        log.push(IterRecord { iter: it, j, grad: gnorm, step });
        if gnorm < opts.grad_tol * g0 || j < opts.j_tol * j0 {
            return Ok(Reconstruction { q, log, converged: true });
        }
    }
    Ok(Reconstruction { q, log, converged: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub ns: Vec<usize>,
    pub t_final: f64,
    pub dt_factor: f64,
    pub alpha0: f64,
    pub preset: String,
    /// `false` skips reconstruction and uses q_h = r̃_h(q).
    pub reconstruct: bool,
    pub options: ReconstructOptions,
    pub reg: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            ns: vec![10, 20, 40],
            t_final: 1.6,
            dt_factor: 0.125,
            alpha0: 0.5,
            preset: "product".into(),
            reconstruct: true,
            options: ReconstructOptions::default(),
            reg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    /// ‖e⁰_h(q_h) − q‖_{L²} on the union of interior cells.
    pub q_error: f64,
    /// ‖q̃_h − q‖ for the starting potential.
    pub initial_error: f64,
    /// ‖M̃_h[q_h] − measured‖ in the discrete norm.
    pub measurement_gap: f64,
    /// ‖M̃_h[q_h] − M̃₀[q]‖ when the preset has a closed-form normal derivative.
    pub comparator_gap: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// ‖∂_ν e_h y − ∂_ν y‖_{L²(0,T;L²(Γ₊))} + ‖h∇e_h ∂_tt y‖ against a closed-form flux.
fn comparator_gap(y: &TimeSeries, normal: fn(f64, f64, f64) -> f64) -> Result<f64> {
    let mesh = *y.mesh();
    let h = mesh.h();
    let set = BoundarySet::gamma_plus();
    let w = trapezoid_weights(y.len(), y.dt());
    let gl = crate::num::GaussLegendre::new(4);
    let mut s = Sum::new();
    for (n, f) in y.snapshots().iter().enumerate() {
        let t = y.time(n);
        for e in [Edge::X1Plus, Edge::X2Plus] {
            let g = edge_normal_profile(f, e);
            for k in 0..g.len() - 1 {
                if !set.contains(e, (k as f64 + 0.5) * h) {
                    continue;
                }
                for (u, wu) in gl.nodes.iter().zip(&gl.weights) {
                    let r = 0.5 * (1.0 + u);
                    let sc = (k as f64 + r) * h;
                    let (x1, x2) = if e == Edge::X1Plus { (1.0, sc) } else { (sc, 1.0) };
                    let d = (1.0 - r) * g[k] + r * g[k + 1] - normal(t, x1, x2);
                    s.add(w[n] * 0.5 * h * wu * d * d);
                }
            }
        }
    }
    let pen = penalization_of(y)?.norm();
    Ok(s.value().sqrt() + pen)
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    let mf = Manufactured::preset(&cfg.preset)?;
    let mut rows = vec![];
    for &n in &cfg.ns {
        let mesh = Mesh::new(n)?;
        let h = mesh.h();
        let q_true = restrict_cell_average(mesh, mf.q_true, RESTRICT_PTS)?;
        let err = |q: &NodeField| constant_extension_l2_error(q, mf.q_true, Support::Cells);
        if !cfg.reconstruct {
            let comparator = match mf.normal {
                Some(nf) => {
                    let data = consistency_data(&mf, mesh, cfg.t_final, cfg.dt_factor * h, cfg.alpha0)?;
                    Some(comparator_gap(&data.solve(&q_true)?.y, nf)?)
                }
                None => None,
            };
            let q0 = restrict_cell_average(mesh, mf.q_tilde, RESTRICT_PTS)?;
            rows.push(ConvergenceRow { n, h, q_error: err(&q_true), initial_error: err(&q0), measurement_gap: 0.0, comparator_gap: comparator, iterations: 0, converged: true });
            continue;
        }
        let data = consistency_data(&mf, mesh, cfg.t_final, cfg.dt_factor * h, cfg.alpha0).map_err(|e| e.in_stage("consistency"))?;
        let q_init = data.q_tilde.clone();
        let mut setup = InverseSetup::synthetic(data, BoundarySet::gamma_plus(), &q_true).map_err(|e| e.in_stage("measure"))?;
        setup.reg = cfg.reg;
        let rec = reconstruct(&setup, &q_init, &cfg.options).map_err(|e| e.in_stage("reconstruct"))?;
        let gap = measure(&setup.data.solve(&rec.q)?, &setup.gamma0)?.sub(&setup.target)?.norm();
        let comparator = match mf.normal {
            Some(nf) => Some(comparator_gap(&setup.data.solve(&rec.q)?.y, nf)?),
            None => None,
        };
        rows.push(ConvergenceRow {
            n,
            h,
            q_error: err(&rec.q),
            initial_error: err(&q_init),
            measurement_gap: gap,
            comparator_gap: comparator,
            iterations: rec.log.len() - 1,
            converged: rec.converged,
        });
    }
    Ok(rows)
}

/// Convergence rate of the potential error against h.
pub fn error_rate(rows: &[ConvergenceRow]) -> f64 {
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.q_error).collect();
    log_slope(&h, &e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundarySet;

    fn mode(m: Mesh) -> NodeField {
        NodeField::from_fn(m, |x, y| (PI * x).sin() * (PI * y).sin()).with_zero_boundary()
    }

    #[test]
    fn measurement_zero_linear_and_cached() {
        let mesh = Mesh::new(8).unwrap();
        let g0 = SubsetMask::boundary(mesh, &BoundarySet::gamma_plus());
        let z = TimeSeries::zeros(mesh, 0.0, 0.01, 20);
        let m0 = Measurement::from_series(&z, &g0).unwrap();
        assert_eq!((m0.flux_h1, m0.pen_l2), (0.0, 0.0));
        let u = TimeSeries::from_fn(mesh, 0.0, 0.01, 20, |t| mode(mesh).scale(t.cos()));
        let v = TimeSeries::from_fn(mesh, 0.0, 0.01, 20, |t| mode(mesh).scale(t * t));
        let mu = Measurement::from_series(&u, &g0).unwrap();
        let mv = Measurement::from_series(&v, &g0).unwrap();
        let muv = Measurement::from_series(&u.add(&v).unwrap(), &g0).unwrap();
        let back = muv.sub(&mv).unwrap().sub(&mu).unwrap();
        assert!(back.norm() < 1e-12 * muv.norm());
        let (a, b) = muv.recompute_norms().unwrap();
        assert!((a - muv.flux_h1).abs() <= 1e-12 * a && (b - muv.pen_l2).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn modal_flux_norm_matches_closed_form() {
        let mesh = Mesh::new(20).unwrap();
        let h = mesh.h();
        let y0 = mode(mesh);
        let sol = solve(&WaveProblem::new(NodeField::zeros(mesh), y0, NodeField::zeros(mesh), 1.0)).unwrap();
        let g0 = SubsetMask::boundary(mesh, &BoundarySet::gamma_plus());
        let m = measure(&sol, &g0).unwrap();
        let lam = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let om = lam.sqrt();
        let nn = mesh.n() as f64;
        let s: f64 = 2.0 * (1..=mesh.n()).map(|j| h * ((PI * nn * h).sin() * (PI * j as f64 * h).sin() / h).powi(2)).sum::<f64>();
        let t = 1.0;
        let c2 = t / 2.0 + (2.0 * om * t).sin() / (4.0 * om);
        let s2 = t / 2.0 - (2.0 * om * t).sin() / (4.0 * om);
        let want = (s * (c2 + om * om * s2)).sqrt();
        assert!((m.flux_h1 - want).abs() < 1e-3 * want, "{} vs {want}", m.flux_h1);
    }

    #[test]
    fn manufactured_closure() {
        let mesh = Mesh::new(20).unwrap();
        let mf = Manufactured::preset("product").unwrap();
        let data = consistency_data(&mf, mesh, 1.0, mesh.h() / 8.0, 0.5).unwrap();
        let sol = data.solve(&data.q_tilde).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in sol.y.snapshots().iter().zip(data.y_tilde.snapshots()) {
            worst = worst.max(a.sub(b).max_abs_interior() / b.max_abs_interior());
        }
        assert!(worst < 1e-4, "{worst}");
        // q̃ = q: the z_h branch vanishes
        let z = sol.y.sub(&data.y_tilde).unwrap();
        assert!(z.snapshots().iter().all(|s| s.max_abs_interior() < 1e-9));
    }

    #[test]
    fn positivity_gate() {
        let mesh = Mesh::new(8).unwrap();
        let c = consistency_data(&Manufactured::preset("constant").unwrap(), mesh, 0.5, 0.01, 2.0);
        assert!(c.is_ok());
        let x = consistency_data(&Manufactured::preset("crossing").unwrap(), mesh, 0.5, 0.01, 0.1);
        assert!(matches!(x, Err(Error::Config(_))));
    }

    fn small_setup(n: usize) -> (InverseSetup, NodeField, NodeField) {
        let mesh = Mesh::new(n).unwrap();
        let mf = Manufactured::preset("product").unwrap();
        let data = consistency_data(&mf, mesh, 1.6, mesh.h() / 8.0, 0.5).unwrap();
        let q_true = restrict_cell_average(mesh, mf.q_true, 3).unwrap();
        let q0 = data.q_tilde.clone();
        let s = InverseSetup::synthetic(data, BoundarySet::gamma_plus(), &q_true).unwrap();
        (s, q_true, q0)
    }

    #[test]
    fn zero_misfit_returns_immediately() {
        let (s, q_true, _) = small_setup(6);
        let r = reconstruct(&s, &q_true, &ReconstructOptions::default()).unwrap();
        assert!(r.converged && r.log.len() == 1);
        assert_eq!(r.q, q_true);
    }

    #[test]
    fn adjoint_gradient_matches_differences() {
        let (mut s, _, q0) = small_setup(6);
        s.reg = 1e-3;
        let c = gradient_check(&s, &q0, 3, 7, &[0.4, 0.2, 0.1], 1e-3).unwrap();
        assert!(c.rel_err < 1e-4, "{c:?}");
        assert!(c.slopes.iter().all(|s| (s - 2.0).abs() < 0.2), "{c:?}");
    }

    #[test]
    fn perturbations_are_deterministic_and_normalized() {
        let a = Perturbation::sample(Family::Mixed, 3, 5, false);
        let b = Perturbation::sample(Family::Mixed, 3, 5, false);
        assert_eq!(a, b);
        let mesh = Mesh::new(40).unwrap();
        let f = a.field(mesh, 0.5);
        assert!(f.max_abs() <= 0.5 + 1e-12 && f.max_abs() > 0.3);
        let loc = Perturbation::sample(Family::Trig, 3, 5, true);
        assert_eq!(loc.eval(0.9, 0.5), 0.0);
        assert_eq!(loc.eval(0.5, 0.9), 0.0);
    }

    #[test]
    fn identical_potentials_are_skipped() {
        let cfg = SweepConfig { ns: vec![6], samples: 2, scale: 0.0, ..Default::default() };
        let (recs, _) = lipschitz_sweep(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.ratio.is_none() && r.skipped.is_some()));
    }

    #[test]
    fn sweep_is_scale_invariant_in_linear_regime() {
        let base = SweepConfig { ns: vec![8], samples: 3, ..Default::default() };
        let mut r = vec![];
        for s in [1e-3, 1e-2, 1e-1] {
            let (_, sum) = lipschitz_sweep(&SweepConfig { scale: s, ..base.clone() }).unwrap();
            r.push(sum.max_ratio[0].1);
        }
        assert!(r.iter().all(|x| (x / r[0] - 1.0).abs() < 0.2), "{r:?}");
    }

    #[test]
    fn exact_data_rate_and_constants() {
        let cfg = ConvergenceConfig { ns: vec![10, 20, 40, 80], reconstruct: false, ..Default::default() };
        let rows = convergence_study(&ConvergenceConfig { ns: vec![10, 20], ..cfg.clone() }).unwrap();
        assert!(rows[1].q_error < rows[0].q_error);
        let mf = Manufactured::preset("product").unwrap();
        let errs: Vec<f64> = [10usize, 20, 40, 80]
            .iter()
            .map(|&n| constant_extension_l2_error(&restrict_cell_average(Mesh::new(n).unwrap(), mf.q_true, 3).unwrap(), mf.q_true, Support::Cells))
            .collect();
        let hs: Vec<f64> = [10.0f64, 20.0, 40.0, 80.0].iter().map(|n| 1.0 / (n + 1.0)).collect();
        assert!(log_slope(&hs, &errs) >= 0.9);
        let c = ConvergenceConfig { ns: vec![6, 12], preset: "constant".into(), ..cfg };
        for r in convergence_study(&c).unwrap() {
            assert!(r.q_error < 1e-13);
        }
    }
}
