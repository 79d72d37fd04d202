//! Leapfrog integration of ∂_tt y = Δ_h y − q y + f with Dirichlet data, energy,
//! boundary flux and the h-scaled penalization stream.

use crate::diffops::{d_plus, laplacian, outward_normal_difference};
use crate::error::{Error, Result};
use crate::grid::{integrate_boundary, integrate_interior, l2_sq, stag_sq, Axis, BoundaryTrace, Mesh, NodeField, StaggeredField, SubsetMask};
use crate::num::{ddt_stencil, trapezoid_weights, Sum};

/// Snapshots on a uniform time grid t0, t0+dt, ...
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    mesh: Mesh,
    t0: f64,
    dt: f64,
    snapshots: Vec<NodeField>,
}

impl TimeSeries {
    pub fn new(mesh: Mesh, t0: f64, dt: f64, snapshots: Vec<NodeField>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {dt}")));
        }
        for s in &snapshots {
            mesh.check_same(s.mesh())?;
        }
        Ok(Self { mesh, t0, dt, snapshots })
    }

    pub fn zeros(mesh: Mesh, t0: f64, dt: f64, count: usize) -> Self {
        Self { mesh, t0, dt, snapshots: vec![NodeField::zeros(mesh); count] }
    }

    /// Samples `f(t)` at `count` times.
    pub fn from_fn<F: FnMut(f64) -> NodeField>(mesh: Mesh, t0: f64, dt: f64, count: usize, mut f: F) -> Self {
        let snapshots = (0..count).map(|n| f(t0 + n as f64 * dt)).collect();
        Self { mesh, t0, dt, snapshots }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }
    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn get(&self, n: usize) -> Result<&NodeField> {
        self.snapshots.get(n).ok_or(Error::IndexOutOfRange { index: n, len: self.len() })
    }

    pub fn snapshots(&self) -> &[NodeField] {
        &self.snapshots
    }

    pub fn snapshots_mut(&mut self) -> &mut [NodeField] {
        &mut self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<NodeField> {
        self.snapshots
    }

    fn check_grid(&self, other: &TimeSeries) -> Result<()> {
        self.mesh.check_same(&other.mesh)?;
        if self.len() != other.len() || (self.dt - other.dt).abs() > 1e-14 * self.dt {
            return Err(Error::InvalidParameter("time grids differ".into()));
        }
        Ok(())
    }

    pub fn map<F: Fn(&NodeField) -> NodeField>(&self, f: F) -> Self {
        Self { snapshots: self.snapshots.iter().map(f).collect(), ..self.clone() }
    }

    pub fn zip_map<F: Fn(&NodeField, &NodeField) -> NodeField>(&self, other: &TimeSeries, f: F) -> Result<Self> {
        self.check_grid(other)?;
        Ok(Self { snapshots: self.snapshots.iter().zip(&other.snapshots).map(|(a, b)| f(a, b)).collect(), ..self.clone() })
    }

    pub fn add(&self, other: &TimeSeries) -> Result<Self> {
        self.zip_map(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &TimeSeries) -> Result<Self> {
        self.zip_map(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|a| a.scale(c))
    }

    /// Time derivative by finite differences (fourth order inside).
    pub fn derivative(&self) -> Result<Self> {
        if self.len() < 3 {
            return Err(Error::TooFewSnapshots { need: 3, got: self.len() });
        }
        let len = self.len();
        let snaps = (0..len)
            .map(|n| {
                let mut out = NodeField::zeros(self.mesh);
                for (k, c) in ddt_stencil(n, len, self.dt) {
                    out.axpy(c, &self.snapshots[k]);
                }
                out
            })
            .collect();
        Ok(Self { snapshots: snaps, ..self.clone() })
    }

    /// Odd extension of a series starting at t = 0: z(−t) = −z(t).
    pub fn odd_extension(&self) -> Result<Self> {
        if self.t0.abs() > 1e-14 {
            return Err(Error::Precondition("odd extension needs a series starting at t = 0".into()));
        }
        let len = self.len();
        let mut snaps = Vec::with_capacity(2 * len - 1);
        for n in (1..len).rev() {
            snaps.push(self.snapshots[n].scale(-1.0));
        }
        snaps.extend(self.snapshots.iter().cloned());
        Ok(Self { mesh: self.mesh, t0: -self.t_end(), dt: self.dt, snapshots: snaps })
    }

    /// ∫ ‖·‖²_{L²_h} dt by the trapezoid rule.
    pub fn l2_time_sq(&self) -> f64 {
        let w = trapezoid_weights(self.len(), self.dt);
        self.snapshots.iter().zip(&w).map(|(s, w)| w * l2_sq(s)).collect::<Sum>().value()
    }
}

/// Dirichlet data on ∂Ω_h over time.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryData {
    Zero,
    Constant(BoundaryTrace),
    /// One trace per time step, steps 0..=nt.
    Series(Vec<BoundaryTrace>),
}

impl BoundaryData {
    fn at(&self, n: usize) -> Option<&BoundaryTrace> {
        match self {
            BoundaryData::Zero => None,
            BoundaryData::Constant(t) => Some(t),
            BoundaryData::Series(v) => Some(&v[n]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveProblem {
    pub mesh: Mesh,
    pub q: NodeField,
    pub y0: NodeField,
    pub y1: NodeField,
    /// Interior source at every time step; `None` means f = 0.
    pub source: Option<TimeSeries>,
    pub boundary: BoundaryData,
    pub t_final: f64,
    pub dt: f64,
}

impl WaveProblem {
    /// Homogeneous problem with the default step dt = h/8.
    pub fn new(q: NodeField, y0: NodeField, y1: NodeField, t_final: f64) -> Self {
        let mesh = *q.mesh();
        Self { mesh, q, y0, y1, source: None, boundary: BoundaryData::Zero, t_final, dt: mesh.h() / 8.0 }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_source(mut self, f: TimeSeries) -> Self {
        self.source = Some(f);
        self
    }

    pub fn with_boundary(mut self, b: BoundaryData) -> Self {
        self.boundary = b;
        self
    }

    /// Number of steps; the step is then adjusted to t_final / steps.
    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    pub fn step(&self) -> f64 {
        self.t_final / self.steps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mesh;
        for f in [&self.q, &self.y0, &self.y1] {
            m.check_same(f.mesh())?;
        }
        if !(self.t_final > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("T and dt must be positive".into()));
        }
        let dt = self.step();
        let limit = m.h() / 2f64.sqrt();
        if dt > limit {
            return Err(Error::Cfl { dt, limit });
        }
        let nt = self.steps();
        if let Some(f) = &self.source {
            m.check_same(f.mesh())?;
            if f.len() < nt + 1 {
                return Err(Error::TooFewSnapshots { need: nt + 1, got: f.len() });
            }
        }
        if let BoundaryData::Series(v) = &self.boundary {
            if v.len() < nt + 1 {
                return Err(Error::TooFewSnapshots { need: nt + 1, got: v.len() });
            }
        }
        let b0 = BoundaryTrace::of(&self.y0);
        let d = match self.boundary.at(0) {
            None => b0.values().iter().fold(0.0f64, |a, v| a.max(v.abs())),
            Some(t) => b0.sub(t).values().iter().fold(0.0f64, |a, v| a.max(v.abs())),
        };
        if d > 1e-12 * (1.0 + self.y0.max_abs()) {
            return Err(Error::Precondition(format!("y0 does not match boundary data at t = 0 (gap {d:e})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveSolution {
    pub y: TimeSeries,
    pub velocity: TimeSeries,
    pub problem: WaveProblem,
}

fn set_boundary(y: &mut NodeField, b: Option<&BoundaryTrace>) {
    match b {
        None => *y = std::mem::replace(y, NodeField::zeros(*y.mesh())).with_zero_boundary(),
        Some(t) => {
            let m = *y.mesh();
            for e in crate::grid::Edge::ALL {
                for k in 1..=m.n() {
                    let (i, j) = e.node(&m, k);
                    y.set(i, j, t.get(e, k));
                }
            }
        }
    }
}

/// Interior values of Δ_h y − q y (+ f).
fn accel(y: &NodeField, q: &NodeField, f: Option<&NodeField>) -> NodeField {
    let mut a = laplacian(y);
    let n = y.mesh().n();
    for i in 1..=n {
        for j in 1..=n {
            let mut v = a.get(i, j) - q.get(i, j) * y.get(i, j);
            if let Some(f) = f {
                v += f.get(i, j);
            }
            a.set(i, j, v);
        }
    }
    a
}

/// Leapfrog solve on [0, T].
pub fn solve(p: &WaveProblem) -> Result<WaveSolution> {
    p.validate()?;
    let nt = p.steps();
    let dt = p.step();
    let dt2 = dt * dt;
    let src = |n: usize| p.source.as_ref().map(|s| &s.snapshots[n]);
    let mut ys = Vec::with_capacity(nt + 1);
    let mut y0 = p.y0.clone();
    set_boundary(&mut y0, p.boundary.at(0));
    let a0 = accel(&y0, &p.q, src(0));
    let mut y1 = y0.clone();
    y1.axpy(dt, &p.y1);
    y1.axpy(0.5 * dt2, &a0);
    set_boundary(&mut y1, p.boundary.at(1));
    ys.push(y0);
    ys.push(y1);
    for n in 1..nt {
        let a = accel(&ys[n], &p.q, src(n));
        let mut next = ys[n].scale(2.0).sub(&ys[n - 1]);
        next.axpy(dt2, &a);
        set_boundary(&mut next, p.boundary.at(n + 1));
        if next.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n + 1 });
        }
        ys.push(next);
    }
    if ys.len() > nt + 1 {
        ys.truncate(nt + 1);
    }
    let y = TimeSeries::new(p.mesh, 0.0, dt, ys)?;
    let velocity = y.derivative()?;
    Ok(WaveSolution { y, velocity, problem: p.clone() })
}

/// Problem solved backward from (y(T), ∂_t y(T)); its solution at step n is y at step nt − n.
pub fn reversed(sol: &WaveSolution) -> Result<WaveProblem> {
    let p = &sol.problem;
    let nt = sol.y.len() - 1;
    let mut r = p.clone();
    r.y0 = sol.y.get(nt)?.clone();
    r.y1 = sol.velocity.get(nt)?.scale(-1.0);
    r.dt = sol.y.dt();
    if let Some(f) = &p.source {
        let mut snaps: Vec<NodeField> = f.snapshots()[..=nt].to_vec();
        snaps.reverse();
        r.source = Some(TimeSeries::new(p.mesh, 0.0, f.dt(), snaps)?);
    }
    if let BoundaryData::Series(v) = &p.boundary {
        let mut v = v[..=nt].to_vec();
        v.reverse();
        r.boundary = BoundaryData::Series(v);
    }
    Ok(r)
}

/// E = ½‖∂_t y‖² + ½Σ_k‖∂⁺_k y‖² + ½∫q y².
pub fn energy(sol: &WaveSolution, n: usize) -> Result<f64> {
    let y = sol.y.get(n)?;
    let v = sol.velocity.get(n)?;
    let grad: f64 = Axis::BOTH.iter().map(|&ax| stag_sq(&d_plus(y, ax))).sum();
    let pot = integrate_interior(&sol.problem.q.mul(&y.mul(y)));
    Ok(0.5 * (l2_sq(v) + grad + pot))
}

/// max_n |E(t_n) − E(0)| / E(0); zero for the zero solution.
pub fn max_energy_drift(sol: &WaveSolution) -> Result<f64> {
    let e0 = energy(sol, 0)?;
    if e0 == 0.0 {
        return Ok(0.0);
    }
    let mut d = 0.0f64;
    for n in 0..sol.y.len() {
        d = d.max((energy(sol, n)? - e0).abs() / e0);
    }
    Ok(d)
}

/// Residual (y^{n+1} − 2y^n + y^{n−1})/dt² − Δ_h y^n + q y^n − f^n for n = 1..len−2.
pub fn box_residual(y: &TimeSeries, q: &NodeField, source: Option<&TimeSeries>) -> Result<TimeSeries> {
    if y.len() < 3 {
        return Err(Error::TooFewSnapshots { need: 3, got: y.len() });
    }
    let dt2 = y.dt() * y.dt();
    let s = y.snapshots();
    let out = (1..y.len() - 1)
        .map(|n| {
            let mut r = s[n + 1].sub(&s[n].scale(2.0)).add(&s[n - 1]).scale(1.0 / dt2);
            let a = accel(&s[n], q, source.map(|f| &f.snapshots[n]));
            r = r.sub(&a);
            r.with_zero_boundary()
        })
        .collect();
    TimeSeries::new(*y.mesh(), y.time(1), y.dt(), out)
}

/// Outward normal differences on a boundary set, one trace per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Flux {
    pub mask: SubsetMask,
    pub dt: f64,
    pub traces: Vec<BoundaryTrace>,
}

impl Flux {
    fn time_sq(&self, traces: &[BoundaryTrace]) -> Result<f64> {
        let w = trapezoid_weights(traces.len(), self.dt);
        let mut s = Sum::new();
        for (t, w) in traces.iter().zip(&w) {
            let sq = BoundaryTrace::from_values(*t.mesh(), t.values().iter().map(|v| v * v).collect())?;
            s.add(w * integrate_boundary(&sq, Some(&self.mask))?);
        }
        Ok(s.value())
    }

    /// ‖F‖²_{L²(0,T;L²_h(Γ₀))}
    pub fn l2_sq(&self) -> Result<f64> {
        self.time_sq(&self.traces)
    }

    /// ∂_t F by the same stencil as the velocity.
    pub fn derivative(&self) -> Result<Vec<BoundaryTrace>> {
        let len = self.traces.len();
        if len < 3 {
            return Err(Error::TooFewSnapshots { need: 3, got: len });
        }
        let mesh = *self.traces[0].mesh();
        Ok((0..len)
            .map(|n| {
                let mut vals = vec![0.0; self.traces[0].values().len()];
                for (k, c) in ddt_stencil(n, len, self.dt) {
                    for (a, b) in vals.iter_mut().zip(self.traces[k].values()) {
                        *a += c * b;
                    }
                }
                BoundaryTrace::from_values(mesh, vals).expect("trace length")
            })
            .collect())
    }

    /// ‖F‖²_{H¹(0,T;L²_h(Γ₀))}
    pub fn h1_sq(&self) -> Result<f64> {
        Ok(self.l2_sq()? + self.time_sq(&self.derivative()?)?)
    }
}

/// Flux ∂_ν e_h(y) on `gamma0`; values outside the mask are zero.
pub fn flux_measurement(sol: &WaveSolution, gamma0: &SubsetMask) -> Result<Flux> {
    flux_of(&sol.y, gamma0)
}

pub fn flux_of(y: &TimeSeries, gamma0: &SubsetMask) -> Result<Flux> {
    y.mesh().check_same(gamma0.mesh())?;
    if !gamma0.is_boundary() {
        return Err(Error::NotBoundaryMask);
    }
    let traces = y
        .snapshots()
        .iter()
        .map(|s| {
            let mut t = outward_normal_difference(s);
            restrict_trace(&mut t, gamma0);
            t
        })
        .collect();
    Ok(Flux { mask: gamma0.clone(), dt: y.dt(), traces })
}

pub(crate) fn restrict_trace(t: &mut BoundaryTrace, mask: &SubsetMask) {
    let m = *t.mesh();
    for e in crate::grid::Edge::ALL {
        for k in 1..=m.n() {
            if !mask.contains_boundary(e, k) {
                t.set(e, k, 0.0);
            }
        }
    }
}

/// h ∂⁺_{h,k} ∂_tt y at steps 1..nt−1, with ∂_tt the central second difference.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalization {
    pub dt: f64,
    pub frames: Vec<[StaggeredField; 2]>,
}

impl Penalization {
    /// ‖P‖²_{L²(0,T;L²_h)} summed over k, trapezoid over the available steps.
    pub fn l2_sq(&self) -> f64 {
        let w = trapezoid_weights(self.frames.len(), self.dt);
        self.frames.iter().zip(&w).map(|(f, w)| w * (stag_sq(&f[0]) + stag_sq(&f[1]))).collect::<Sum>().value()
    }

    pub fn norm(&self) -> f64 {
        self.l2_sq().sqrt()
    }
}

pub fn penalization_stream(sol: &WaveSolution) -> Result<Penalization> {
    penalization_of(&sol.y)
}

pub fn penalization_of(y: &TimeSeries) -> Result<Penalization> {
    if y.len() < 3 {
        return Err(Error::TooFewSnapshots { need: 3, got: y.len() });
    }
    let h = y.mesh().h();
    let c = h / (y.dt() * y.dt());
    let s = y.snapshots();
    let frames = (1..y.len() - 1)
        .map(|n| {
            let dtt = s[n + 1].sub(&s[n].scale(2.0)).add(&s[n - 1]);
            [d_plus(&dtt, Axis::X1).scale(c), d_plus(&dtt, Axis::X2).scale(c)]
        })
        .collect();
    Ok(Penalization { dt: y.dt(), frames })
}

/// Checkerboard-diagonal field w_ij = (−1)^i δ_ij, zero on ∂Ω_h; −Δ_h w = (4/h²) w.
pub fn kavian_field(mesh: Mesh) -> NodeField {
    NodeField::from_index_fn(mesh, |i, j| if i == j { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 })
        .with_zero_boundary()
}
