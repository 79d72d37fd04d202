//! Uniform grid on the unit square, discrete fields, masks, discrete integrals and
//! norms, and the extension / restriction operators.
//!
//! Nodes are (i, j) in 0..=N+1 with x = (ih, jh). The boundary set excludes the
//! four corners; corners only live in the closure grid.

use crate::diffops;
use crate::error::{Error, Result};
use crate::num::{GaussLegendre, Sum};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    n: usize,
    h: f64,
}

impl Mesh {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("mesh needs N >= 2, got {n}")));
        }
        Ok(Self { n, h: 1.0 / (n as f64 + 1.0) })
    }

    /// Interior nodes per axis.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Nodes per axis in the closure grid (N + 2).
    #[inline]
    pub fn side(&self) -> usize {
        self.n + 2
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.side() && j < self.side());
        i * self.side() + j
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn check_same(&self, other: &Mesh) -> Result<()> {
        if self.n != other.n {
            return Err(Error::MeshMismatch { expected: self.n, got: other.n });
        }
        Ok(())
    }

    pub fn is_corner(&self, i: usize, j: usize) -> bool {
        let m = self.n + 1;
        (i == 0 || i == m) && (j == 0 || j == m)
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        let m = self.n + 1;
        !self.is_corner(i, j) && (i == 0 || i == m || j == 0 || j == m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X1, Axis::X2];

    /// Unit step (di, dj) along the axis.
    #[inline]
    pub fn step(self) -> (usize, usize) {
        match self {
            Axis::X1 => (1, 0),
            Axis::X2 => (0, 1),
        }
    }

    pub fn other(self) -> Axis {
        match self {
            Axis::X1 => Axis::X2,
            Axis::X2 => Axis::X1,
        }
    }

    pub fn k(self) -> usize {
        match self {
            Axis::X1 => 1,
            Axis::X2 => 2,
        }
    }
}

/// Real function on the closure grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    mesh: Mesh,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(mesh: Mesh) -> Self {
        Self { mesh, values: vec![0.0; mesh.len()] }
    }

    pub fn constant(mesh: Mesh, c: f64) -> Self {
        Self { mesh, values: vec![c; mesh.len()] }
    }

    pub fn from_values(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::InvalidParameter(format!(
                "node field needs {} values, got {}",
                mesh.len(),
                values.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    /// Samples `f(x1, x2)` at every node of the closure grid.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(mesh: Mesh, f: F) -> Self {
        let s = mesh.side();
        let mut values = Vec::with_capacity(mesh.len());
        for i in 0..s {
            for j in 0..s {
                values.push(f(mesh.x(i), mesh.x(j)));
            }
        }
        Self { mesh, values }
    }

    pub fn from_index_fn<F: Fn(usize, usize) -> f64>(mesh: Mesh, f: F) -> Self {
        let s = mesh.side();
        let mut values = Vec::with_capacity(mesh.len());
        for i in 0..s {
            for j in 0..s {
                values.push(f(i, j));
            }
        }
        Self { mesh, values }
    }

    #[inline]
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.mesh.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.mesh.idx(i, j);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Zero on the boundary set and at the corners.
    pub fn is_dirichlet_zero(&self) -> bool {
        let m = self.mesh.n() + 1;
        (0..=m).all(|k| {
            self.get(0, k) == 0.0 && self.get(m, k) == 0.0 && self.get(k, 0) == 0.0 && self.get(k, m) == 0.0
        })
    }

    /// Copy with boundary and corner values set to zero.
    pub fn with_zero_boundary(mut self) -> Self {
        let m = self.mesh.n() + 1;
        for k in 0..=m {
            self.set(0, k, 0.0);
            self.set(m, k, 0.0);
            self.set(k, 0, 0.0);
            self.set(k, m, 0.0);
        }
        self
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { mesh: self.mesh, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &NodeField, f: F) -> Self {
        assert_eq!(self.mesh.n(), other.mesh.n(), "mesh mismatch");
        Self {
            mesh: self.mesh,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &NodeField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &NodeField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &NodeField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &NodeField) {
        assert_eq!(self.mesh.n(), other.mesh.n(), "mesh mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_interior(&self) -> f64 {
        let n = self.mesh.n();
        let mut m: f64 = 0.0;
        for i in 1..=n {
            for j in 1..=n {
                m = m.max(self.get(i, j).abs());
            }
        }
        m
    }

    pub fn min_interior(&self) -> f64 {
        let n = self.mesh.n();
        let mut m = f64::INFINITY;
        for i in 1..=n {
            for j in 1..=n {
                m = m.min(self.get(i, j));
            }
        }
        m
    }

    /// Writes "i,j,value" rows and a JSON sidecar next to `path`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "value"])?;
        let s = self.mesh.side();
        for i in 0..s {
            for j in 0..s {
                w.write_record([i.to_string(), j.to_string(), format!("{:e}", self.get(i, j))])?;
            }
        }
        w.flush()?;
        let side = serde_json::json!({
            "N": self.mesh.n(),
            "h": self.mesh.h(),
            "dirichlet_zero": self.is_dirichlet_zero(),
        });
        let mut f = std::fs::File::create(path.with_extension("json"))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}

/// Function on a half-shifted set: Ω_{h,1}⁻ = 0..=N × 1..=N for X1, transposed for X2,
/// or Ω_h⁻ = 0..=N × 0..=N when `axis` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    mesh: Mesh,
    axis: Option<Axis>,
    values: Vec<f64>,
}

impl StaggeredField {
    pub fn zeros(mesh: Mesh, axis: Axis) -> Self {
        Self { mesh, axis: Some(axis), values: vec![0.0; (mesh.n() + 1) * mesh.n()] }
    }

    /// Field on the doubly shifted set Ω_h⁻.
    pub fn zeros_corner(mesh: Mesh) -> Self {
        Self { mesh, axis: None, values: vec![0.0; (mesh.n() + 1) * (mesh.n() + 1)] }
    }

    pub fn from_index_fn<F: Fn(usize, usize) -> f64>(mesh: Mesh, axis: Axis, f: F) -> Self {
        let mut s = Self::zeros(mesh, axis);
        for (i, j) in s.indices() {
            let k = s.slot(i, j);
            s.values[k] = f(i, j);
        }
        s
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn axis(&self) -> Option<Axis> {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Ranges (i_lo..=i_hi, j_lo..=j_hi) covered by the set.
    pub fn ranges(&self) -> ((usize, usize), (usize, usize)) {
        let n = self.mesh.n();
        match self.axis {
            Some(Axis::X1) => ((0, n), (1, n)),
            Some(Axis::X2) => ((1, n), (0, n)),
            None => ((0, n), (0, n)),
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> {
        let ((i0, i1), (j0, j1)) = self.ranges();
        (i0..=i1).flat_map(move |i| (j0..=j1).map(move |j| (i, j)))
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let n = self.mesh.n();
        match self.axis {
            Some(Axis::X1) => i * n + (j - 1),
            Some(Axis::X2) => (i - 1) * (n + 1) + j,
            None => i * (n + 1) + j,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.slot(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j);
        self.values[k] = v;
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &StaggeredField, f: F) -> Self {
        assert_eq!(self.axis, other.axis);
        Self {
            mesh: self.mesh,
            axis: self.axis,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { mesh: self.mesh, axis: self.axis, values: self.values.iter().map(|v| c * v).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Edge {
    /// Γ_{h,1}^+ : x1 = 1
    X1Plus,
    /// Γ_{h,1}^- : x1 = 0
    X1Minus,
    /// Γ_{h,2}^+ : x2 = 1
    X2Plus,
    /// Γ_{h,2}^- : x2 = 0
    X2Minus,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::X1Plus, Edge::X1Minus, Edge::X2Plus, Edge::X2Minus];

    pub fn axis(self) -> Axis {
        match self {
            Edge::X1Plus | Edge::X1Minus => Axis::X1,
            Edge::X2Plus | Edge::X2Minus => Axis::X2,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, Edge::X1Plus | Edge::X2Plus)
    }

    fn ord(self) -> usize {
        match self {
            Edge::X1Plus => 0,
            Edge::X1Minus => 1,
            Edge::X2Plus => 2,
            Edge::X2Minus => 3,
        }
    }

    /// Node of the m-th boundary point (m in 1..=N) on this edge.
    pub fn node(self, mesh: &Mesh, m: usize) -> (usize, usize) {
        let e = mesh.n() + 1;
        match self {
            Edge::X1Plus => (e, m),
            Edge::X1Minus => (0, m),
            Edge::X2Plus => (m, e),
            Edge::X2Minus => (m, 0),
        }
    }

    /// Adjacent interior node of the m-th boundary point.
    pub fn inner(self, mesh: &Mesh, m: usize) -> (usize, usize) {
        let n = mesh.n();
        match self {
            Edge::X1Plus => (n, m),
            Edge::X1Minus => (1, m),
            Edge::X2Plus => (m, n),
            Edge::X2Minus => (m, 1),
        }
    }
}

/// Values on the 4N boundary nodes, edge by edge, tangential index 1..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    mesh: Mesh,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn zeros(mesh: Mesh) -> Self {
        Self { mesh, values: vec![0.0; 4 * mesh.n()] }
    }

    pub fn from_values(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != 4 * mesh.n() {
            return Err(Error::MeshMismatch { expected: 4 * mesh.n(), got: values.len() });
        }
        Ok(Self { mesh, values })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    #[inline]
    pub fn get(&self, e: Edge, m: usize) -> f64 {
        self.values[e.ord() * self.mesh.n() + m - 1]
    }

    #[inline]
    pub fn set(&mut self, e: Edge, m: usize, v: f64) {
        let n = self.mesh.n();
        self.values[e.ord() * n + m - 1] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Trace of a node field on the boundary set.
    pub fn of(f: &NodeField) -> Self {
        let mesh = *f.mesh();
        let mut t = Self::zeros(mesh);
        for e in Edge::ALL {
            for m in 1..=mesh.n() {
                let (i, j) = e.node(&mesh, m);
                t.set(e, m, f.get(i, j));
            }
        }
        t
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(mesh: Mesh, f: F) -> Self {
        let mut t = Self::zeros(mesh);
        for e in Edge::ALL {
            for m in 1..=mesh.n() {
                let (i, j) = e.node(&mesh, m);
                t.set(e, m, f(mesh.x(i), mesh.x(j)));
            }
        }
        t
    }

    pub fn sub(&self, other: &BoundaryTrace) -> Self {
        Self {
            mesh: self.mesh,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Open axis-aligned rectangle (a1, b1) × (a2, b2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
}

impl Rect {
    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        x1 > self.x1.0 && x1 < self.x1.1 && x2 > self.x2.0 && x2 < self.x2.1
    }
}

/// Union of open rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub rects: Vec<Rect>,
}

impl Region {
    /// ((1−δ,1)×(0,1)) ∪ ((0,1)×(1−δ,1)).
    pub fn collar(delta: f64) -> Self {
        Self {
            rects: vec![
                Rect { x1: (1.0 - delta, 1.0), x2: (0.0, 1.0) },
                Rect { x1: (0.0, 1.0), x2: (1.0 - delta, 1.0) },
            ],
        }
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        self.rects.iter().any(|r| r.contains(x1, x2))
    }

    /// ∃ ε ∈ [0, h] with x + ε e_k in the region.
    pub fn contains_staggered(&self, x1: f64, x2: f64, h: f64, axis: Axis) -> bool {
        self.rects.iter().any(|r| match axis {
            Axis::X1 => x2 > r.x2.0 && x2 < r.x2.1 && x1 < r.x1.1 && x1 + h > r.x1.0,
            Axis::X2 => x1 > r.x1.0 && x1 < r.x1.1 && x2 < r.x2.1 && x2 + h > r.x2.0,
        })
    }
}

/// Subset of the boundary: open intervals in the tangential coordinate per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub pieces: Vec<(Edge, (f64, f64))>,
}

impl BoundarySet {
    /// Γ₊ = ({1}×(0,1)) ∪ ((0,1)×{1}).
    pub fn gamma_plus() -> Self {
        Self { pieces: vec![(Edge::X1Plus, (0.0, 1.0)), (Edge::X2Plus, (0.0, 1.0))] }
    }

    pub fn sub_edge(edge: Edge, a: f64, b: f64) -> Self {
        Self { pieces: vec![(edge, (a, b))] }
    }

    pub fn contains(&self, edge: Edge, s: f64) -> bool {
        self.pieces.iter().any(|(e, (a, b))| *e == edge && s > *a && s < *b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MaskKind {
    Interior(Vec<bool>),
    Boundary(Vec<bool>),
}

/// Indicator of an interior subset ω_h ⊂ Ω_h or a boundary subset Γ_{0,h} ⊂ ∂Ω_h.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMask {
    mesh: Mesh,
    kind: MaskKind,
    stag: Option<[Vec<bool>; 2]>,
}

impl SubsetMask {
    pub fn interior(mesh: Mesh, region: &Region) -> Self {
        let mut m = Self::interior_from(mesh, |x1, x2| region.contains(x1, x2));
        let h = mesh.h();
        let stag = Axis::BOTH.map(|ax| {
            let s = StaggeredField::zeros(mesh, ax);
            s.indices().map(|(i, j)| region.contains_staggered(mesh.x(i), mesh.x(j), h, ax)).collect()
        });
        m.stag = Some(stag);
        m
    }

    /// Interior mask from a predicate. No staggered companions.
    pub fn interior_from<F: Fn(f64, f64) -> bool>(mesh: Mesh, pred: F) -> Self {
        let n = mesh.n();
        let mut v = vec![false; mesh.len()];
        for i in 1..=n {
            for j in 1..=n {
                v[mesh.idx(i, j)] = pred(mesh.x(i), mesh.x(j));
            }
        }
        Self { mesh, kind: MaskKind::Interior(v), stag: None }
    }

    pub fn boundary(mesh: Mesh, set: &BoundarySet) -> Self {
        let n = mesh.n();
        let mut v = vec![false; 4 * n];
        for e in Edge::ALL {
            for m in 1..=n {
                v[e.ord() * n + m - 1] = set.contains(e, mesh.x(m));
            }
        }
        Self { mesh, kind: MaskKind::Boundary(v), stag: None }
    }

    pub fn full_boundary(mesh: Mesh) -> Self {
        Self { mesh, kind: MaskKind::Boundary(vec![true; 4 * mesh.n()]), stag: None }
    }

    pub fn edge(mesh: Mesh, edge: Edge) -> Self {
        Self::boundary(mesh, &BoundarySet::sub_edge(edge, 0.0, 1.0))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self.kind, MaskKind::Boundary(_))
    }

    pub fn contains_node(&self, i: usize, j: usize) -> bool {
        match &self.kind {
            MaskKind::Interior(v) => v[self.mesh.idx(i, j)],
            MaskKind::Boundary(_) => false,
        }
    }

    pub fn contains_boundary(&self, e: Edge, m: usize) -> bool {
        match &self.kind {
            MaskKind::Boundary(v) => v[e.ord() * self.mesh.n() + m - 1],
            MaskKind::Interior(_) => false,
        }
    }

    /// Membership in the staggered companion ω_{h,k}⁻ (rectangle-union masks only).
    pub fn contains_staggered(&self, axis: Axis, i: usize, j: usize) -> bool {
        match &self.stag {
            Some(s) => {
                let probe = StaggeredField::zeros(self.mesh, axis);
                s[axis.k() - 1][probe.slot(i, j)]
            }
            None => false,
        }
    }

    pub fn has_staggered(&self) -> bool {
        self.stag.is_some()
    }

    pub fn count(&self) -> usize {
        match &self.kind {
            MaskKind::Interior(v) | MaskKind::Boundary(v) => v.iter().filter(|b| **b).count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// h² Σ over interior nodes.
pub fn integrate_interior(f: &NodeField) -> f64 {
    let m = f.mesh();
    let n = m.n();
    let mut s = Sum::new();
    for i in 1..=n {
        for j in 1..=n {
            s.add(f.get(i, j));
        }
    }
    m.h() * m.h() * s.value()
}

pub fn integrate_interior_masked(f: &NodeField, mask: &SubsetMask) -> Result<f64> {
    f.mesh().check_same(mask.mesh())?;
    if mask.is_boundary() {
        return Err(Error::InvalidParameter("expected an interior mask".into()));
    }
    let m = f.mesh();
    let n = m.n();
    let mut s = Sum::new();
    for i in 1..=n {
        for j in 1..=n {
            if mask.contains_node(i, j) {
                s.add(f.get(i, j));
            }
        }
    }
    Ok(m.h() * m.h() * s.value())
}

/// h² Σ over all (N+2)² nodes of the closure grid.
pub fn integrate_closure(f: &NodeField) -> f64 {
    let h = f.mesh().h();
    h * h * crate::num::csum(f.values().iter().copied())
}

/// h² Σ over the staggered set; optional mask uses the staggered companion.
pub fn integrate_staggered(f: &StaggeredField, mask: Option<&SubsetMask>) -> Result<f64> {
    let h = f.mesh().h();
    let mut s = Sum::new();
    match mask {
        None => {
            for v in f.values() {
                s.add(*v);
            }
        }
        Some(mk) => {
            f.mesh().check_same(mk.mesh())?;
            let axis = f.axis().ok_or_else(|| Error::InvalidParameter("mask on Ω_h⁻ field".into()))?;
            if !mk.has_staggered() {
                return Err(Error::InvalidParameter("mask has no staggered companion".into()));
            }
            for (i, j) in f.indices() {
                if mk.contains_staggered(axis, i, j) {
                    s.add(f.get(i, j));
                }
            }
        }
    }
    Ok(h * h * s.value())
}

/// h Σ over boundary nodes, optionally restricted to a boundary mask.
pub fn integrate_boundary(f: &BoundaryTrace, mask: Option<&SubsetMask>) -> Result<f64> {
    let mesh = f.mesh();
    let n = mesh.n();
    let mut s = Sum::new();
    if let Some(mk) = mask {
        mesh.check_same(mk.mesh())?;
        if !mk.is_boundary() {
            return Err(Error::NotBoundaryMask);
        }
    }
    for e in Edge::ALL {
        for m in 1..=n {
            if mask.is_none_or(|mk| mk.contains_boundary(e, m)) {
                s.add(f.get(e, m));
            }
        }
    }
    Ok(mesh.h() * s.value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    /// L^p_h over interior nodes.
    Lp(f64),
    /// max over interior nodes.
    Linf,
    /// ‖f‖²_{L²(Ω̄_h)} + Σ_k ‖∂⁺_k f‖²_{Ω_{h,k}⁻}
    H1,
    /// Σ_k ‖∂⁺_k f‖²_{Ω_{h,k}⁻}, for Dirichlet-zero fields.
    H10,
    /// H1 plus ‖Δ_{h,1}f‖², ‖Δ_{h,2}f‖² and ‖∂⁺₁∂⁺₂f‖²_{Ω_h⁻}.
    H2,
}

pub fn norm(f: &NodeField, space: Space) -> Result<f64> {
    match space {
        Space::Lp(p) => {
            if !(p >= 1.0) {
                return Err(Error::InvalidParameter(format!("p = {p} < 1")));
            }
            let g = f.map(|v| v.abs().powf(p));
            Ok(integrate_interior(&g).powf(1.0 / p))
        }
        Space::Linf => Ok(f.max_abs_interior()),
        Space::H1 => Ok(h1_sq(f).sqrt()),
        Space::H10 => {
            if !f.is_dirichlet_zero() {
                return Err(Error::Precondition("H1_0 norm needs a Dirichlet-zero field".into()));
            }
            Ok(grad_sq(f).sqrt())
        }
        Space::H2 => {
            let mut s = h1_sq(f);
            for ax in Axis::BOTH {
                let d2 = diffops::second_difference(f, ax);
                s += integrate_interior(&d2.mul(&d2));
            }
            let mixed = diffops::d_plus_plus(f);
            s += integrate_staggered(&mixed.zip_map(&mixed, |a, b| a * b), None)?;
            Ok(s.sqrt())
        }
    }
}

/// ‖f‖²_{L²_h(Ω_h)}
pub fn l2_sq(f: &NodeField) -> f64 {
    integrate_interior(&f.mul(f))
}

/// ‖f‖²_{L²_h} over a staggered set.
pub fn stag_sq(f: &StaggeredField) -> f64 {
    let h = f.mesh().h();
    h * h * crate::num::csum(f.values().iter().map(|v| v * v))
}

fn grad_sq(f: &NodeField) -> f64 {
    Axis::BOTH.iter().map(|&ax| stag_sq(&diffops::d_plus(f, ax))).sum()
}

fn h1_sq(f: &NodeField) -> f64 {
    integrate_closure(&f.mul(f)) + grad_sq(f)
}

/// Piecewise bilinear extension e_h.
#[derive(Debug, Clone, Copy)]
pub struct AffineExtension<'a> {
    f: &'a NodeField,
}

pub fn extend_affine(f: &NodeField) -> AffineExtension<'_> {
    AffineExtension { f }
}

impl AffineExtension<'_> {
    pub fn eval(&self, x1: f64, x2: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&x2) {
            return Err(Error::Domain(format!("({x1}, {x2}) outside [0,1]²")));
        }
        let m = self.f.mesh();
        let h = m.h();
        let top = m.n();
        let i = ((x1 / h).floor() as usize).min(top);
        let j = ((x2 / h).floor() as usize).min(top);
        let s = x1 / h - i as f64;
        let t = x2 / h - j as f64;
        let f = self.f;
        Ok((1.0 - s) * (1.0 - t) * f.get(i, j)
            + s * (1.0 - t) * f.get(i + 1, j)
            + (1.0 - s) * t * f.get(i, j + 1)
            + s * t * f.get(i + 1, j + 1))
    }
}

/// Piecewise constant extension e_h⁰ on half-open cells around interior nodes.
#[derive(Debug, Clone, Copy)]
pub struct ConstantExtension<'a> {
    f: &'a NodeField,
}

pub fn extend_constant(f: &NodeField) -> ConstantExtension<'_> {
    ConstantExtension { f }
}

impl ConstantExtension<'_> {
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let m = self.f.mesh();
        let h = m.h();
        let i = (x1 / h + 0.5).floor();
        let j = (x2 / h + 0.5).floor();
        let n = m.n() as f64;
        if i < 1.0 || j < 1.0 || i > n || j > n {
            return 0.0;
        }
        self.f.get(i as usize, j as usize)
    }
}

/// Where an L² comparison with e_h⁰ is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// All of (0,1)².
    Full,
    /// Union of interior cells, [h/2, 1−h/2]².
    Cells,
}

/// Integrate g over [0,1]² on the h/2-aligned sub-squares with a tensor Gauss rule.
/// Both extensions are polynomial on each sub-square.
fn integrate_halfcells<G: Fn(f64, f64) -> f64>(mesh: &Mesh, lo: f64, hi: f64, pts: usize, g: G) -> f64 {
    let gl = GaussLegendre::new(pts);
    let hh = 0.5 * mesh.h();
    let cells = ((hi - lo) / hh).round() as usize;
    let mut s = Sum::new();
    for a in 0..cells {
        let x0 = lo + a as f64 * hh;
        for b in 0..cells {
            let y0 = lo + b as f64 * hh;
            for (u, wu) in gl.nodes.iter().zip(&gl.weights) {
                let x = x0 + 0.5 * hh * (1.0 + u);
                for (v, wv) in gl.nodes.iter().zip(&gl.weights) {
                    let y = y0 + 0.5 * hh * (1.0 + v);
                    s.add(wu * wv * g(x, y));
                }
            }
        }
    }
    s.value() * 0.25 * hh * hh
}

/// ‖e_h⁰ f − q‖_{L²} over the requested support.
pub fn constant_extension_l2_error<Q: Fn(f64, f64) -> f64>(f: &NodeField, q: Q, support: Support) -> f64 {
    let m = *f.mesh();
    let e = extend_constant(f);
    let (lo, hi) = match support {
        Support::Full => (0.0, 1.0),
        Support::Cells => (0.5 * m.h(), 1.0 - 0.5 * m.h()),
    };
    integrate_halfcells(&m, lo, hi, 4, |x, y| {
        let d = e.eval(x, y) - q(x, y);
        d * d
    })
    .sqrt()
}

/// ‖e_h⁰ f‖_{L²(Ω)} by quadrature.
pub fn constant_extension_l2(f: &NodeField) -> f64 {
    constant_extension_l2_error(f, |_, _| 0.0, Support::Full)
}

/// ‖e_h f − e_h⁰ f‖_{L²(Ω)} by quadrature.
pub fn extension_gap_l2(f: &NodeField) -> f64 {
    let m = *f.mesh();
    let a = extend_affine(f);
    let c = extend_constant(f);
    integrate_halfcells(&m, 0.0, 1.0, 3, |x, y| {
        let d = a.eval(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)).unwrap_or(0.0) - c.eval(x, y);
        d * d
    })
    .sqrt()
}

fn finite(v: f64, i: usize, j: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("handle not evaluable near node ({i}, {j})")))
    }
}

/// r_h: nodal samples.
pub fn restrict_sample<F: Fn(f64, f64) -> f64>(mesh: Mesh, f: F) -> Result<NodeField> {
    let out = NodeField::from_fn(mesh, f);
    for (k, v) in out.values().iter().enumerate() {
        finite(*v, k / mesh.side(), k % mesh.side())?;
    }
    Ok(out)
}

/// r̃_h: average over the cell [(i−½)h,(i+½)h]×[(j−½)h,(j+½)h] clipped to [0,1]²,
/// by a `pts`×`pts` Gauss rule.
pub fn restrict_cell_average<F: Fn(f64, f64) -> f64>(mesh: Mesh, f: F, pts: usize) -> Result<NodeField> {
    let gl = GaussLegendre::new(pts);
    let h = mesh.h();
    let s = mesh.side();
    let mut out = NodeField::zeros(mesh);
    for i in 0..s {
        let a1 = (((i as f64) - 0.5) * h).max(0.0);
        let b1 = (((i as f64) + 0.5) * h).min(1.0);
        for j in 0..s {
            let a2 = (((j as f64) - 0.5) * h).max(0.0);
            let b2 = (((j as f64) + 0.5) * h).min(1.0);
            let mut acc = Sum::new();
            for (u, wu) in gl.nodes.iter().zip(&gl.weights) {
                let x = a1 + 0.5 * (b1 - a1) * (1.0 + u);
                for (v, wv) in gl.nodes.iter().zip(&gl.weights) {
                    let y = a2 + 0.5 * (b2 - a2) * (1.0 + v);
                    acc.add(wu * wv * f(x, y));
                }
            }
            // weights sum to 4 on [-1,1]²
            out.set(i, j, finite(acc.value() * 0.25, i, j)?);
        }
    }
    Ok(out)
}

/// r_h^∂: average of f over the boundary segment of length h centred at each boundary node.
pub fn restrict_boundary_average<F: Fn(f64, f64) -> f64>(mesh: Mesh, f: F, pts: usize) -> Result<BoundaryTrace> {
    let gl = GaussLegendre::new(pts);
    let h = mesh.h();
    let mut t = BoundaryTrace::zeros(mesh);
    for e in Edge::ALL {
        for m in 1..=mesh.n() {
            let c = mesh.x(m);
            let mut acc = Sum::new();
            for (u, w) in gl.nodes.iter().zip(&gl.weights) {
                let s = c + 0.5 * h * u;
                let (x1, x2) = match e {
                    Edge::X1Plus => (1.0, s),
                    Edge::X1Minus => (0.0, s),
                    Edge::X2Plus => (s, 1.0),
                    Edge::X2Minus => (s, 0.0),
                };
                acc.add(w * f(x1, x2));
            }
            t.set(e, m, finite(0.5 * acc.value(), m, 0)?);
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(mesh: Mesh, seed: u64) -> NodeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NodeField::from_values(mesh, (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mesh_size_and_indexing() {
        let m = Mesh::new(3).unwrap();
        assert_eq!(m.h(), 0.25);
        assert!((m.h() * 4.0 - 1.0).abs() <= f64::EPSILON);
        assert_eq!(m.idx(1, 2), 7);
        assert!(Mesh::new(1).is_err());
        assert!(m.is_corner(0, 4) && !m.is_boundary(0, 4) && m.is_boundary(0, 2));
    }

    #[test]
    fn interior_integral_examples() {
        let m = Mesh::new(3).unwrap();
        assert_eq!(integrate_interior(&NodeField::zeros(m)), 0.0);
        assert!((integrate_interior(&NodeField::constant(m, 1.0)) - 0.5625).abs() < 1e-15);
        let f = random_field(m, 3).with_zero_boundary();
        let mut direct = 0.0;
        for i in 1..=3 {
            for j in 1..=3 {
                direct += f.get(i, j) * 0.0625;
            }
        }
        assert!((integrate_interior(&f) - direct).abs() < 1e-15);
        let full = SubsetMask::interior(m, &Region { rects: vec![Rect { x1: (0.0, 1.0), x2: (0.0, 1.0) }] });
        assert_eq!(integrate_interior_masked(&f, &full).unwrap(), integrate_interior(&f));
    }

    #[test]
    fn staggered_integral_examples() {
        let m = Mesh::new(3).unwrap();
        let mut one = StaggeredField::zeros(m, Axis::X1);
        for (i, j) in one.clone().indices() {
            one.set(i, j, 1.0);
        }
        assert_eq!(one.len(), 12);
        assert!((integrate_staggered(&one, None).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(integrate_staggered(&StaggeredField::zeros(m, Axis::X2), None).unwrap(), 0.0);
        let full = SubsetMask::interior(m, &Region { rects: vec![Rect { x1: (-1.0, 2.0), x2: (-1.0, 2.0) }] });
        assert_eq!(integrate_staggered(&one, Some(&full)).unwrap(), integrate_staggered(&one, None).unwrap());
    }

    #[test]
    fn boundary_integral_examples() {
        let m = Mesh::new(3).unwrap();
        let mut t = BoundaryTrace::zeros(m);
        t.values_mut().iter_mut().for_each(|v| *v = 1.0);
        assert!((integrate_boundary(&t, None).unwrap() - 3.0).abs() < 1e-15);
        let e = SubsetMask::edge(m, Edge::X1Plus);
        assert!((integrate_boundary(&t, Some(&e)).unwrap() - 0.75).abs() < 1e-15);
        let empty = SubsetMask::boundary(m, &BoundarySet { pieces: vec![] });
        assert_eq!(integrate_boundary(&t, Some(&empty)).unwrap(), 0.0);
        let other = SubsetMask::edge(Mesh::new(4).unwrap(), Edge::X1Plus);
        assert!(matches!(integrate_boundary(&t, Some(&other)), Err(Error::MeshMismatch { .. })));
        for n in [2, 7, 31] {
            let m = Mesh::new(n).unwrap();
            let mut t = BoundaryTrace::zeros(m);
            t.values_mut().iter_mut().for_each(|v| *v = 1.0);
            assert!((integrate_boundary(&t, None).unwrap() - (4.0 - 4.0 * m.h())).abs() < 1e-13);
        }
    }

    #[test]
    fn norm_examples() {
        let m = Mesh::new(5).unwrap();
        for sp in [Space::Lp(1.0), Space::Lp(2.0), Space::Linf, Space::H1, Space::H10, Space::H2] {
            assert_eq!(norm(&NodeField::zeros(m), sp).unwrap(), 0.0);
        }
        assert_eq!(norm(&NodeField::constant(m, -2.5), Space::Linf).unwrap(), 2.5);
        assert!(norm(&NodeField::zeros(m), Space::Lp(0.5)).is_err());
        // f = x1: gradient only along x1 and equal to 1
        let f = NodeField::from_fn(m, |x, _| x);
        let h = m.h();
        let mut l2 = 0.0;
        for i in 0..m.side() {
            for _ in 0..m.side() {
                l2 += h * h * (i as f64 * h).powi(2);
            }
        }
        let expect = l2 + h * h * (m.n() as f64 + 1.0) * m.n() as f64;
        assert!((norm(&f, Space::H1).unwrap().powi(2) - expect).abs() < 1e-13);
    }

    #[test]
    fn affine_extension_reproduces_bilinear() {
        let m = Mesh::new(6).unwrap();
        let f = NodeField::from_fn(m, |x, y| x * y);
        let e = extend_affine(&f);
        for &(x, y) in &[(0.1, 0.9), (0.33, 0.71), (1.0, 1.0), (0.0, 0.5)] {
            assert!((e.eval(x, y).unwrap() - x * y).abs() < 1e-14);
        }
        assert!(e.eval(1.2, 0.0).is_err());
        let g = random_field(m, 9);
        let h = m.h();
        let ge = extend_affine(&g);
        let mid = ge.eval(2.5 * h, 3.5 * h).unwrap();
        let avg = 0.25 * (g.get(2, 3) + g.get(3, 3) + g.get(2, 4) + g.get(3, 4));
        assert!((mid - avg).abs() < 1e-14);
    }

    #[test]
    fn affine_interpolation_error_bound() {
        use std::f64::consts::PI;
        for n in [8, 16, 32] {
            let m = Mesh::new(n).unwrap();
            let f = NodeField::from_fn(m, |x, _| (PI * x).sin());
            let e = extend_affine(&f);
            let mut err: f64 = 0.0;
            for k in 0..=400 {
                let x = k as f64 / 400.0;
                err = err.max((e.eval(x, 0.3).unwrap() - (PI * x).sin()).abs());
            }
            assert!(err <= PI * PI * m.h() * m.h() / 8.0 + 1e-15);
        }
    }

    #[test]
    fn constant_extension_norm_identity() {
        let m = Mesh::new(7).unwrap();
        for seed in 0..100 {
            let f = random_field(m, seed);
            let a = constant_extension_l2(&f);
            let b = norm(&f, Space::Lp(2.0)).unwrap();
            assert!((a - b).abs() < 1e-12 * (1.0 + b), "seed {seed}");
        }
        let z = NodeField::zeros(m);
        assert_eq!(extend_constant(&z).eval(0.4, 0.4), 0.0);
    }

    #[test]
    fn constant_extension_half_open_cells() {
        let m = Mesh::new(7).unwrap();
        let f = NodeField::from_index_fn(m, |i, j| (10 * i + j) as f64);
        let e = extend_constant(&f);
        let h = m.h();
        let eps = 1e-9;
        assert_eq!(e.eval(3.0 * h + 0.5 * h - eps, 2.0 * h), f.get(3, 2));
        assert_eq!(e.eval(3.0 * h + 0.5 * h + eps, 2.0 * h), f.get(4, 2));
        assert_eq!(e.eval(0.1 * h, 0.5), 0.0);
    }

    #[test]
    fn extension_gap_first_order() {
        use std::f64::consts::PI;
        let mut hs = vec![];
        let mut errs = vec![];
        for n in [15, 31, 63] {
            let m = Mesh::new(n).unwrap();
            let f = NodeField::from_fn(m, |x, y| (PI * x).sin() * (PI * y).sin());
            hs.push(m.h());
            errs.push(extension_gap_l2(&f));
        }
        let rate = crate::num::log_slope(&hs, &errs);
        assert!(rate >= 0.9, "rate {rate}");
    }

    #[test]
    fn restriction_examples() {
        let m = Mesh::new(5).unwrap();
        let s = restrict_sample(m, |x, y| x * x + y).unwrap();
        assert_eq!(s.get(2, 3), m.x(2).powi(2) + m.x(3));
        let c = restrict_cell_average(m, |_, _| 3.5, 4).unwrap();
        assert!(c.values().iter().all(|v| (v - 3.5).abs() < 1e-14));
        let a = restrict_cell_average(m, |x, _| x, 4).unwrap();
        for i in 1..=m.n() {
            assert!((a.get(i, 2) - m.x(i)).abs() < 1e-14);
        }
        let b = restrict_boundary_average(m, |x, y| x + 2.0 * y, 4).unwrap();
        assert!((b.get(Edge::X1Plus, 2) - (1.0 + 2.0 * m.x(2))).abs() < 1e-14);
        assert!(restrict_sample(m, |x, _| 1.0 / (x - x)).is_err());
    }

    #[test]
    fn staggered_mask_rule() {
        let m = Mesh::new(9).unwrap();
        let r = Region { rects: vec![Rect { x1: (0.75, 1.0), x2: (0.0, 1.0) }] };
        let mk = SubsetMask::interior(m, &r);
        // node x1 = 0.7: [0.7, 0.8] meets (0.75, 1)
        assert!(mk.contains_staggered(Axis::X1, 7, 3));
        assert!(!mk.contains_staggered(Axis::X1, 6, 3));
        assert!(!mk.contains_node(7, 3) && mk.contains_node(8, 3));
    }
}
