//! Slabs, walls and the order-by-order construction of consistent
//! structures on polarized tropical surfaces.
//!
//! Slab functions are stored in the ring at a point of the edge seen from
//! its lower-id endpoint `v+`: vertex chart of `v+`, cells `[sigma+,
//! sigma-]`. Points on the other side of the singular point (the midpoint of
//! an edge with `kappa != 0`) see `z^{-kappa d} f` instead, transported
//! through the chart of `sigma+`. Walls are stored in the chart of their
//! cell, with `h` equal to the order on that cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, CoeffRing, Exponent, OrderContext, TermJson, TruncatedPoly};
use crate::geometry::{Edge, GeometryError, ManifoldJson, MonodromyEntry, Polarization, TropicalManifold};
use crate::lattice::{self, fmt_q, parse_q, q, qr, Q};
use crate::logauto::{LogAutoError, LogAutomorphism};
use crate::normalize::{normalize_slab, NormalizeError, TlogContext, VertexClass};
use crate::samples::Section;
use crate::scatter::{self, CompletionOptions, JointContext, Ray, ScatterError, ScatteringDiagram};

#[derive(Debug, Error)]
pub enum StructureError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    LogAuto(#[from] LogAutoError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error("at {site}: {source}")]
    Scatter { site: String, source: ScatterError },
    #[error("multiplicative condition fails at vertex {vertex}")]
    MultiplicativeConditionFailed { vertex: usize },
    #[error("section on edge {edge:?} is invalid: {reason}")]
    BadSection { edge: [usize; 2], reason: String },
    #[error("cycle condition fails at {site}: {defect}")]
    CycleConditionFailed { site: String, defect: String },
    #[error("not consistent to order {order} at {sites:?}")]
    Inconsistent { order: i64, sites: Vec<String> },
    #[error("orders {order} and {next} are not compatible: {reason}")]
    Incompatible { order: i64, next: i64, reason: String },
    #[error("non-integral coefficient in {0}")]
    NotIntegral(String),
    #[error("in order {order}: {source}")]
    AtOrder { order: i64, source: Box<StructureError> },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("malformed structure: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StructureError>;

type Point = [Q; 2];

/// `(slab edge, piece index, added terms)`.
type SlabUpdate = ([usize; 2], usize, TruncatedPoly);

fn qpt(v: &[i64]) -> Point {
    [q(v[0]), q(v[1])]
}

fn psub(a: &Point, b: &Point) -> Point {
    [&a[0] - &b[0], &a[1] - &b[1]]
}

fn padd(a: &Point, b: &Point) -> Point {
    [&a[0] + &b[0], &a[1] + &b[1]]
}

fn pscale(a: &Point, s: &Q) -> Point {
    [&a[0] * s, &a[1] * s]
}

fn pcross(a: &Point, b: &Point) -> Q {
    &a[0] * &b[1] - &a[1] * &b[0]
}

fn pdot(a: &Point, b: &Point) -> Q {
    &a[0] * &b[0] + &a[1] * &b[1]
}

fn icross(a: &[i64], b: &[i64]) -> i64 {
    a[0] * b[1] - a[1] * b[0]
}

fn arr2(v: &[i64]) -> [i64; 2] {
    [v[0], v[1]]
}

fn fmt_point(p: &Point) -> String {
    format!("({}, {})", p[0], p[1])
}

/// Point of the surface up to the choice of chart.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Vertex(usize),
    /// `s` in `(0, 1)` runs from the lower-id endpoint to the other one.
    Edge { edge: [usize; 2], s: Q },
    Interior { cell: usize, pos: Point },
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Vertex(v) => write!(f, "vertex {v}"),
            Site::Edge { edge, s } => write!(f, "edge {}-{} at {}", edge[0], edge[1], s),
            Site::Interior { cell, pos } => write!(f, "cell {cell} at {}", fmt_point(pos)),
        }
    }
}

/// Wall `(base - R_{>=0} mbar) cap sigma` carrying `1 + c z^m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wall {
    pub cell: usize,
    pub base: Point,
    pub top: Point,
    pub m: Exponent,
    pub c: Q,
}

impl Wall {
    pub fn order(&self) -> i64 {
        self.m.h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlabPiece {
    pub start: Q,
    pub end: Q,
    pub function: TruncatedPoly,
}

/// Slab on an interior edge, cut into pieces along the edge parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Slab {
    pub edge: [usize; 2],
    pub pieces: Vec<SlabPiece>,
}

impl Slab {
    fn piece_at(&self, s: &Q) -> Option<usize> {
        self.pieces.iter().position(|p| &p.start <= s && s < &p.end).or_else(|| (s == &q(1)).then(|| self.pieces.len() - 1))
    }

    fn split_at(&mut self, s: &Q) {
        if let Some(i) = self.pieces.iter().position(|p| &p.start < s && s < &p.end) {
            let mut right = self.pieces[i].clone();
            right.start = s.clone();
            self.pieces[i].end = s.clone();
            self.pieces.insert(i + 1, right);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub order: i64,
    pub ring: CoeffRing,
    pub slabs: Vec<Slab>,
    pub walls: Vec<Wall>,
}

impl Structure {
    pub fn slab(&self, edge: [usize; 2]) -> Option<&Slab> {
        self.slabs.iter().find(|s| s.edge == edge)
    }

    fn slab_mut(&mut self, edge: [usize; 2]) -> Option<&mut Slab> {
        self.slabs.iter_mut().find(|s| s.edge == edge)
    }

    /// True when every slab and wall coefficient is an integer.
    pub fn is_integral(&self) -> bool {
        self.slabs.iter().flat_map(|s| &s.pieces).all(|p| p.function.is_integral()) && self.walls.iter().all(|w| w.c.is_integer())
    }
}

/// Order-zero input: sections per edge-to-vertex incidence. The key `[v, w]`
/// is the section for the endpoint `v` of the edge `vw`.
#[derive(Clone, Debug, Default)]
pub struct GluingInput {
    pub sections: BTreeMap<[usize; 2], Section>,
    pub ring: CoeffRing,
}

impl GluingInput {
    pub fn new(sections: BTreeMap<[usize; 2], Section>, ring: CoeffRing) -> Self {
        GluingInput { sections, ring }
    }
}

/// Piecewise multiplicative map: per cell, the values of a homomorphism
/// `Lambda_sigma -> Q^*` on the basis of the cell chart.
#[derive(Clone, Debug, Default)]
pub struct PiecewiseMultiplicative {
    pub values: BTreeMap<usize, [Q; 2]>,
}

impl PiecewiseMultiplicative {
    pub fn eval(&self, cell: usize, m: &[i64]) -> Option<Q> {
        let v = self.values.get(&cell)?;
        Some(v[0].pow(m[0] as i32) * v[1].pow(m[1] as i32))
    }
}

fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        (a.signum(), 0, a.abs())
    } else {
        let (x, y, g) = ext_gcd(b, a.rem_euclid(b));
        (y, x - a.div_euclid(b) * y, g)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct JointReport {
    pub site: String,
    pub consistent: bool,
    pub defect: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub order: i64,
    pub joints: Vec<JointReport>,
}

impl ConsistencyReport {
    pub fn passes(&self) -> bool {
        self.joints.iter().all(|j| j.consistent)
    }

    pub fn failures(&self) -> Vec<&JointReport> {
        self.joints.iter().filter(|j| !j.consistent).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

/// Result of Step I: the structure with its new walls, and the slab
/// changes requested by vertex joints, in the stored chart of each slab.
#[derive(Clone, Debug)]
pub struct StepOne {
    pub structure: Structure,
    pub vertex_changes: BTreeMap<(usize, [usize; 2]), TruncatedPoly>,
}

enum JointInfo {
    Vertex { cuts: Vec<[usize; 2]> },
    Edge { edge: [usize; 2], v: usize, before: usize, after: usize },
    Interior,
}

struct Joint {
    diagram: ScatteringDiagram,
    info: JointInfo,
}

/// Polarized tropical surface with its monodromy data.
#[derive(Clone, Debug)]
pub struct Surface {
    pub manifold: TropicalManifold,
    pub polarization: Polarization,
    edges: Vec<Edge>,
    monodromy: BTreeMap<[usize; 2], MonodromyEntry>,
    interior_vertex: Vec<bool>,
}

impl Surface {
    pub fn new(manifold: TropicalManifold, polarization: Polarization) -> Result<Self> {
        if manifold.dim != 2 {
            return Err(StructureError::Unsupported("structures are built on surfaces only".into()));
        }
        polarization.validate(&manifold)?;
        let edges = manifold.edges();
        let mut monodromy = BTreeMap::new();
        for e in edges.iter().filter(|e| e.is_interior()) {
            monodromy.insert(e.vertices, crate::geometry::monodromy(&manifold, e.vertices[0], e.vertices[1])?);
        }
        let interior_vertex = (0..manifold.vertex_count).map(|v| !manifold.is_boundary_vertex(v)).collect();
        Ok(Surface { manifold, polarization, edges, monodromy, interior_vertex })
    }

    pub fn is_interior_vertex(&self, v: usize) -> bool {
        self.interior_vertex[v]
    }

    pub fn monodromy(&self, edge: [usize; 2]) -> Option<&MonodromyEntry> {
        self.monodromy.get(&edge)
    }

    pub fn interior_edges(&self) -> Vec<[usize; 2]> {
        self.monodromy.keys().copied().collect()
    }

    fn mono(&self, edge: [usize; 2]) -> Result<&MonodromyEntry> {
        self.monodromy.get(&edge).ok_or_else(|| StructureError::Malformed(format!("no interior edge {edge:?}")))
    }

    fn slope(&self, v: usize, cell: usize) -> &[i64] {
        &self.polarization.slopes[v][&cell]
    }

    /// Exponent in the chart of `cell` (with `h = ord_cell`) seen in the
    /// vertex chart of `v`.
    pub fn cell_to_vertex(&self, v: usize, cell: usize, e: &Exponent) -> Exponent {
        let mbar = self.manifold.to_vertex_chart(v, cell, &e.mbar);
        let h = e.h + lattice::dot(self.slope(v, cell), &mbar);
        Exponent::new(mbar, h)
    }

    pub fn vertex_to_cell(&self, v: usize, cell: usize, e: &Exponent) -> Exponent {
        let mbar = self.manifold.from_vertex_chart(v, cell, &e.mbar);
        let h = e.h - lattice::dot(self.slope(v, cell), &e.mbar);
        Exponent::new(mbar, h)
    }

    /// Change of vertex along a slab: from the `v+` chart to the `v-` chart,
    /// multiplying by `z^{-kappa d}`.
    pub fn plus_to_minus(&self, mono: &MonodromyEntry, e: &Exponent) -> Exponent {
        let mut c = self.vertex_to_cell(mono.v_plus, mono.sigma_plus, e);
        c.mbar = lattice::sub(&c.mbar, &lattice::scale(&mono.d, mono.kappa));
        self.cell_to_vertex(mono.v_minus, mono.sigma_plus, &c)
    }

    pub fn minus_to_plus(&self, mono: &MonodromyEntry, e: &Exponent) -> Exponent {
        let mut c = self.vertex_to_cell(mono.v_minus, mono.sigma_plus, e);
        c.mbar = lattice::add(&c.mbar, &lattice::scale(&mono.d, mono.kappa));
        self.cell_to_vertex(mono.v_plus, mono.sigma_plus, &c)
    }

    /// Ring at vertex `v`: slopes of all cells at `v`, in increasing cell order.
    pub fn vertex_context(&self, v: usize, k: i64, ring: CoeffRing) -> (Arc<OrderContext>, Vec<usize>) {
        let cells = self.manifold.cells_at(v);
        let slopes = cells.iter().map(|&c| self.slope(v, c).to_vec()).collect();
        (OrderContext::full(2, slopes, k).with_ring(ring), cells)
    }

    /// Ring at a point of the edge on the component of `v`.
    pub fn edge_context(&self, edge: [usize; 2], v: usize, k: i64, ring: CoeffRing) -> Result<Arc<OrderContext>> {
        let mono = self.mono(edge)?;
        let slopes = vec![self.slope(v, mono.sigma_plus).to_vec(), self.slope(v, mono.sigma_minus).to_vec()];
        Ok(OrderContext::full(2, slopes, k).with_ring(ring))
    }

    /// Endpoint whose chart describes the point `s` of the edge.
    pub fn component_vertex(&self, edge: [usize; 2], s: &Q) -> Result<usize> {
        let mono = self.mono(edge)?;
        let half = qr(1, 2);
        if mono.kappa == 0 || s < &half {
            Ok(mono.v_plus)
        } else if s > &half {
            Ok(mono.v_minus)
        } else {
            Err(StructureError::Unsupported(format!("joint on the singular point of edge {edge:?}")))
        }
    }

    /// Stored slab function seen from endpoint `v`, in `ctx`.
    pub fn slab_function_at(&self, edge: [usize; 2], v: usize, f: &TruncatedPoly, ctx: &Arc<OrderContext>) -> Result<TruncatedPoly> {
        let mono = self.mono(edge)?;
        if v == mono.v_plus {
            Ok(f.map_exponents(ctx, |e| e.clone())?)
        } else {
            Ok(f.map_exponents(ctx, |e| self.plus_to_minus(mono, e))?)
        }
    }

    /// Inverse of [`Surface::slab_function_at`].
    fn slab_function_from(&self, edge: [usize; 2], v: usize, f: &TruncatedPoly, ctx: &Arc<OrderContext>) -> Result<TruncatedPoly> {
        let mono = self.mono(edge)?;
        if v == mono.v_plus {
            Ok(f.map_exponents(ctx, |e| e.clone())?)
        } else {
            Ok(f.map_exponents(ctx, |e| self.minus_to_plus(mono, e))?)
        }
    }

    /// Primitive direction towards `v-` in the chart of `v`.
    fn toward_minus(&self, mono: &MonodromyEntry, v: usize) -> [i64; 2] {
        arr2(&self.manifold.to_vertex_chart(v, mono.sigma_plus, &mono.d))
    }

    /// Direction of the edge leaving `v`, in the chart of `v`.
    fn leaving(&self, mono: &MonodromyEntry, v: usize) -> [i64; 2] {
        let d = self.toward_minus(mono, v);
        if v == mono.v_plus {
            d
        } else {
            [-d[0], -d[1]]
        }
    }

    fn position(&self, cell: usize, v: usize) -> Point {
        qpt(&self.manifold.vertex_position(cell, v))
    }

    fn edge_point(&self, cell: usize, edge: [usize; 2], s: &Q) -> Point {
        let a = self.position(cell, edge[0]);
        let b = self.position(cell, edge[1]);
        padd(&a, &pscale(&psub(&b, &a), s))
    }

    /// Canonical site of a point given in the chart of `cell`.
    pub fn locate(&self, cell: usize, p: &Point) -> Site {
        let c = &self.manifold.cells[cell];
        for &v in &c.vertex_ids {
            if &self.position(cell, v) == p {
                return Site::Vertex(v);
            }
        }
        for e in self.edges.iter().filter(|e| e.cells.contains(&cell)) {
            let a = self.position(cell, e.vertices[0]);
            let b = self.position(cell, e.vertices[1]);
            let (ab, ap) = (psub(&b, &a), psub(p, &a));
            if pcross(&ab, &ap).is_zero() {
                let s = pdot(&ap, &ab) / pdot(&ab, &ab);
                if s.is_positive() && s < q(1) {
                    return Site::Edge { edge: e.vertices, s };
                }
            }
        }
        Site::Interior { cell, pos: p.clone() }
    }

    fn is_joint(&self, site: &Site) -> bool {
        match site {
            Site::Vertex(v) => self.interior_vertex[*v],
            Site::Edge { edge, .. } => self.monodromy.contains_key(edge),
            Site::Interior { .. } => true,
        }
    }

    /// End of the wall leaving `base` in direction `-mbar` inside `cell`.
    fn wall_top(&self, cell: usize, base: &Point, mbar: &[i64]) -> Result<Point> {
        let dir = [-q(mbar[0]), -q(mbar[1])];
        let mut best: Option<Q> = None;
        for (a, c) in self.manifold.cells[cell].polyhedron.facets() {
            let a = qpt(&a);
            let rate = pdot(&a, &dir);
            if rate.is_negative() {
                let s = (pdot(&a, base) - c) / -rate;
                best = Some(best.map_or(s.clone(), |b| if s < b { s.clone() } else { b }));
            }
        }
        match best {
            Some(s) if s.is_positive() => Ok(padd(base, &pscale(&dir, &s))),
            _ => Err(StructureError::Malformed(format!("wall direction {mbar:?} leaves cell {cell} at {}", fmt_point(base)))),
        }
    }

    /// Largest order of the wall monomial over the cells at its top; `None`
    /// on the boundary.
    pub fn order_at_top(&self, w: &Wall) -> Result<Option<i64>> {
        let site = self.locate(w.cell, &w.top);
        let (v, cells) = match &site {
            Site::Vertex(v) if self.interior_vertex[*v] => (*v, self.manifold.cells_at(*v)),
            Site::Edge { edge, s } if self.monodromy.contains_key(edge) => {
                let m = self.mono(*edge)?;
                (self.component_vertex(*edge, s)?, vec![m.sigma_plus, m.sigma_minus])
            }
            Site::Interior { .. } => return Ok(Some(w.m.h)),
            _ => return Ok(None),
        };
        let e = self.cell_to_vertex(v, w.cell, &w.m);
        Ok(cells.iter().map(|&c| e.h - lattice::dot(self.slope(v, c), &e.mbar)).max())
    }

    // -- order zero ----------------------------------------------------

    fn section_terms(&self, edge: [usize; 2], v: usize, terms: &Section, ctx: &Arc<OrderContext>) -> Result<TruncatedPoly> {
        let mono = self.mono(edge)?;
        let mut f = TruncatedPoly::zero(ctx);
        for (mbar, c) in terms {
            if mbar.len() != 2 || icross(mbar, &mono.d) != 0 {
                return Err(StructureError::BadSection { edge, reason: format!("exponent {mbar:?} is not along the edge") });
            }
            let e = self.cell_to_vertex(v, mono.sigma_plus, &Exponent::new(mbar.clone(), 0));
            let stored = if v == mono.v_plus { e } else { self.minus_to_plus(mono, &e) };
            f = &f + &TruncatedPoly::monomial(ctx, stored, c.clone()).map_err(|e| StructureError::BadSection { edge, reason: e.to_string() })?;
        }
        Ok(f)
    }

    /// Order-zero slab function of each interior edge in the stored chart.
    fn sections(&self, g: &GluingInput) -> Result<BTreeMap<[usize; 2], TruncatedPoly>> {
        let mut out = BTreeMap::new();
        for key in g.sections.keys() {
            let edge = [key[0].min(key[1]), key[0].max(key[1])];
            if !self.monodromy.contains_key(&edge) {
                return Err(StructureError::BadSection { edge, reason: "not an interior edge".into() });
            }
        }
        for (&edge, mono) in &self.monodromy {
            let ctx = self.edge_context(edge, mono.v_plus, 0, g.ring)?;
            let plus = g.sections.get(&[mono.v_plus, mono.v_minus]).map(|t| self.section_terms(edge, mono.v_plus, t, &ctx)).transpose()?;
            let minus = g.sections.get(&[mono.v_minus, mono.v_plus]).map(|t| self.section_terms(edge, mono.v_minus, t, &ctx)).transpose()?;
            let f = match (plus, minus) {
                (Some(a), Some(b)) if a != b => {
                    return Err(StructureError::BadSection { edge, reason: "sections at the two endpoints do not match".into() })
                }
                (Some(a), _) => a,
                (None, Some(b)) => b,
                (None, None) => TruncatedPoly::one(&ctx),
            };
            out.insert(edge, f);
        }
        Ok(out)
    }

    /// Interior vertices where the product of `d_rho (x) f_rho(v)` is not 1.
    pub fn multiplicative_failures(&self, g: &GluingInput) -> Result<Vec<usize>> {
        let fs = self.sections(g)?;
        let mut bad = vec![];
        for v in (0..self.manifold.vertex_count).filter(|&v| self.interior_vertex[v]) {
            let mut prod = [Q::one(), Q::one()];
            for (&edge, mono) in self.monodromy.iter().filter(|(e, _)| e.contains(&v)) {
                let (ctx, _) = self.vertex_context(v, 0, g.ring);
                let c = self.slab_function_at(edge, v, &fs[&edge], &ctx)?.constant_term();
                if c.is_zero() {
                    bad.push(v);
                    break;
                }
                let u = self.leaving(mono, v);
                let dcheck = [-u[1], u[0]];
                for j in 0..2 {
                    prod[j] = &prod[j] * c.pow(dcheck[j] as i32);
                }
            }
            if !prod.iter().all(|x| x.is_one()) && !bad.contains(&v) {
                bad.push(v);
            }
        }
        Ok(bad)
    }

    /// One slab per interior edge carrying its section.
    pub fn initial_structure(&self, g: &GluingInput) -> Result<Structure> {
        if let Some(&vertex) = self.multiplicative_failures(g)?.first() {
            return Err(StructureError::MultiplicativeConditionFailed { vertex });
        }
        let fs = self.sections(g)?;
        let mut slabs = vec![];
        for (edge, f) in fs {
            let mono = self.mono(edge)?;
            for v in edge {
                let (ctx, _) = self.vertex_context(v, 0, g.ring);
                let c = self.slab_function_at(edge, v, &f, &ctx).map(|h| h.constant_term());
                if !matches!(c, Ok(ref c) if c.is_one()) {
                    return Err(StructureError::BadSection { edge, reason: format!("constant term at vertex {v} is not 1") });
                }
            }
            let _ = mono;
            slabs.push(Slab { edge, pieces: vec![SlabPiece { start: q(0), end: q(1), function: f }] });
        }
        Ok(Structure { order: 0, ring: g.ring, slabs, walls: vec![] })
    }

    // -- joints ----------------------------------------------------------

    /// Joints of the structure: interior vertices, wall endpoints, wall
    /// crossings and slab break points.
    pub fn joints(&self, s: &Structure) -> Vec<Site> {
        let mut out = BTreeSet::new();
        for v in 0..self.manifold.vertex_count {
            out.insert(Site::Vertex(v));
        }
        for w in &s.walls {
            out.insert(self.locate(w.cell, &w.base));
            out.insert(self.locate(w.cell, &w.top));
        }
        for (i, a) in s.walls.iter().enumerate() {
            for b in s.walls.iter().skip(i + 1).filter(|b| b.cell == a.cell) {
                let (r, t) = (psub(&a.top, &a.base), psub(&b.top, &b.base));
                let den = pcross(&r, &t);
                if den.is_zero() {
                    continue;
                }
                let w = psub(&b.base, &a.base);
                let x = pcross(&w, &t) / &den;
                let y = pcross(&w, &r) / &den;
                let unit = |z: &Q| !z.is_negative() && z <= &q(1);
                if unit(&x) && unit(&y) {
                    out.insert(self.locate(a.cell, &padd(&a.base, &pscale(&r, &x))));
                }
            }
        }
        for sl in &s.slabs {
            for p in sl.pieces.iter().skip(1) {
                out.insert(Site::Edge { edge: sl.edge, s: p.start.clone() });
            }
        }
        out.into_iter().filter(|x| self.is_joint(x)).collect()
    }

    fn refine(&self, s: &mut Structure, sites: &[Site]) {
        for site in sites {
            if let Site::Edge { edge, s: t } = site {
                if let Some(sl) = s.slab_mut(*edge) {
                    sl.split_at(t);
                }
            }
        }
    }

    fn wall_touches(&self, w: &Wall, site: &Site) -> (bool, bool, bool) {
        let base = &self.locate(w.cell, &w.base) == site;
        let top = &self.locate(w.cell, &w.top) == site;
        let through = match site {
            Site::Interior { cell, pos } if *cell == w.cell && !base && !top => {
                let (r, p) = (psub(&w.top, &w.base), psub(pos, &w.base));
                pcross(&r, &p).is_zero() && pdot(&r, &p).is_positive() && pdot(&r, &p) < pdot(&r, &r)
            }
            _ => false,
        };
        (base, top, through)
    }

    fn joint(&self, s: &Structure, site: &Site, k: i64) -> Result<Joint> {
        let wrap = |e: ScatterError| StructureError::Scatter { site: site.to_string(), source: e };
        match site {
            Site::Vertex(v) => {
                let v = *v;
                let (ctx, _) = self.vertex_context(v, k, s.ring);
                let mut cuts = vec![];
                let mut fns = vec![];
                let mut dirs = vec![];
                for sl in s.slabs.iter().filter(|sl| sl.edge.contains(&v)) {
                    let mono = self.mono(sl.edge)?;
                    let piece = if v == mono.v_plus { sl.pieces.first() } else { sl.pieces.last() };
                    let piece = piece.ok_or_else(|| StructureError::Malformed(format!("slab {:?} has no pieces", sl.edge)))?;
                    fns.push(self.slab_function_at(sl.edge, v, &piece.function, &ctx)?);
                    dirs.push(self.leaving(mono, v));
                    cuts.push(sl.edge);
                }
                let joint = JointContext::planar(&ctx, 2, &fns).map_err(wrap)?;
                let mut d = ScatteringDiagram::new(joint);
                for ((f, dir), e) in fns.into_iter().zip(dirs).zip(&cuts) {
                    d.add_cut(dir, f, &format!("{}-{}", e[0], e[1]));
                }
                for w in &s.walls {
                    let (base, top, _) = self.wall_touches(w, site);
                    if base || top {
                        let e = self.cell_to_vertex(v, w.cell, &w.m);
                        let sign = if base { -1 } else { 1 };
                        d.add_ray([sign * e.mbar[0], sign * e.mbar[1]], e, w.c.clone());
                    }
                }
                Ok(Joint { diagram: d, info: JointInfo::Vertex { cuts } })
            }
            Site::Edge { edge, s: t } => {
                let mono = self.mono(*edge)?;
                let v = self.component_vertex(*edge, t)?;
                let ctx = self.edge_context(*edge, v, k, s.ring)?;
                let sl = s.slab(*edge).ok_or_else(|| StructureError::Malformed(format!("no slab on {edge:?}")))?;
                let after = sl.pieces.iter().position(|p| &p.start == t);
                let before = sl.pieces.iter().position(|p| &p.end == t);
                let (Some(after), Some(before)) = (after, before) else {
                    return Err(StructureError::Malformed(format!("{site} is not a slab break point")));
                };
                let fa = self.slab_function_at(*edge, v, &sl.pieces[after].function, &ctx)?;
                let fb = self.slab_function_at(*edge, v, &sl.pieces[before].function, &ctx)?;
                let dir = self.toward_minus(mono, v);
                let joint = JointContext::planar(&ctx, 1, &[fa.clone(), fb.clone()]).map_err(wrap)?;
                let mut d = ScatteringDiagram::new(joint);
                d.add_cut(dir, fa, "after");
                d.add_cut([-dir[0], -dir[1]], fb, "before");
                for w in s.walls.iter().filter(|w| w.cell == mono.sigma_plus || w.cell == mono.sigma_minus) {
                    let (base, top, _) = self.wall_touches(w, site);
                    if base || top {
                        let e = self.cell_to_vertex(v, w.cell, &w.m);
                        let sign = if base { -1 } else { 1 };
                        d.add_ray([sign * e.mbar[0], sign * e.mbar[1]], e, w.c.clone());
                    }
                }
                Ok(Joint { diagram: d, info: JointInfo::Edge { edge: *edge, v, before, after } })
            }
            Site::Interior { cell, .. } => {
                let ctx = OrderContext::single_cell(2, vec![0, 0], k).with_ring(s.ring);
                let joint = JointContext::planar(&ctx, 0, &[]).map_err(wrap)?;
                let mut d = ScatteringDiagram::new(joint);
                for w in s.walls.iter().filter(|w| w.cell == *cell) {
                    let (base, top, through) = self.wall_touches(w, site);
                    let m = &w.m.mbar;
                    if through {
                        d.add_line(w.m.clone(), w.c.clone());
                    } else if base {
                        d.add_ray([-m[0], -m[1]], w.m.clone(), w.c.clone());
                    } else if top {
                        d.add_ray([m[0], m[1]], w.m.clone(), w.c.clone());
                    }
                }
                Ok(Joint { diagram: d, info: JointInfo::Interior })
            }
        }
    }

    /// Loop automorphism around a joint, in the ring of order `k`.
    pub fn joint_loop(&self, s: &Structure, site: &Site, k: i64) -> Result<LogAutomorphism> {
        let j = self.joint(s, site, k)?;
        j.diagram.loop_product().map_err(|e| StructureError::Scatter { site: site.to_string(), source: e })
    }

    /// Scattering diagram of a joint, in the ring of order `k`.
    pub fn joint_diagram(&self, s: &Structure, site: &Site, k: i64) -> Result<ScatteringDiagram> {
        Ok(self.joint(s, site, k)?.diagram)
    }

    fn ray_to_wall(&self, site: &Site, info: &JointInfo, ray: &Ray) -> Result<Wall> {
        let q_ = ray.direction;
        let (cell, base, m) = match (site, info) {
            (Site::Interior { cell, pos }, _) => (*cell, pos.clone(), ray.exponent.clone()),
            (Site::Vertex(v), _) => {
                let v = *v;
                let cell = self
                    .manifold
                    .cells_at(v)
                    .into_iter()
                    .find(|&c| {
                        let g = self.manifold.cone(v, c);
                        let (a, b) = (icross(&g[0], &q_), icross(&q_, &g[1]));
                        let o = icross(&g[0], &g[1]).signum();
                        g.len() == 2 && a.signum() == o && b.signum() == o
                    })
                    .ok_or_else(|| StructureError::Malformed(format!("ray {ray} at vertex {v} lies in no cell")))?;
                (cell, self.position(cell, v), self.vertex_to_cell(v, cell, &ray.exponent))
            }
            (Site::Edge { s, .. }, JointInfo::Edge { edge, v, .. }) => {
                let mono = self.mono(*edge)?;
                let d = self.toward_minus(mono, *v);
                let other = self.manifold.cells[mono.sigma_plus].vertex_ids.iter().copied().find(|w| !edge.contains(w)).unwrap();
                let g = self.manifold.to_vertex_chart(*v, mono.sigma_plus, &lattice::sub(&self.manifold.vertex_position(mono.sigma_plus, other), &self.manifold.vertex_position(mono.sigma_plus, *v)));
                let side = icross(&d, &g).signum();
                let here = icross(&d, &q_).signum();
                if here == 0 {
                    return Err(StructureError::Malformed(format!("ray {ray} runs along edge {edge:?}")));
                }
                let cell = if here == side { mono.sigma_plus } else { mono.sigma_minus };
                (cell, self.edge_point(cell, *edge, s), self.vertex_to_cell(*v, cell, &ray.exponent))
            }
            _ => return Err(StructureError::Malformed("joint data mismatch".into())),
        };
        if m.h <= 0 {
            return Err(StructureError::Malformed(format!("wall exponent {m} has order {} on cell {cell}", m.h)));
        }
        let top = self.wall_top(cell, &base, &m.mbar)?;
        Ok(Wall { cell, base, top, m, c: ray.coeff.clone() })
    }

    // -- the steps -------------------------------------------------------

    /// The same structure read in rings of order `k`.
    pub fn at_order(&self, s: &Structure, k: i64) -> Result<Structure> {
        let mut out = s.clone();
        out.order = k;
        for sl in out.slabs.iter_mut() {
            let mono = self.mono(sl.edge)?;
            let ctx = self.edge_context(sl.edge, mono.v_plus, k, s.ring)?;
            for p in sl.pieces.iter_mut() {
                p.function = p.function.recontext(&ctx)?;
            }
        }
        if k < s.order {
            out.walls.retain(|w| w.m.h <= k);
        }
        Ok(out)
    }

    fn scatter_at(&self, s: &Structure, site: &Site, k: i64) -> Result<(Vec<Wall>, Vec<SlabUpdate>)> {
        let wrap = |e: ScatterError| StructureError::Scatter { site: site.to_string(), source: e };
        let j = self.joint(s, site, k)?;
        let done = match j.info {
            JointInfo::Interior => scatter::ks_complete_codim0(&j.diagram),
            JointInfo::Edge { .. } => scatter::naive_complete(&j.diagram, &CompletionOptions { keep_cuts_fixed: true, ..Default::default() }),
            JointInfo::Vertex { .. } => scatter::naive_complete(&j.diagram, &CompletionOptions::default()),
        }
        .map_err(wrap)?;
        let mut walls = vec![];
        for r in &done.added_rays {
            walls.push(self.ray_to_wall(site, &j.info, r)?);
        }
        let mut changes = vec![];
        if let (Site::Vertex(v), JointInfo::Vertex { cuts }) = (site, &j.info) {
            for (i, delta) in &done.cut_changes {
                let edge = cuts[*i];
                let mono = self.mono(edge)?;
                let ctx = self.edge_context(edge, mono.v_plus, k, s.ring)?;
                changes.push((edge, *v, self.slab_function_from(edge, *v, delta, &ctx)?));
            }
        }
        Ok((walls, changes))
    }

    /// Scattering at every joint of `prev` in order `prev.order + 1`.
    pub fn step_one(&self, prev: &Structure, jobs: usize) -> Result<StepOne> {
        let k = prev.order + 1;
        let mut cur = self.at_order(prev, k)?;
        let sites = self.joints(&cur);
        self.refine(&mut cur, &sites);
        let results = parallel_map(&sites, jobs, |site| self.scatter_at(&cur, site, k));
        let mut new_walls = vec![];
        let mut vertex_changes: BTreeMap<(usize, [usize; 2]), TruncatedPoly> = BTreeMap::new();
        for r in results {
            let (walls, changes) = r?;
            new_walls.extend(walls);
            for (edge, v, delta) in changes {
                let e = vertex_changes.entry((v, edge)).or_insert_with(|| TruncatedPoly::zero(delta.ctx()));
                *e = &*e + &delta;
            }
        }
        cur.walls.extend(merge_walls(new_walls));
        Ok(StepOne { structure: cur, vertex_changes })
    }

    /// Slab corrections: sweep every slab from an interior endpoint, fixing
    /// each break point with the piece beyond it.
    pub fn step_two(&self, one: StepOne) -> Result<Structure> {
        let mut cur = one.structure;
        let k = cur.order;
        let sites = self.joints(&cur);
        self.refine(&mut cur, &sites);
        let edges: Vec<[usize; 2]> = cur.slabs.iter().map(|s| s.edge).collect();
        for edge in edges {
            let mono = self.mono(edge)?.clone();
            let forward = self.interior_vertex[mono.v_plus] || !self.interior_vertex[mono.v_minus];
            let start = if forward { mono.v_plus } else { mono.v_minus };
            if let Some(delta) = one.vertex_changes.get(&(start, edge)) {
                let sl = cur.slab_mut(edge).unwrap();
                let p = if forward { sl.pieces.first_mut() } else { sl.pieces.last_mut() }.unwrap();
                p.function = &p.function + delta;
            }
            let mut breaks: Vec<Q> = cur.slab(edge).unwrap().pieces.iter().skip(1).map(|p| p.start.clone()).collect();
            if !forward {
                breaks.reverse();
            }
            for t in breaks {
                let site = Site::Edge { edge, s: t };
                let j = self.joint(&cur, &site, k)?;
                let JointInfo::Edge { v, before, after, .. } = j.info else { unreachable!() };
                let (target, piece) = if forward { (0, after) } else { (1, before) };
                let opts = CompletionOptions { cut_target: Some(target), ..Default::default() };
                let done = scatter::naive_complete(&j.diagram, &opts).map_err(|e| StructureError::Scatter { site: site.to_string(), source: e })?;
                let mut walls = vec![];
                for r in &done.added_rays {
                    walls.push(self.ray_to_wall(&site, &j.info, r)?);
                }
                let ctx = self.edge_context(edge, mono.v_plus, k, cur.ring)?;
                for (i, delta) in &done.cut_changes {
                    if *i != target {
                        return Err(StructureError::Malformed(format!("{site}: unexpected change of cut {i}")));
                    }
                    let delta = self.slab_function_from(edge, v, delta, &ctx)?;
                    let p = &mut cur.slab_mut(edge).unwrap().pieces[piece];
                    p.function = &p.function + &delta;
                }
                cur.walls.extend(merge_walls(walls));
            }
        }
        for v in (0..self.manifold.vertex_count).filter(|&v| self.interior_vertex[v]) {
            let site = Site::Vertex(v);
            let theta = self.joint_loop(&cur, &site, k)?;
            if theta.is_identity() {
                continue;
            }
            let xi = theta.log()?;
            let directional: Vec<String> = xi
                .components
                .iter()
                .flat_map(|c| c.num.terms().keys().filter(|m| !m.is_pure_t()).map(|m| m.to_string()).collect::<Vec<_>>())
                .collect();
            if !directional.is_empty() {
                return Err(StructureError::CycleConditionFailed { site: site.to_string(), defect: directional.join(", ") });
            }
        }
        Ok(cur)
    }

    fn vertex_class(&self, edge: [usize; 2], v: usize, f: &TruncatedPoly, k: i64, ring: CoeffRing) -> Result<VertexClass> {
        let mono = self.mono(edge)?;
        let (ctx, _) = self.vertex_context(v, k, ring);
        let mut class = VertexClass::base(TlogContext::new(&ctx, vec![0, 0]));
        if v == mono.v_minus {
            let shift = self.cell_to_vertex(mono.v_plus, mono.sigma_plus, &Exponent::new(lattice::scale(&mono.d, -mono.kappa), 0));
            let inv = lattice::unimodular_inverse(self.manifold.fan_map(mono.v_plus, mono.sigma_plus)).expect("unimodular");
            let chart = lattice::mat_mul(self.manifold.fan_map(mono.v_minus, mono.sigma_plus), &inv);
            let back = lattice::unimodular_inverse(&chart).expect("unimodular");
            let tilt = lattice::sub(self.slope(mono.v_minus, mono.sigma_plus), &lattice::covec_mat(self.slope(mono.v_plus, mono.sigma_plus), &back));
            class = VertexClass { shift, chart, tilt, ..class };
        }
        let view = class.view(f)?;
        class.tlog = TlogContext::auto(&ctx, &view)?;
        Ok(class)
    }

    /// Normalization of every slab piece at both endpoints.
    pub fn step_three(&self, mut s: Structure) -> Result<Structure> {
        let k = s.order;
        let ring = s.ring;
        for sl in s.slabs.iter_mut() {
            let mono = self.mono(sl.edge)?.clone();
            for p in sl.pieces.iter_mut() {
                let classes = [
                    self.vertex_class(sl.edge, mono.v_plus, &p.function, k, ring)?,
                    self.vertex_class(sl.edge, mono.v_minus, &p.function, k, ring)?,
                ];
                p.function = normalize_slab(&p.function, k, &classes)?.function;
            }
        }
        Ok(s)
    }

    /// Loop automorphisms at every joint in the order of the structure.
    pub fn check_consistency(&self, s: &Structure) -> Result<ConsistencyReport> {
        let mut joints = vec![];
        for site in self.joints(s) {
            let mut t = s.clone();
            self.refine(&mut t, std::slice::from_ref(&site));
            let theta = self.joint_loop(&t, &site, s.order)?;
            let defect = if theta.is_identity() {
                vec![]
            } else {
                match theta.log() {
                    Ok(xi) => xi.components.iter().enumerate().filter(|(_, c)| !c.is_zero()).map(|(i, c)| format!("d_{i}: {}", c.reduce())).collect(),
                    Err(e) => vec![e.to_string()],
                }
            };
            joints.push(JointReport { site: site.to_string(), consistent: defect.is_empty(), defect });
        }
        Ok(ConsistencyReport { order: s.order, joints })
    }

    /// Walls of order at most `a.order` agree and slab functions agree
    /// modulo the order of `a`.
    pub fn compatible(&self, a: &Structure, b: &Structure) -> Result<std::result::Result<(), String>> {
        if b.order < a.order {
            return self.compatible(b, a);
        }
        let key = |w: &Wall| (w.cell, w.base.clone(), w.m.clone(), w.c.clone());
        let wa: BTreeSet<_> = a.walls.iter().filter(|w| !w.c.is_zero()).map(key).collect();
        let wb: BTreeSet<_> = b.walls.iter().filter(|w| !w.c.is_zero() && w.m.h <= a.order).map(key).collect();
        if wa != wb {
            return Ok(Err(format!("walls of order <= {} differ", a.order)));
        }
        for sa in &a.slabs {
            let Some(sb) = b.slab(sa.edge) else { return Ok(Err(format!("slab {:?} missing", sa.edge))) };
            let mono = self.mono(sa.edge)?;
            let ctx = self.edge_context(sa.edge, mono.v_plus, a.order, a.ring)?;
            let mut cuts: BTreeSet<Q> = BTreeSet::new();
            for p in sa.pieces.iter().chain(&sb.pieces) {
                cuts.insert(p.start.clone());
                cuts.insert(p.end.clone());
            }
            let cuts: Vec<Q> = cuts.into_iter().collect();
            for w in cuts.windows(2) {
                let mid = (&w[0] + &w[1]) / q(2);
                let fa = &sa.pieces[sa.piece_at(&mid).unwrap()].function;
                let fb = &sb.pieces[sb.piece_at(&mid).unwrap()].function;
                if fa.recontext(&ctx)? != fb.recontext(&ctx)? {
                    return Ok(Err(format!("slab {:?} differs near {}", sa.edge, mid)));
                }
            }
        }
        Ok(Ok(()))
    }

    /// `S_k` from `S_{k-1}`.
    pub fn advance(&self, prev: &Structure, jobs: usize) -> Result<Structure> {
        let k = prev.order + 1;
        let at = |e: StructureError| StructureError::AtOrder { order: k, source: Box::new(e) };
        let one = self.step_one(prev, jobs).map_err(at)?;
        let two = self.step_two(one).map_err(at)?;
        self.step_three(two).map_err(at)
    }

    /// `S_0, ..., S_{k_max}`, each checked for consistency, compatibility
    /// with its predecessor and, for integer input, integrality.
    pub fn run(&self, g: &GluingInput, k_max: i64, opts: &RunOptions) -> Result<Vec<Structure>> {
        let mut out = vec![];
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            for k in 0..=k_max {
                let path = checkpoint_path(dir, k);
                if !path.exists() {
                    break;
                }
                let (_, s) = StructureJson::read(&path)?.to_structure(Some(self))?;
                out.push(s);
            }
        }
        if out.is_empty() {
            let s0 = self.initial_structure(g)?;
            self.certify(&s0, None)?;
            self.save(opts, &s0)?;
            out.push(s0);
        } else {
            for i in 0..out.len() {
                self.certify(&out[i], i.checked_sub(1).map(|j| &out[j]))?;
            }
        }
        while (out.len() as i64) <= k_max {
            let next = self.advance(out.last().unwrap(), opts.jobs.max(1))?;
            self.certify(&next, out.last())?;
            self.save(opts, &next)?;
            out.push(next);
        }
        Ok(out)
    }

    fn certify(&self, s: &Structure, prev: Option<&Structure>) -> Result<()> {
        let report = self.check_consistency(s)?;
        if !report.passes() {
            return Err(StructureError::Inconsistent { order: s.order, sites: report.failures().iter().map(|j| format!("{}: {}", j.site, j.defect.join("; "))).collect() });
        }
        if let Some(p) = prev {
            if let Err(reason) = self.compatible(p, s)? {
                return Err(StructureError::Incompatible { order: p.order, next: s.order, reason });
            }
        }
        if s.ring == CoeffRing::Integer && !s.is_integral() {
            return Err(StructureError::NotIntegral(format!("order {}", s.order)));
        }
        Ok(())
    }

    fn save(&self, opts: &RunOptions, s: &Structure) -> Result<()> {
        if let Some(dir) = &opts.checkpoint_dir {
            let json = StructureJson::from_structure(self, s, true)?;
            std::fs::write(checkpoint_path(dir, s.order), serde_json::to_string_pretty(&json)? + "\n")?;
        }
        Ok(())
    }

    // -- gluing morphisms ------------------------------------------------

    /// Crossing the slab on `edge` at parameter `s` from `sigma+` into
    /// `sigma-`, computed through the chart of `via`. The monomial `m` is
    /// given in the chart of `sigma+` with `h = ord`; the image is returned
    /// in the chart of `sigma-`. Requires `<mbar, d_check> >= 0`.
    pub fn change_chamber(&self, st: &Structure, edge: [usize; 2], s: &Q, via: usize, m: &Exponent) -> Result<BTreeMap<Exponent, Q>> {
        let mono = self.mono(edge)?;
        if !edge.contains(&via) {
            return Err(StructureError::Malformed(format!("vertex {via} is not on edge {edge:?}")));
        }
        let sl = st.slab(edge).ok_or_else(|| StructureError::Malformed(format!("no slab on {edge:?}")))?;
        let piece = &sl.pieces[sl.piece_at(s).ok_or_else(|| StructureError::Malformed(format!("parameter {s} outside the edge")))?];
        let power = lattice::dot(&mono.d_check, &m.mbar);
        if power < 0 {
            return Err(StructureError::Unsupported("crossing needs a negative power of the slab function".into()));
        }
        let ctx = self.edge_context(edge, via, st.order, st.ring)?;
        let f = self.slab_function_at(edge, via, &piece.function, &ctx)?.pow(power as u32);
        let image = self.vertex_to_cell(via, mono.sigma_minus, &self.cell_to_vertex(via, mono.sigma_plus, m));
        let mut out = BTreeMap::new();
        for (e, c) in f.terms() {
            let x = self.vertex_to_cell(via, mono.sigma_minus, e).plus(&image);
            *out.entry(x).or_insert_with(Q::zero) += c;
        }
        out.retain(|_, c| !c.is_zero());
        Ok(out)
    }

    /// `mu_{sigma+}(m) / mu_{sigma-}(m')` with `<d_check, m> = 1` and `m'`
    /// the transport of `m` through `v`.
    pub fn d_factor(&self, mu: &PiecewiseMultiplicative, edge: [usize; 2], v: usize) -> Result<Q> {
        let mono = self.mono(edge)?;
        let (x, y, g) = ext_gcd(mono.d_check[0], mono.d_check[1]);
        if g != 1 {
            return Err(StructureError::Malformed("edge normal is not primitive".into()));
        }
        let m = vec![x, y];
        let m2 = self.manifold.from_vertex_chart(v, mono.sigma_minus, &self.manifold.to_vertex_chart(v, mono.sigma_plus, &m));
        let a = mu.eval(mono.sigma_plus, &m).ok_or_else(|| StructureError::Malformed(format!("no value on cell {}", mono.sigma_plus)))?;
        let b = mu.eval(mono.sigma_minus, &m2).ok_or_else(|| StructureError::Malformed(format!("no value on cell {}", mono.sigma_minus)))?;
        Ok(a / b)
    }
}

fn merge_walls(walls: Vec<Wall>) -> Vec<Wall> {
    let mut out: Vec<Wall> = vec![];
    for w in walls {
        if let Some(x) = out.iter_mut().find(|x| x.cell == w.cell && x.base == w.base && x.m == w.m) {
            x.c += &w.c;
        } else {
            out.push(w);
        }
    }
    out.retain(|w| !w.c.is_zero());
    out
}

fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|sc| {
        let handles: Vec<_> = items.chunks(chunk).map(|part| sc.spawn(move || part.iter().map(f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub fn checkpoint_path(dir: &Path, k: i64) -> PathBuf {
    dir.join(format!("structure_order_{k}.json"))
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceJson {
    pub segment: [String; 2],
    /// Function per endpoint whose component meets the piece, in the
    /// vertex chart of that endpoint.
    pub per_vertex_f: BTreeMap<String, Vec<TermJson>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlabJson {
    pub rho: [usize; 2],
    pub pieces: Vec<PieceJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallJson {
    pub sigma: usize,
    pub base: [String; 2],
    pub m: Vec<i64>,
    pub h: i64,
    pub c: String,
}

/// Checkpoint of one structure, optionally with its complex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureJson {
    pub order: i64,
    #[serde(default)]
    pub ring: CoeffRing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complex: Option<ManifoldJson>,
    pub slabs: Vec<SlabJson>,
    pub walls: Vec<WallJson>,
}

fn parse_point(p: &[String; 2]) -> Result<Point> {
    let f = |s: &String| parse_q(s).ok_or_else(|| StructureError::Malformed(format!("bad rational {s:?}")));
    Ok([f(&p[0])?, f(&p[1])?])
}

impl StructureJson {
    pub fn from_structure(surface: &Surface, s: &Structure, with_complex: bool) -> Result<Self> {
        let mut slabs = vec![];
        for sl in &s.slabs {
            let mono = surface.mono(sl.edge)?;
            let mut pieces = vec![];
            for p in &sl.pieces {
                let mut per = BTreeMap::new();
                per.insert(mono.v_plus.to_string(), p.function.to_json());
                if mono.kappa != 0 && p.end > qr(1, 2) {
                    let ctx = surface.edge_context(sl.edge, mono.v_minus, s.order, s.ring)?;
                    per.insert(mono.v_minus.to_string(), surface.slab_function_at(sl.edge, mono.v_minus, &p.function, &ctx)?.to_json());
                    if p.start >= qr(1, 2) {
                        per.remove(&mono.v_plus.to_string());
                    }
                }
                pieces.push(PieceJson { segment: [fmt_q(&p.start), fmt_q(&p.end)], per_vertex_f: per });
            }
            slabs.push(SlabJson { rho: sl.edge, pieces });
        }
        let walls = s
            .walls
            .iter()
            .map(|w| WallJson { sigma: w.cell, base: [fmt_q(&w.base[0]), fmt_q(&w.base[1])], m: w.m.mbar.clone(), h: w.m.h, c: fmt_q(&w.c) })
            .collect();
        let complex = with_complex.then(|| ManifoldJson::from_parts(&surface.manifold, Some(&surface.polarization)));
        Ok(StructureJson { order: s.order, ring: s.ring, complex, slabs, walls })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Rebuild the structure; uses the embedded complex unless a surface is
    /// given.
    pub fn to_structure(&self, surface: Option<&Surface>) -> Result<(Surface, Structure)> {
        let surface = match (surface, &self.complex) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => {
                let (m, phi) = c.to_parts()?;
                let phi = phi.ok_or_else(|| StructureError::Malformed("complex without polarization".into()))?;
                Surface::new(m, phi)?
            }
            (None, None) => return Err(StructureError::Malformed("checkpoint has no complex".into())),
        };
        let k = self.order;
        let mut slabs = vec![];
        for sj in &self.slabs {
            let mono = surface.mono(sj.rho)?.clone();
            let ctx = surface.edge_context(sj.rho, mono.v_plus, k, self.ring)?;
            let mut pieces = vec![];
            for pj in &sj.pieces {
                let [start, end] = parse_point(&pj.segment)?;
                let mut f: Option<TruncatedPoly> = None;
                for (key, terms) in &pj.per_vertex_f {
                    let v: usize = key.parse().map_err(|_| StructureError::Malformed(format!("bad vertex key {key:?}")))?;
                    if !sj.rho.contains(&v) {
                        return Err(StructureError::Malformed(format!("vertex {v} is not on {:?}", sj.rho)));
                    }
                    let local = surface.edge_context(sj.rho, v, k, self.ring)?;
                    let g = TruncatedPoly::from_json(&local, terms)?;
                    let g = surface.slab_function_from(sj.rho, v, &g, &ctx)?;
                    match &f {
                        Some(h) if *h != g => return Err(StructureError::Malformed(format!("piece functions of {:?} violate the change of vertex", sj.rho))),
                        _ => f = Some(g),
                    }
                }
                let function = f.ok_or_else(|| StructureError::Malformed(format!("piece of {:?} has no function", sj.rho)))?;
                pieces.push(SlabPiece { start, end, function });
            }
            slabs.push(Slab { edge: sj.rho, pieces });
        }
        let mut walls = vec![];
        for wj in &self.walls {
            let base = parse_point(&wj.base)?;
            let c = parse_q(&wj.c).ok_or_else(|| StructureError::Malformed(format!("bad coefficient {:?}", wj.c)))?;
            let top = surface.wall_top(wj.sigma, &base, &wj.m)?;
            walls.push(Wall { cell: wj.sigma, base, top, m: Exponent::new(wj.m.clone(), wj.h), c });
        }
        Ok((surface, Structure { order: k, ring: self.ring, slabs, walls }))
    }
}
