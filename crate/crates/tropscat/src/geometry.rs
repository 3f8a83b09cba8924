//! Lattice polyhedra, PL functions on fans, integral tropical manifolds with
//! fan structures, monodromy, polarizations and the discrete Legendre
//! transform.

use std::collections::{BTreeMap, BTreeSet};

use num::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{self, fmt_q, parse_q, IMat, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("PL function is not convex: slope of cone {0} exceeds the maximum on cone {1}")]
    NotConvex(usize, usize),
    #[error("PL function is not strictly convex at vertex {0}")]
    NotStrictlyConvex(usize),
    #[error("polarization has no representative at vertex {0}")]
    Unpolarized(usize),
    #[error("edge {0:?} lies on the boundary")]
    BoundaryCell([usize; 2]),
    #[error("negative monodromy {kappa} on edge {edge:?}")]
    NotPositive { edge: [usize; 2], kappa: i64 },
    #[error("invalid complex: {0}")]
    InvalidComplex(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("polyhedron is not integral")]
    NotIntegral,
    #[error("polyhedron needs at least one vertex")]
    NoVertex,
}

type Result<T> = std::result::Result<T, GeometryError>;

pub type QVec = Vec<Q>;

fn qv(v: &[i64]) -> QVec {
    v.iter().map(|&x| lattice::q(x)).collect()
}


fn qdot_i(a: &[i64], b: &[Q]) -> Q {
    if b.iter().all(|y| y.is_integer()) {
        let s: num::BigInt = a.iter().zip(b).map(|(x, y)| y.numer() * *x).sum();
        return Q::from_integer(s);
    }
    a.iter().zip(b).map(|(x, y)| lattice::q(*x) * y).sum()
}

fn qsub(a: &[Q], b: &[Q]) -> QVec {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn as_int(v: &[Q]) -> Option<Vec<i64>> {
    use num::ToPrimitive;
    v.iter().map(|x| if x.is_integer() { x.to_integer().to_i64() } else { None }).collect()
}

/// Positive multiple of a rational vector as a primitive integer vector.
fn integral_direction(v: &[Q]) -> Vec<i64> {
    lattice::clear_denominators(v)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    rec(0, n, k, &mut vec![], &mut out);
    out
}

/// Generators of the dual cone `{a | <a, g> >= 0 for all g}`. A lineality
/// space appears as pairs `b, -b`.
pub fn dual_cone(gens: &[Vec<i64>], n: usize) -> Vec<Vec<i64>> {
    let gq: Vec<QVec> = gens.iter().filter(|g| !lattice::is_zero(g)).map(|g| qv(g)).collect();
    let lin = lattice::kernel(&gq, n);
    let mut out: BTreeSet<Vec<i64>> = BTreeSet::new();
    for b in &lin {
        let bi = integral_direction(b);
        out.insert(lattice::scale(&bi, -1));
        out.insert(bi);
    }
    let d = lattice::rank(&gq);
    if d == 0 {
        return out.into_iter().collect();
    }
    for subset in combinations(gq.len(), d - 1) {
        let mut rows: Vec<QVec> = subset.iter().map(|&i| gq[i].clone()).collect();
        rows.extend(lin.iter().cloned());
        let k = lattice::kernel(&rows, n);
        if k.len() != 1 {
            continue;
        }
        let a = integral_direction(&k[0]);
        for s in [1, -1] {
            let a = lattice::scale(&a, s);
            let vals: Vec<i64> = gens.iter().map(|g| lattice::dot(&a, g)).collect();
            if vals.iter().all(|&x| x >= 0) && vals.iter().any(|&x| x > 0) {
                out.insert(a);
            }
        }
    }
    out.into_iter().collect()
}

/// Membership in the closed cone generated by `gens`.
pub fn cone_contains(gens: &[Vec<i64>], n: usize, x: &[Q]) -> bool {
    dual_cone(gens, n).iter().all(|a| !qdot_i(a, x).is_negative())
}

fn same_cone(a: &[Vec<i64>], b: &[Vec<i64>], n: usize) -> bool {
    a.iter().all(|g| cone_contains(b, n, &qv(g))) && b.iter().all(|g| cone_contains(a, n, &qv(g)))
}

/// Extreme points of a planar point set in counterclockwise order.
pub fn hull2d(points: &[QVec]) -> Vec<QVec> {
    let mut pts: Vec<QVec> = points.to_vec();
    pts.sort();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &QVec, a: &QVec, b: &QVec| (&a[0] - &o[0]) * (&b[1] - &o[1]) - (&a[1] - &o[1]) * (&b[0] - &o[0]);
    let mut lower: Vec<QVec> = vec![];
    for p in &pts {
        while lower.len() >= 2 && !cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p).is_positive() {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<QVec> = vec![];
    for p in pts.iter().rev() {
        while upper.len() >= 2 && !cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p).is_positive() {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// A polyhedron in V-representation: convex hull of `vertices` plus the
/// cone generated by `rays`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticePolyhedron {
    pub ambient_rank: usize,
    pub vertices: Vec<QVec>,
    pub rays: Vec<Vec<i64>>,
}

impl LatticePolyhedron {
    /// Build from generators, dropping points and rays that are not extreme.
    pub fn new(ambient_rank: usize, points: Vec<QVec>, rays: Vec<Vec<i64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeometryError::NoVertex);
        }
        let mut pts = points;
        pts.sort();
        pts.dedup();
        let mut rays: Vec<Vec<i64>> = rays.into_iter().filter(|r| !lattice::is_zero(r)).map(|r| lattice::primitive(&r)).collect();
        rays.sort();
        rays.dedup();
        let mut kept_rays = vec![];
        for (i, r) in rays.iter().enumerate() {
            let others: Vec<Vec<i64>> = rays.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x.clone()).collect();
            let redundant = !others.is_empty() && cone_contains(&others, ambient_rank, &qv(r)) && {
                // a ray inside a lineality space is kept as one of a pair
                !others.contains(&lattice::scale(r, -1))
            };
            if !redundant {
                kept_rays.push(r.clone());
            }
        }
        let probe = LatticePolyhedron { ambient_rank, vertices: pts.clone(), rays: kept_rays.clone() };
        let vertices: Vec<QVec> = (0..pts.len()).filter(|&i| probe.is_extreme(i)).map(|i| pts[i].clone()).collect();
        if vertices.is_empty() {
            return Err(GeometryError::NoVertex);
        }
        Ok(LatticePolyhedron { ambient_rank, vertices, rays: kept_rays })
    }

    pub fn from_int_points(ambient_rank: usize, points: &[Vec<i64>], rays: Vec<Vec<i64>>) -> Result<Self> {
        Self::new(ambient_rank, points.iter().map(|p| qv(p)).collect(), rays)
    }

    fn tangent_generators_of(&self, u: &QVec) -> Vec<Vec<i64>> {
        let mut gens: Vec<Vec<i64>> = self
            .vertices
            .iter()
            .filter(|w| *w != u)
            .map(|w| integral_direction(&qsub(w, u)))
            .collect();
        gens.extend(self.rays.iter().cloned());
        gens
    }

    fn is_extreme(&self, i: usize) -> bool {
        let gens = self.tangent_generators_of(&self.vertices[i]);
        if gens.is_empty() {
            return true;
        }
        let dual = dual_cone(&gens, self.ambient_rank);
        lattice::rank(&dual.iter().map(|d| qv(d)).collect::<Vec<_>>()) == self.ambient_rank
    }

    /// Generators of the tangent cone at the vertex with index `i`.
    pub fn tangent_cone(&self, i: usize) -> Vec<Vec<i64>> {
        self.tangent_generators_of(&self.vertices[i])
    }

    pub fn is_integral(&self) -> bool {
        self.vertices.iter().all(|v| v.iter().all(|x| x.is_integer()))
    }

    pub fn is_bounded(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn int_vertices(&self) -> Result<Vec<Vec<i64>>> {
        self.vertices.iter().map(|v| as_int(v).ok_or(GeometryError::NotIntegral)).collect()
    }

    /// Affine dimension.
    pub fn dim(&self) -> usize {
        let mut rows: Vec<QVec> = self.vertices.iter().skip(1).map(|v| qsub(v, &self.vertices[0])).collect();
        rows.extend(self.rays.iter().map(|r| qv(r)));
        lattice::rank(&rows)
    }

    /// Facet inequalities `<a, x> >= c` of a full-dimensional polyhedron.
    pub fn facets(&self) -> Vec<(Vec<i64>, Q)> {
        let n = self.ambient_rank;
        let mut dirs: Vec<(QVec, bool)> = self.vertices.iter().map(|v| (v.clone(), true)).collect();
        dirs.extend(self.rays.iter().map(|r| (qv(r), false)));
        let mut out: BTreeMap<Vec<i64>, Q> = BTreeMap::new();
        for subset in combinations(dirs.len(), n) {
            let Some(base) = subset.iter().find(|&&i| dirs[i].1) else { continue };
            let p0 = dirs[*base].0.clone();
            let rows: Vec<QVec> = subset
                .iter()
                .filter(|&&i| i != *base)
                .map(|&i| if dirs[i].1 { qsub(&dirs[i].0, &p0) } else { dirs[i].0.clone() })
                .collect();
            let k = lattice::kernel(&rows, n);
            if k.len() != 1 {
                continue;
            }
            let a = integral_direction(&k[0]);
            for s in [1, -1] {
                let a = lattice::scale(&a, s);
                let c = qdot_i(&a, &p0);
                let ok_v = self.vertices.iter().all(|v| qdot_i(&a, v) >= c);
                let ok_r = self.rays.iter().all(|r| lattice::dot(&a, r) >= 0);
                if ok_v && ok_r {
                    out.insert(a, c);
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        if self.dim() == self.ambient_rank {
            return self.facets().iter().all(|(a, c)| qdot_i(a, x) >= *c);
        }
        // lower dimensional: test inside the affine span by lifting to a
        // planar hull when possible
        if self.ambient_rank <= 2 && self.rays.is_empty() {
            let mut pts = self.vertices.clone();
            pts.push(x.to_vec());
            let hull = hull2d(&pts);
            return hull.len() == hull2d(&self.vertices).len()
                && hull.iter().all(|p| self.vertices.contains(p))
                && self.collinear_with(x);
        }
        false
    }

    fn collinear_with(&self, x: &[Q]) -> bool {
        let mut rows: Vec<QVec> = self.vertices.iter().skip(1).map(|v| qsub(v, &self.vertices[0])).collect();
        let r0 = lattice::rank(&rows);
        rows.push(qsub(x, &self.vertices[0]));
        lattice::rank(&rows) == r0
    }

    /// Set equality of vertices and recession cones.
    pub fn same_as(&self, other: &Self) -> bool {
        let a: BTreeSet<&QVec> = self.vertices.iter().collect();
        let b: BTreeSet<&QVec> = other.vertices.iter().collect();
        a == b && same_cone(&self.rays, &other.rays, self.ambient_rank)
    }

    pub fn translate(&self, by: &[Q]) -> Self {
        LatticePolyhedron {
            ambient_rank: self.ambient_rank,
            vertices: self.vertices.iter().map(|v| v.iter().zip(by).map(|(x, y)| x + y).collect()).collect(),
            rays: self.rays.clone(),
        }
    }

    /// Lattice length of a bounded segment.
    pub fn lattice_length(&self) -> Option<i64> {
        if self.vertices.len() != 2 || !self.rays.is_empty() {
            return None;
        }
        let d = as_int(&qsub(&self.vertices[1], &self.vertices[0]))?;
        Some(d.iter().fold(0, |g, x| lattice::gcd(g, *x)))
    }
}

/// Piecewise linear function on a fan: one slope per maximal cone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlFunction {
    pub rank: usize,
    pub cones: Vec<Vec<Vec<i64>>>,
    pub slopes: Vec<Vec<i64>>,
}

impl PlFunction {
    /// The function equals the maximum of its slopes on every cone.
    pub fn check_convex(&self) -> Result<()> {
        for (j, cone) in self.cones.iter().enumerate() {
            for g in cone {
                let own = lattice::dot(&self.slopes[j], g);
                for (i, s) in self.slopes.iter().enumerate() {
                    if lattice::dot(s, g) > own {
                        return Err(GeometryError::NotConvex(i, j));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_strictly_convex(&self) -> bool {
        if self.check_convex().is_err() {
            return false;
        }
        let set: BTreeSet<&Vec<i64>> = self.slopes.iter().collect();
        set.len() == self.slopes.len()
    }

    pub fn support_dual(&self) -> Vec<Vec<i64>> {
        let gens: Vec<Vec<i64>> = self.cones.iter().flatten().cloned().collect();
        dual_cone(&gens, self.rank)
    }

    pub fn eval(&self, x: &[Q]) -> Option<Q> {
        self.cones
            .iter()
            .position(|c| cone_contains(c, self.rank, x))
            .map(|i| qdot_i(&self.slopes[i], x))
    }

    /// Same function on the same support.
    pub fn same_function(&self, other: &Self) -> bool {
        let probes: Vec<QVec> = self
            .cones
            .iter()
            .chain(other.cones.iter())
            .flat_map(|c| {
                let sum = c.iter().fold(vec![0; self.rank], |a, g| lattice::add(&a, g));
                c.iter().cloned().chain(std::iter::once(sum)).collect::<Vec<_>>()
            })
            .map(|g| qv(&g))
            .collect();
        probes.iter().all(|p| self.eval(p) == other.eval(p))
    }
}

/// `{x | phi + x >= 0}`: vertices are the negated slopes, the recession
/// cone is dual to the support.
pub fn newton_polyhedron(pl: &PlFunction) -> Result<LatticePolyhedron> {
    pl.check_convex()?;
    let pts: Vec<QVec> = pl.slopes.iter().map(|s| qv(&lattice::scale(s, -1))).collect();
    LatticePolyhedron::new(pl.rank, pts, pl.support_dual())
}

/// `phi(n) = -inf(n|Xi)` on the inner normal fan.
pub fn pl_from_polyhedron(xi: &LatticePolyhedron) -> Result<PlFunction> {
    let verts = xi.int_vertices()?;
    let mut cones = vec![];
    let mut slopes = vec![];
    for (i, u) in verts.iter().enumerate() {
        cones.push(dual_cone(&xi.tangent_cone(i), xi.ambient_rank));
        slopes.push(lattice::scale(u, -1));
    }
    Ok(PlFunction { rank: xi.ambient_rank, cones, slopes })
}

/// Maximal cell with its own integral affine chart; `vertex_ids[i]` labels
/// `polyhedron.vertices[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub id: usize,
    pub vertex_ids: Vec<usize>,
    pub polyhedron: LatticePolyhedron,
}

impl Cell {
    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.vertex_ids.iter().position(|&x| x == v)
    }
}

/// Bounded edge of a 2-dimensional complex with its adjacent maximal cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub cells: Vec<usize>,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.cells.len() == 2
    }
}

/// Integral tropical manifold given by maximal cells glued along common
/// vertex labels, and a fan structure at each vertex: for each maximal cell
/// at `v`, a unimodular map from the cell chart to the vertex chart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TropicalManifold {
    pub dim: usize,
    pub vertex_count: usize,
    pub cells: Vec<Cell>,
    pub fans: Vec<BTreeMap<usize, IMat>>,
}

impl TropicalManifold {
    pub fn new(dim: usize, vertex_count: usize, cells: Vec<Cell>, fans: Vec<BTreeMap<usize, IMat>>) -> Result<Self> {
        let m = TropicalManifold { dim, vertex_count, cells, fans };
        m.validate()?;
        Ok(m)
    }

    fn invalid<T>(msg: String) -> Result<T> {
        Err(GeometryError::InvalidComplex(msg))
    }

    pub fn validate(&self) -> Result<()> {
        if self.fans.len() != self.vertex_count {
            return Self::invalid(format!("{} fans for {} vertices", self.fans.len(), self.vertex_count));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.id != i {
                return Self::invalid(format!("cell at position {i} has id {}", c.id));
            }
            if c.polyhedron.ambient_rank != self.dim || c.polyhedron.dim() != self.dim {
                return Self::invalid(format!("cell {i} is not full dimensional"));
            }
            if c.vertex_ids.len() != c.polyhedron.vertices.len() {
                return Self::invalid(format!("cell {i} labels do not match its vertices"));
            }
            if !c.polyhedron.is_integral() {
                return Self::invalid(format!("cell {i} is not integral"));
            }
            for &v in &c.vertex_ids {
                if v >= self.vertex_count {
                    return Self::invalid(format!("cell {i} uses unknown vertex {v}"));
                }
                let Some(map) = self.fans[v].get(&i) else {
                    return Self::invalid(format!("vertex {v} has no fan map for cell {i}"));
                };
                if map.len() != self.dim || lattice::det(map).abs() != 1 {
                    return Self::invalid(format!("fan map of cell {i} at vertex {v} is not unimodular"));
                }
            }
        }
        for (v, fan) in self.fans.iter().enumerate() {
            for &c in fan.keys() {
                if self.cells.get(c).and_then(|cell| cell.local_index(v)).is_none() {
                    return Self::invalid(format!("vertex {v} has a fan map for cell {c} not containing it"));
                }
            }
        }
        if self.dim == 2 {
            self.validate_planar()?;
        }
        Ok(())
    }

    fn validate_planar(&self) -> Result<()> {
        for e in self.edges() {
            if e.cells.len() > 2 {
                return Self::invalid(format!("edge {:?} has {} cells", e.vertices, e.cells.len()));
            }
            if e.cells.len() != 2 {
                continue;
            }
            for (a, b) in [(e.vertices[0], e.vertices[1]), (e.vertices[1], e.vertices[0])] {
                let d0 = self.edge_direction(e.cells[0], a, b);
                let d1 = self.edge_direction(e.cells[1], a, b);
                if d0 != d1 {
                    return Self::invalid(format!("charts at vertex {a} disagree along edge {:?}", e.vertices));
                }
                let side = |c: usize| {
                    let cone = self.cone(a, c);
                    cone.iter().map(|g| d0[0] * g[1] - d0[1] * g[0]).find(|x| *x != 0).unwrap_or(0).signum()
                };
                if side(e.cells[0]) * side(e.cells[1]) >= 0 {
                    return Self::invalid(format!("cells along edge {:?} overlap at vertex {a}", e.vertices));
                }
            }
        }
        for v in 0..self.vertex_count {
            let cones: Vec<Vec<Vec<i64>>> = self.cells_at(v).iter().map(|&c| self.cone(v, c)).collect();
            let duals: Vec<Vec<Vec<i64>>> = cones.iter().map(|g| dual_cone(g, 2)).collect();
            let gens: BTreeSet<Vec<i64>> = cones.into_iter().flatten().collect();
            for g1 in &gens {
                for g2 in &gens {
                    let sum = lattice::add(g1, g2);
                    if lattice::is_zero(&sum) {
                        continue;
                    }
                    if !duals.iter().any(|d| d.iter().all(|a| lattice::dot(a, &sum) >= 0)) {
                        return Self::invalid(format!("fan at vertex {v} does not have convex support"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cells_at(&self, v: usize) -> Vec<usize> {
        self.fans[v].keys().copied().collect()
    }

    /// Position of vertex `v` in the chart of `cell`.
    pub fn vertex_position(&self, cell: usize, v: usize) -> Vec<i64> {
        let c = &self.cells[cell];
        let i = c.local_index(v).expect("vertex not in cell");
        as_int(&c.polyhedron.vertices[i]).expect("integral cell")
    }

    pub fn fan_map(&self, v: usize, cell: usize) -> &IMat {
        &self.fans[v][&cell]
    }

    /// Tangent vector in the chart of `cell` pushed into the vertex chart of `v`.
    pub fn to_vertex_chart(&self, v: usize, cell: usize, x: &[i64]) -> Vec<i64> {
        lattice::mat_vec(self.fan_map(v, cell), x)
    }

    pub fn from_vertex_chart(&self, v: usize, cell: usize, y: &[i64]) -> Vec<i64> {
        let inv = lattice::unimodular_inverse(self.fan_map(v, cell)).expect("unimodular");
        lattice::mat_vec(&inv, y)
    }

    /// Covector in the vertex chart pulled back to the chart of `cell`.
    pub fn covector_to_cell(&self, v: usize, cell: usize, a: &[i64]) -> Vec<i64> {
        lattice::covec_mat(a, self.fan_map(v, cell))
    }

    /// Generators of the cone `K_{v, cell}` in the vertex chart.
    pub fn cone(&self, v: usize, cell: usize) -> Vec<Vec<i64>> {
        let c = &self.cells[cell];
        let i = c.local_index(v).expect("vertex not in cell");
        c.polyhedron.tangent_cone(i).iter().map(|g| self.to_vertex_chart(v, cell, g)).collect()
    }

    fn edge_direction(&self, cell: usize, a: usize, b: usize) -> Vec<i64> {
        let d = lattice::sub(&self.vertex_position(cell, b), &self.vertex_position(cell, a));
        self.to_vertex_chart(a, cell, &d)
    }

    /// Bounded edges of a 2-dimensional complex, sorted by vertex labels.
    pub fn edges(&self) -> Vec<Edge> {
        let mut map: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for c in &self.cells {
            for (a, _) in c.polyhedron.facets() {
                let on: Vec<usize> = c
                    .polyhedron
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| {
                        let vals: Vec<Q> = c.polyhedron.vertices.iter().map(|w| qdot_i(&a, w)).collect();
                        let min = vals.iter().min().unwrap().clone();
                        qdot_i(&a, v) == min
                    })
                    .map(|(i, _)| c.vertex_ids[i])
                    .collect();
                if on.len() == 2 {
                    let key = [on[0].min(on[1]), on[0].max(on[1])];
                    map.entry(key).or_default().push(c.id);
                }
            }
        }
        map.into_iter()
            .map(|(vertices, mut cells)| {
                cells.sort();
                cells.dedup();
                Edge { vertices, cells }
            })
            .collect()
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<Edge> {
        let key = [a.min(b), a.max(b)];
        self.edges().into_iter().find(|e| e.vertices == key)
    }

    /// True when the fan at `v` is not complete.
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        let gens: Vec<Vec<i64>> = self.cells_at(v).iter().flat_map(|&c| self.cone(v, c)).collect();
        !dual_cone(&gens, self.dim).is_empty()
    }

    /// Same complex up to the order in which each cell lists its vertices.
    pub fn equivalent(&self, other: &Self) -> bool {
        if self.dim != other.dim || self.vertex_count != other.vertex_count || self.cells.len() != other.cells.len() {
            return false;
        }
        let labeled = |c: &Cell| -> BTreeSet<(usize, QVec)> {
            c.vertex_ids.iter().cloned().zip(c.polyhedron.vertices.iter().cloned()).collect()
        };
        self.cells.iter().zip(&other.cells).all(|(a, b)| {
            labeled(a) == labeled(b) && same_cone(&a.polyhedron.rays, &b.polyhedron.rays, self.dim)
        }) && self.fans == other.fans
    }
}

/// Local representatives of a polarization: at each vertex, one slope (in
/// the vertex chart) per maximal cell containing it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polarization {
    pub slopes: Vec<BTreeMap<usize, Vec<i64>>>,
}

impl Polarization {
    pub fn local_pl(&self, m: &TropicalManifold, v: usize) -> Result<PlFunction> {
        let s = self.slopes.get(v).ok_or(GeometryError::Unpolarized(v))?;
        let cells = m.cells_at(v);
        let mut slopes = vec![];
        for c in &cells {
            slopes.push(s.get(c).ok_or(GeometryError::Unpolarized(v))?.clone());
        }
        Ok(PlFunction { rank: m.dim, cones: cells.iter().map(|&c| m.cone(v, c)).collect(), slopes })
    }

    pub fn validate(&self, m: &TropicalManifold) -> Result<()> {
        for v in 0..m.vertex_count {
            let pl = self.local_pl(m, v)?;
            if !pl.is_strictly_convex() {
                return Err(GeometryError::NotStrictlyConvex(v));
            }
        }
        Ok(())
    }

    /// Slope of the local representative at `v` on `cell`, pulled back to
    /// the chart of `cell`.
    pub fn cell_slope(&self, m: &TropicalManifold, v: usize, cell: usize) -> Vec<i64> {
        m.covector_to_cell(v, cell, &self.slopes[v][&cell])
    }
}

/// Discrete Legendre transform. Dual vertices are the maximal cells, dual
/// cells are Newton polyhedra of the local representatives.
pub fn discrete_legendre(m: &TropicalManifold, phi: &Polarization) -> Result<(TropicalManifold, Polarization)> {
    phi.validate(m)?;
    let mut cells = vec![];
    for v in 0..m.vertex_count {
        let pl = phi.local_pl(m, v)?;
        let xi = newton_polyhedron(&pl)?;
        let labels = m.cells_at(v);
        let vertices: Vec<QVec> = labels.iter().map(|c| qv(&lattice::scale(&phi.slopes[v][c], -1))).collect();
        cells.push(Cell {
            id: v,
            vertex_ids: labels,
            polyhedron: LatticePolyhedron { ambient_rank: m.dim, vertices, rays: xi.rays },
        });
    }
    let mut fans = vec![BTreeMap::new(); m.cells.len()];
    let mut slopes = vec![BTreeMap::new(); m.cells.len()];
    for v in 0..m.vertex_count {
        for c in m.cells_at(v) {
            fans[c].insert(v, lattice::transpose(m.fan_map(v, c)));
            slopes[c].insert(v, lattice::scale(&m.vertex_position(c, v), -1));
        }
    }
    let dual = TropicalManifold::new(m.dim, m.cells.len(), cells, fans)?;
    Ok((dual, Polarization { slopes }))
}

/// Local monodromy around an interior edge of a 2-dimensional complex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MonodromyEntry {
    pub edge: [usize; 2],
    pub v_plus: usize,
    pub v_minus: usize,
    pub sigma_plus: usize,
    pub sigma_minus: usize,
    pub kappa: i64,
    /// Primitive direction from `v_plus` to `v_minus`, chart of `sigma_plus`.
    pub d: Vec<i64>,
    /// Primitive covector vanishing on the edge, positive on `sigma_plus`.
    pub d_check: Vec<i64>,
    /// Composed chart change on the chart of `sigma_plus`.
    pub transform: IMat,
}

pub fn monodromy(m: &TropicalManifold, a: usize, b: usize) -> Result<MonodromyEntry> {
    if m.dim != 2 {
        return Err(GeometryError::Unsupported("monodromy is implemented for surfaces".into()));
    }
    let e = m.edge(a, b).ok_or_else(|| GeometryError::InvalidComplex(format!("no edge {a}-{b}")))?;
    if !e.is_interior() {
        return Err(GeometryError::BoundaryCell(e.vertices));
    }
    let (vp, vm) = (e.vertices[0], e.vertices[1]);
    let (sp, sm) = (e.cells[0], e.cells[1]);
    let inv = |v, c| lattice::unimodular_inverse(m.fan_map(v, c)).expect("unimodular");
    let t = lattice::mat_mul(
        &lattice::mat_mul(&inv(vp, sp), m.fan_map(vp, sm)),
        &lattice::mat_mul(&inv(vm, sm), m.fan_map(vm, sp)),
    );
    let d = lattice::primitive(&lattice::sub(&m.vertex_position(sp, vm), &m.vertex_position(sp, vp)));
    let mut d_check = vec![-d[1], d[0]];
    let off = m.cells[sp]
        .vertex_ids
        .iter()
        .map(|&w| lattice::sub(&m.vertex_position(sp, w), &m.vertex_position(sp, vp)))
        .map(|x| lattice::dot(&d_check, &x))
        .find(|x| *x != 0)
        .unwrap_or(1);
    if off < 0 {
        d_check = lattice::scale(&d_check, -1);
    }
    let u = vec![d_check[0], d_check[1]];
    let tu = lattice::mat_vec(&t, &u);
    let diff = lattice::sub(&tu, &u);
    let pair = lattice::dot(&d_check, &u);
    let idx = if d[0] != 0 { 0 } else { 1 };
    let kappa = diff[idx] / (pair * d[idx]);
    for i in 0..2 {
        for j in 0..2 {
            let expect = i64::from(i == j) + kappa * d[i] * d_check[j];
            if t[i][j] != expect {
                return Err(GeometryError::InvalidComplex(format!(
                    "monodromy around edge {:?} is not a shear along the edge",
                    e.vertices
                )));
            }
        }
    }
    Ok(MonodromyEntry { edge: e.vertices, v_plus: vp, v_minus: vm, sigma_plus: sp, sigma_minus: sm, kappa, d, d_check, transform: t })
}

impl MonodromyEntry {
    /// `m^rho_{v v'}` in the chart of `sigma_plus`.
    pub fn vector(&self, from: usize, to: usize) -> Vec<i64> {
        if from == to {
            vec![0; self.d.len()]
        } else if from == self.v_plus {
            lattice::scale(&self.d, self.kappa)
        } else {
            lattice::scale(&self.d, -self.kappa)
        }
    }
}

/// `conv{m^rho_{v v'}}` over the vertices `v'` of the edge.
pub fn monodromy_polytope(m: &TropicalManifold, a: usize, b: usize, base: usize) -> Result<LatticePolyhedron> {
    let e = monodromy(m, a, b)?;
    if e.kappa < 0 {
        return Err(GeometryError::NotPositive { edge: e.edge, kappa: e.kappa });
    }
    let pts = vec![e.vector(base, e.v_plus), e.vector(base, e.v_minus)];
    LatticePolyhedron::from_int_points(2, &pts, vec![])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PositivityReport {
    pub positive: bool,
    pub kappas: Vec<([usize; 2], i64)>,
    pub violations: Vec<([usize; 2], i64)>,
}

pub fn is_positive(m: &TropicalManifold) -> Result<PositivityReport> {
    let mut kappas = vec![];
    for e in m.edges().into_iter().filter(|e| e.is_interior()) {
        let entry = monodromy(m, e.vertices[0], e.vertices[1])?;
        kappas.push((e.vertices, entry.kappa));
    }
    let violations: Vec<_> = kappas.iter().filter(|(_, k)| *k < 0).cloned().collect();
    Ok(PositivityReport { positive: violations.is_empty(), kappas, violations })
}

fn hull_vertices(rank: usize, pts: &[QVec]) -> Result<Vec<QVec>> {
    match rank {
        1 => {
            let min = pts.iter().min().cloned().ok_or(GeometryError::NoVertex)?;
            let max = pts.iter().max().cloned().ok_or(GeometryError::NoVertex)?;
            Ok(if min == max { vec![min] } else { vec![min, max] })
        }
        2 => Ok(hull2d(pts)),
        _ => Err(GeometryError::Unsupported("Minkowski sums above rank 2".into())),
    }
}

/// Only the trivial solutions `a_i = alpha_i`, `sum alpha_i = 0`, solve
/// `F(a) = 0`.
pub fn minkowski_transverse(polys: &[LatticePolyhedron]) -> Result<bool> {
    if polys.is_empty() {
        return Ok(true);
    }
    let rank = polys[0].ambient_rank;
    let verts: Vec<Vec<QVec>> = polys.iter().map(|p| hull_vertices(rank, &p.vertices)).collect::<Result<_>>()?;
    let mut tuples: Vec<Vec<usize>> = vec![vec![]];
    for vs in &verts {
        tuples = tuples
            .into_iter()
            .flat_map(|t| (0..vs.len()).map(move |i| {
                let mut t = t.clone();
                t.push(i);
                t
            }))
            .collect();
    }
    let sum_of = |t: &Vec<usize>| -> QVec {
        let mut s = vec![Q::zero(); rank];
        for (i, &j) in t.iter().enumerate() {
            for (k, x) in verts[i][j].iter().enumerate() {
                s[k] += x;
            }
        }
        s
    };
    let sums: Vec<QVec> = tuples.iter().map(sum_of).collect();
    let big = hull_vertices(rank, &sums)?;
    let offsets: Vec<usize> = verts.iter().scan(0, |acc, vs| {
        let o = *acc;
        *acc += vs.len();
        Some(o)
    }).collect();
    let nvars: usize = verts.iter().map(|v| v.len()).sum();
    let mut rows: Vec<QVec> = vec![];
    for v in &big {
        let t = tuples.iter().zip(&sums).find(|(_, s)| *s == v).map(|(t, _)| t.clone()).expect("vertex of sum");
        let mut row = vec![Q::zero(); nvars];
        for (i, &j) in t.iter().enumerate() {
            row[offsets[i] + j] += lattice::q(1);
        }
        rows.push(row);
    }
    Ok(lattice::kernel(&rows, nvars).len() == polys.len() - 1)
}

/// Data for one codimension-two stratum in the local rigidity audit.
#[derive(Clone, Debug)]
pub struct RigidityStratum {
    pub tau: usize,
    pub rhos: Vec<RigidityRho>,
}

#[derive(Clone, Debug)]
pub struct RigidityRho {
    pub rho: usize,
    /// `Delta_tau(rho)`.
    pub delta: LatticePolyhedron,
    /// Restriction of the slab function to the stratum, as exponent and
    /// coefficient pairs in coordinates of `Lambda_tau`.
    pub restriction: Vec<(Vec<i64>, Q)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RigidityReport {
    pub passes: bool,
    pub failures: Vec<String>,
}

fn lattice_points_2d(p: &LatticePolyhedron) -> Vec<QVec> {
    use num::ToPrimitive;
    let lo: Vec<i64> = (0..p.ambient_rank)
        .map(|k| p.vertices.iter().map(|v| v[k].floor().to_integer().to_i64().unwrap()).min().unwrap())
        .collect();
    let hi: Vec<i64> = (0..p.ambient_rank)
        .map(|k| p.vertices.iter().map(|v| v[k].ceil().to_integer().to_i64().unwrap()).max().unwrap())
        .collect();
    let mut out = vec![];
    match p.ambient_rank {
        1 => {
            for x in lo[0]..=hi[0] {
                out.push(qv(&[x]));
            }
        }
        2 => {
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    out.push(qv(&[x, y]));
                }
            }
        }
        _ => {}
    }
    out.into_iter().filter(|x| p.contains(x)).collect()
}

/// Reduced and irreducible when certified by the Newton polytope: a
/// primitive segment, or a polygon whose edge lengths are coprime.
fn certified_irreducible(terms: &[(Vec<i64>, Q)]) -> Option<bool> {
    let pts: Vec<QVec> = terms.iter().filter(|(_, c)| !c.is_zero()).map(|(e, _)| qv(e)).collect();
    if pts.len() <= 1 {
        return Some(true);
    }
    let rank = pts[0].len();
    if rank > 2 {
        return None;
    }
    let hull = hull_vertices(rank, &pts).ok()?;
    let len = |a: &QVec, b: &QVec| as_int(&qsub(b, a)).map(|d| d.iter().fold(0, |g, x| lattice::gcd(g, *x)));
    if hull.len() == 2 {
        return Some(len(&hull[0], &hull[1])? == 1);
    }
    let mut g = 0;
    for i in 0..hull.len() {
        g = lattice::gcd(g, len(&hull[i], &hull[(i + 1) % hull.len()])?);
    }
    if g == 1 {
        Some(true)
    } else {
        None
    }
}

fn normalized_terms(terms: &[(Vec<i64>, Q)]) -> Vec<(Vec<i64>, Q)> {
    let mut t: Vec<(Vec<i64>, Q)> = terms.iter().filter(|(_, c)| !c.is_zero()).cloned().collect();
    t.sort();
    if let Some((_, c0)) = t.first().cloned() {
        for (_, c) in t.iter_mut() {
            *c = &*c / &c0;
        }
    }
    t
}

pub fn local_rigidity_audit(strata: &[RigidityStratum]) -> RigidityReport {
    let mut failures = vec![];
    for s in strata {
        for r in &s.rhos {
            for p in lattice_points_2d(&r.delta) {
                if !r.delta.vertices.contains(&p) {
                    failures.push(format!("(i) stratum {} cell {}: integral point {:?} is not a vertex", s.tau, r.rho, p.iter().map(fmt_q).collect::<Vec<_>>()));
                }
            }
            match certified_irreducible(&r.restriction) {
                Some(true) => {}
                Some(false) => failures.push(format!("(ii) stratum {} cell {}: restriction is not reduced and irreducible", s.tau, r.rho)),
                None => failures.push(format!("(ii) stratum {} cell {}: irreducibility could not be certified", s.tau, r.rho)),
            }
        }
        let mut groups: BTreeMap<Vec<(Vec<i64>, String)>, Vec<usize>> = BTreeMap::new();
        for r in &s.rhos {
            let key: Vec<(Vec<i64>, String)> = normalized_terms(&r.restriction).into_iter().map(|(e, c)| (e, fmt_q(&c))).collect();
            if key.len() > 1 {
                groups.entry(key).or_default().push(r.rho);
            }
        }
        for rhos in groups.values() {
            if rhos.len() > 3 {
                failures.push(format!("(ii) stratum {}: cells {:?} share the same restriction", s.tau, rhos));
            }
        }
        let mut distinct: Vec<LatticePolyhedron> = vec![];
        for r in &s.rhos {
            let base = r.delta.vertices.iter().min().unwrap().clone();
            let neg: QVec = base.iter().map(|x| -x.clone()).collect();
            let t = r.delta.translate(&neg);
            if !distinct.iter().any(|d| d.same_as(&t)) {
                distinct.push(t);
            }
        }
        match minkowski_transverse(&distinct) {
            Ok(true) => {}
            Ok(false) => failures.push(format!("(iii) stratum {}: polytopes are not Minkowski transverse", s.tau)),
            Err(e) => failures.push(format!("(iii) stratum {}: {e}", s.tau)),
        }
    }
    RigidityReport { passes: failures.is_empty(), failures }
}

/// Audit data of a surface: the strata are vertices, where each
/// `Delta_tau(rho)` is a point and each restriction is a nonzero constant.
pub fn rigidity_strata_surface(m: &TropicalManifold) -> Vec<RigidityStratum> {
    let edges: Vec<Edge> = m.edges().into_iter().filter(|e| e.is_interior()).collect();
    (0..m.vertex_count)
        .map(|v| RigidityStratum {
            tau: v,
            rhos: edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.vertices.contains(&v))
                .map(|(i, _)| RigidityRho {
                    rho: i,
                    delta: LatticePolyhedron { ambient_rank: 2, vertices: vec![qv(&[0, 0])], rays: vec![] },
                    restriction: vec![(vec![], lattice::q(1))],
                })
                .collect(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellJson {
    pub id: usize,
    pub vertex_ids: Vec<usize>,
    pub vertices: Vec<Vec<String>>,
    #[serde(default)]
    pub rays: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanMapJson {
    pub cell: usize,
    pub matrix: IMat,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanJson {
    pub vertex: usize,
    pub maps: Vec<FanMapJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlopeJson {
    pub cell: usize,
    pub slope: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarizationJson {
    pub vertex: usize,
    pub slopes: Vec<SlopeJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldJson {
    pub dim: usize,
    pub vertex_count: usize,
    pub cells: Vec<CellJson>,
    pub fans: Vec<FanJson>,
    #[serde(default)]
    pub polarization: Vec<PolarizationJson>,
}

impl ManifoldJson {
    pub fn from_parts(m: &TropicalManifold, phi: Option<&Polarization>) -> Self {
        ManifoldJson {
            dim: m.dim,
            vertex_count: m.vertex_count,
            cells: m
                .cells
                .iter()
                .map(|c| CellJson {
                    id: c.id,
                    vertex_ids: c.vertex_ids.clone(),
                    vertices: c.polyhedron.vertices.iter().map(|v| v.iter().map(fmt_q).collect()).collect(),
                    rays: c.polyhedron.rays.clone(),
                })
                .collect(),
            fans: m
                .fans
                .iter()
                .enumerate()
                .map(|(v, f)| FanJson {
                    vertex: v,
                    maps: f.iter().map(|(c, mat)| FanMapJson { cell: *c, matrix: mat.clone() }).collect(),
                })
                .collect(),
            polarization: phi
                .map(|p| {
                    p.slopes
                        .iter()
                        .enumerate()
                        .map(|(v, s)| PolarizationJson {
                            vertex: v,
                            slopes: s.iter().map(|(c, sl)| SlopeJson { cell: *c, slope: sl.clone() }).collect(),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn to_parts(&self) -> Result<(TropicalManifold, Option<Polarization>)> {
        let mut cells = vec![];
        for c in &self.cells {
            let vertices = c
                .vertices
                .iter()
                .map(|v| {
                    v.iter()
                        .map(|s| parse_q(s).ok_or_else(|| GeometryError::InvalidComplex(format!("bad coordinate {s:?}"))))
                        .collect::<Result<QVec>>()
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(Cell {
                id: c.id,
                vertex_ids: c.vertex_ids.clone(),
                polyhedron: LatticePolyhedron { ambient_rank: self.dim, vertices, rays: c.rays.clone() },
            });
        }
        cells.sort_by_key(|c| c.id);
        let mut fans = vec![BTreeMap::new(); self.vertex_count];
        for f in &self.fans {
            let slot = fans
                .get_mut(f.vertex)
                .ok_or_else(|| GeometryError::InvalidComplex(format!("fan for unknown vertex {}", f.vertex)))?;
            for m in &f.maps {
                slot.insert(m.cell, m.matrix.clone());
            }
        }
        let m = TropicalManifold::new(self.dim, self.vertex_count, cells, fans)?;
        let phi = if self.polarization.is_empty() {
            None
        } else {
            let mut slopes = vec![BTreeMap::new(); self.vertex_count];
            for p in &self.polarization {
                let slot = slopes
                    .get_mut(p.vertex)
                    .ok_or_else(|| GeometryError::InvalidComplex(format!("slopes for unknown vertex {}", p.vertex)))?;
                for s in &p.slopes {
                    slot.insert(s.cell, s.slope.clone());
                }
            }
            Some(Polarization { slopes })
        };
        Ok((m, phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_of_quadrant_and_half_plane() {
        let d = dual_cone(&[vec![1, 0], vec![0, 1]], 2);
        assert_eq!(d, vec![vec![0, 1], vec![1, 0]]);
        let h = dual_cone(&[vec![1, 0], vec![0, 1], vec![-1, 0]], 2);
        assert_eq!(h, vec![vec![0, 1]]);
        assert!(dual_cone(&[vec![1], vec![-1]], 1).is_empty());
    }

    #[test]
    fn polyhedron_drops_interior_points() {
        let p = LatticePolyhedron::from_int_points(2, &[vec![0, 0], vec![2, 0], vec![1, 0], vec![0, 2], vec![1, 1]], vec![]).unwrap();
        assert_eq!(p.vertices.len(), 3);
        assert_eq!(p.facets().len(), 3);
    }
}
