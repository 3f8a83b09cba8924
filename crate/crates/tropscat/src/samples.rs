//! Small polarized complexes and scattering diagrams used by tests, the CLI
//! and the acceptance suite.

use std::collections::BTreeMap;

use crate::algebra::{Exponent, OrderContext, TruncatedPoly};
use crate::geometry::{Cell, GeometryError, LatticePolyhedron, Polarization, TropicalManifold};
use crate::lattice::{self, q, IMat, Q};
use crate::scatter::{JointContext, ScatterError, ScatteringDiagram};

/// Order-zero section on an interior edge: terms `c z^{(mbar, 0)}` in the
/// chart of the lower-id adjacent cell, for the lower-id endpoint.
pub type Section = Vec<(Vec<i64>, Q)>;

#[derive(Clone, Debug)]
pub struct Sample {
    pub manifold: TropicalManifold,
    pub polarization: Polarization,
    pub sections: BTreeMap<[usize; 2], Section>,
}

fn cell(id: usize, pts: &[(usize, [i64; 2])]) -> Cell {
    Cell {
        id,
        vertex_ids: pts.iter().map(|p| p.0).collect(),
        polyhedron: LatticePolyhedron {
            ambient_rank: 2,
            vertices: pts.iter().map(|p| vec![q(p.1[0]), q(p.1[1])]).collect(),
            rays: vec![],
        },
    }
}

fn fans(n: usize, maps: &[(usize, usize, IMat)]) -> Vec<BTreeMap<usize, IMat>> {
    let mut out = vec![BTreeMap::new(); n];
    for (v, c, m) in maps {
        out[*v].insert(*c, m.clone());
    }
    out
}

fn slopes(n: usize, entries: &[(usize, usize, [i64; 2])]) -> Polarization {
    let mut out = vec![BTreeMap::new(); n];
    for (v, c, s) in entries {
        out[*v].insert(*c, s.to_vec());
    }
    Polarization { slopes: out }
}

fn one_plus(mbar: &[i64]) -> Section {
    vec![(vec![0; mbar.len()], q(1)), (mbar.to_vec(), q(1))]
}

fn id2() -> IMat {
    lattice::identity(2)
}

/// Four unimodular triangles around an interior vertex `O` (id 0) with
/// outer vertices `E, N, W, S` (ids 1..4). The chart at `E` is sheared on
/// the upper triangle, so the edge `OE` carries monodromy `kappa = 1`; its
/// slab function is `1 + x` with `x` the edge direction.
pub fn focus_focus() -> Sample {
    focus_focus_impl(false)
}

/// Like [`focus_focus`] with a second singular edge `ON` carrying `1 + y`.
pub fn focus_focus_pair() -> Sample {
    focus_focus_impl(true)
}

fn focus_focus_impl(pair: bool) -> Sample {
    let (o, e, n, w, s) = (0, 1, 2, 3, 4);
    let cells = vec![
        cell(0, &[(o, [0, 0]), (e, [1, 0]), (n, [0, 1])]),
        cell(1, &[(o, [0, 0]), (n, [0, 1]), (w, [-1, 0])]),
        cell(2, &[(o, [0, 0]), (w, [-1, 0]), (s, [0, -1])]),
        cell(3, &[(o, [0, 0]), (s, [0, -1]), (e, [1, 0])]),
    ];
    let shear = vec![vec![1, 1], vec![0, 1]];
    let n_map = if pair { vec![vec![1, 0], vec![1, 1]] } else { id2() };
    let maps = vec![
        (o, 0, id2()),
        (o, 1, id2()),
        (o, 2, id2()),
        (o, 3, id2()),
        (e, 0, shear),
        (e, 3, id2()),
        (n, 0, n_map),
        (n, 1, id2()),
        (w, 1, id2()),
        (w, 2, id2()),
        (s, 2, id2()),
        (s, 3, id2()),
    ];
    let manifold = TropicalManifold::new(2, 5, cells, fans(5, &maps)).expect("focus-focus complex");
    let polarization = slopes(
        5,
        &[
            (o, 0, [1, 1]),
            (o, 1, [0, 1]),
            (o, 2, [0, 0]),
            (o, 3, [1, 0]),
            (e, 3, [0, 0]),
            (e, 0, [0, 1]),
            (n, 1, [0, 0]),
            (n, 0, [1, 0]),
            (w, 2, [0, 0]),
            (w, 1, [0, 1]),
            (s, 2, [0, 0]),
            (s, 3, [1, 0]),
        ],
    );
    let mut sections = BTreeMap::new();
    sections.insert([o, e], one_plus(&[1, 0]));
    if pair {
        sections.insert([o, n], one_plus(&[0, 1]));
    }
    Sample { manifold, polarization, sections }
}

/// Three triangles around `O` forming the fan of the projective plane, with
/// boundary vertices `A, B, C`. Each interior edge has `kappa = 3`; the slab
/// functions are `1 + w^3` with `w` the edge direction.
pub fn cubic_cone() -> Sample {
    let (o, a, b, c) = (0, 1, 2, 3);
    let cells = vec![
        cell(0, &[(o, [0, 0]), (a, [1, 0]), (b, [0, 1])]),
        cell(1, &[(o, [0, 0]), (b, [1, 0]), (c, [0, 1])]),
        cell(2, &[(o, [0, 0]), (c, [1, 0]), (a, [0, 1])]),
    ];
    let turn = vec![vec![2, 1], vec![-1, 0]];
    let maps = vec![
        (o, 0, id2()),
        (o, 1, vec![vec![0, -1], vec![1, -1]]),
        (o, 2, vec![vec![-1, 1], vec![-1, 0]]),
        (a, 0, id2()),
        (a, 2, turn.clone()),
        (b, 1, id2()),
        (b, 0, turn.clone()),
        (c, 2, id2()),
        (c, 1, turn),
    ];
    let manifold = TropicalManifold::new(2, 4, cells, fans(4, &maps)).expect("cubic complex");
    let polarization = slopes(
        4,
        &[
            (o, 0, [0, 0]),
            (o, 1, [-1, 0]),
            (o, 2, [0, -1]),
            (a, 0, [0, 0]),
            (a, 2, [0, -1]),
            (b, 1, [0, 0]),
            (b, 0, [0, -1]),
            (c, 2, [0, 0]),
            (c, 1, [0, -1]),
        ],
    );
    let mut sections = BTreeMap::new();
    // edge direction in the chart of the lower-id cell
    sections.insert([o, a], vec![(vec![0, 0], q(1)), (vec![3, 0], q(1))]);
    sections.insert([o, b], vec![(vec![0, 0], q(1)), (vec![0, 3], q(1))]);
    sections.insert([o, c], vec![(vec![0, 0], q(1)), (vec![0, 3], q(1))]);
    Sample { manifold, polarization, sections }
}

fn gradient(p: &[[i64; 2]; 3], h: &[i64; 3]) -> Option<[i64; 2]> {
    let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
    let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
    let det = e1[0] * e2[1] - e1[1] * e2[0];
    let (d1, d2) = (h[1] - h[0], h[2] - h[0]);
    let gx = d1 * e2[1] - d2 * e1[1];
    let gy = d2 * e1[0] - d1 * e2[0];
    (det != 0 && gx % det == 0 && gy % det == 0).then(|| [gx / det, gy / det])
}

/// Lattice rectangle `[0, nx] x [0, ny]` cut into unit squares, each split
/// along a diagonal (`true` for the one through `(i, j)` and `(i+1, j+1)`),
/// with the standard affine structure and the polarization interpolating
/// `heights` at the lattice points. All sections are `1`.
pub fn grid(nx: usize, ny: usize, main_diagonal: &dyn Fn(usize, usize) -> bool, heights: &dyn Fn(usize, usize) -> i64) -> Result<Sample, GeometryError> {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let nv = (nx + 1) * (ny + 1);
    let mut cells = vec![];
    let mut tris: Vec<[(usize, usize); 3]> = vec![];
    for j in 0..ny {
        for i in 0..nx {
            if main_diagonal(i, j) {
                tris.push([(i, j), (i + 1, j), (i + 1, j + 1)]);
                tris.push([(i, j), (i + 1, j + 1), (i, j + 1)]);
            } else {
                tris.push([(i, j), (i + 1, j), (i, j + 1)]);
                tris.push([(i + 1, j), (i + 1, j + 1), (i, j + 1)]);
            }
        }
    }
    let mut maps = vec![];
    let mut grads = vec![];
    for (c, t) in tris.iter().enumerate() {
        let pts: Vec<(usize, [i64; 2])> = t.iter().map(|&(i, j)| (id(i, j), [i as i64, j as i64])).collect();
        cells.push(cell(c, &pts));
        for &(v, _) in &pts {
            maps.push((v, c, id2()));
        }
        let p = [pts[0].1, pts[1].1, pts[2].1];
        let h = [heights(t[0].0, t[0].1), heights(t[1].0, t[1].1), heights(t[2].0, t[2].1)];
        grads.push(gradient(&p, &h).ok_or_else(|| GeometryError::InvalidComplex(format!("triangle {c} is not unimodular")))?);
    }
    let manifold = TropicalManifold::new(2, nv, cells, fans(nv, &maps))?;
    let mut entries = vec![];
    for v in 0..nv {
        let at = manifold.cells_at(v);
        let base = grads[at[0]];
        for c in at {
            entries.push((v, c, [grads[c][0] - base[0], grads[c][1] - base[1]]));
        }
    }
    let polarization = slopes(nv, &entries);
    polarization.validate(&manifold)?;
    let mut sections = BTreeMap::new();
    for e in manifold.edges().into_iter().filter(|e| e.is_interior()) {
        sections.insert(e.vertices, vec![(vec![0, 0], q(1))]);
    }
    Ok(Sample { manifold, polarization, sections })
}

/// Grid with main diagonals and heights `2(i^2 + j^2) - 2ij`, strictly
/// convex on that triangulation.
pub fn standard_grid(nx: usize, ny: usize) -> Sample {
    let h = |i: usize, j: usize| {
        let (i, j) = (i as i64, j as i64);
        2 * (i * i + j * j) - 2 * i * j
    };
    grid(nx, ny, &|_, _| true, &h).expect("standard grid")
}

/// Grid whose triangulation is the regular one induced by
/// `8 (i^2 + j^2) + noise(i, j)`; `None` when some square is not split
/// strictly.
pub fn regular_grid(nx: usize, ny: usize, noise: &dyn Fn(usize, usize) -> i64) -> Option<Sample> {
    let h = |i: usize, j: usize| 8 * ((i * i + j * j) as i64) + noise(i, j);
    for j in 0..ny {
        for i in 0..nx {
            if h(i + 1, j) + h(i, j + 1) == h(i, j) + h(i + 1, j + 1) {
                return None;
            }
        }
    }
    let diag = |i: usize, j: usize| h(i + 1, j) + h(i, j + 1) > h(i, j) + h(i + 1, j + 1);
    grid(nx, ny, &diag, &h).ok()
}

/// `[0, 2]` cut at 1, with slope `s` on the right cell at the middle vertex.
pub fn interval(s: i64) -> (TropicalManifold, Polarization) {
    let seg = |id: usize, a: (usize, i64), b: (usize, i64)| Cell {
        id,
        vertex_ids: vec![a.0, b.0],
        polyhedron: LatticePolyhedron { ambient_rank: 1, vertices: vec![vec![q(a.1)], vec![q(b.1)]], rays: vec![] },
    };
    let cells = vec![seg(0, (0, 0), (1, 1)), seg(1, (1, 1), (2, 2))];
    let one = vec![vec![1]];
    let mut f = vec![BTreeMap::new(); 3];
    f[0].insert(0, one.clone());
    f[1].insert(0, one.clone());
    f[1].insert(1, one.clone());
    f[2].insert(1, one);
    let m = TropicalManifold::new(1, 3, cells, f).expect("interval");
    let mut sl = vec![BTreeMap::new(); 3];
    sl[0].insert(0, vec![0]);
    sl[1].insert(0, vec![0]);
    sl[1].insert(1, vec![s]);
    sl[2].insert(1, vec![0]);
    (m, Polarization { slopes: sl })
}

/// Lines `1 + t x` and `1 + t y` through a point in the interior of a
/// maximal cell.
pub fn two_lines(k: i64) -> ScatteringDiagram {
    let ctx = OrderContext::single_cell(2, vec![0, 0], k);
    let mut d = ScatteringDiagram::new(JointContext::planar(&ctx, 0, &[]).expect("polynomial ring"));
    d.add_line(Exponent::new(vec![1, 0], 1), q(1));
    d.add_line(Exponent::new(vec![0, 1], 1), q(1));
    d
}

/// Rank-three joint in codimension two with three cuts where naive
/// completion needs a denominator at order one. Exponents are
/// `(a1, a2, a3; h)` with the quotient plane spanned by `a1, a2`.
pub fn denominator_counterexample(k: i64) -> Result<ScatteringDiagram, ScatterError> {
    let ctx = OrderContext::new(3, vec![vec![0, 0, 0], vec![2, 0, 0], vec![0, 1, 0]], vec![0, 1, 2], k);
    let mono = |m: [i64; 3], c: i64| TruncatedPoly::monomial(&ctx, Exponent::new(m.to_vec(), 0), q(c));
    let one = TruncatedPoly::one(&ctx);
    let w = mono([0, 0, 1], 1)?;
    let u = mono([0, -1, 0], 1)?;
    let f1 = &one + &w;
    let f2 = &(&f1 * &f1) + &u;
    let f3 = f1.clone();
    let joint = JointContext::new(&ctx, [vec![1, 0, 0], vec![0, 1, 0]], 2, &[f1.clone(), f2.clone(), f3.clone()])?;
    let mut d = ScatteringDiagram::new(joint);
    d.add_cut([-1, 0], f1, "c1");
    d.add_cut([0, -1], f2, "c2");
    d.add_cut([1, 2], f3, "c3");
    Ok(d)
}
