//! Scattering diagrams at a joint: path-ordered loop products, completion in
//! codimension zero, naive completion with denominator detection in higher
//! codimension, and equivalence testing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, Exponent, LocalRing, LocalizedElement, OrderContext, TermJson, TruncatedPoly};
use crate::lattice::{self, fmt_q, parse_q, Q};
use crate::logauto::{conjugation_closed_form, LogAutoError, LogAutomorphism, LogDerivation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScatterError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    LogAuto(#[from] LogAutoError),
    #[error("diagram cannot be cyclically sorted: {0}")]
    UnsortableDiagram(String),
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
    #[error("denominator problem: {0}")]
    Denominator(Box<DenominatorWitness>),
    #[error("defect term outside the expected class: {0}")]
    NotInClass(String),
    #[error("order mismatch: {0}")]
    OrderMismatch(String),
    #[error("malformed diagram: {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, ScatterError>;

/// Automorphism `m -> g^{-<mbar, normal>}` on the half-line `R_{>=0} direction`
/// that would be needed to cancel a defect, but whose function `g` has
/// denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatorWitness {
    pub direction: [i64; 2],
    pub normal: Vec<i64>,
    pub function: LocalizedElement,
    /// Index of the cut on this half-line, if any.
    pub cut: Option<usize>,
}

impl Eq for DenominatorWitness {}

impl fmt::Display for DenominatorWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let exp: Vec<i64> = self.normal.iter().map(|x| -x).collect();
        write!(
            f,
            "on R>=0({},{}) the automorphism m -> ({})^<mbar,{:?}> has denominators",
            self.direction[0],
            self.direction[1],
            self.function.reduce(),
            exp
        )
    }
}

/// Local data at a joint: the ring, the projection onto the quotient plane
/// `Q = Lambda / Lambda_j` (two covectors, oriented) and the codimension of
/// the smallest cell containing the joint.
#[derive(Clone, Debug)]
pub struct JointContext {
    pub ring: Arc<LocalRing>,
    pub projection: [Vec<i64>; 2],
    pub codim: usize,
}

impl JointContext {
    pub fn new(ctx: &Arc<OrderContext>, projection: [Vec<i64>; 2], codim: usize, cut_functions: &[TruncatedPoly]) -> Result<Self> {
        let ring = LocalRing::new(ctx, cut_functions)?;
        Ok(JointContext { ring, projection, codim })
    }

    /// Rank-2 joint with `Lambda_j = 0` and the identity projection.
    pub fn planar(ctx: &Arc<OrderContext>, codim: usize, cut_functions: &[TruncatedPoly]) -> Result<Self> {
        Self::new(ctx, [vec![1, 0], vec![0, 1]], codim, cut_functions)
    }

    pub fn ctx(&self) -> &Arc<OrderContext> {
        self.ring.ctx()
    }

    pub fn project(&self, v: &[i64]) -> [i64; 2] {
        [lattice::dot(&self.projection[0], v), lattice::dot(&self.projection[1], v)]
    }

    /// Covector on the ambient lattice, counterclockwise normal to `q`.
    pub fn normal(&self, q: &[i64; 2]) -> Vec<i64> {
        let n = lattice::primitive(&[-q[1], q[0]]);
        (0..self.ctx().rank()).map(|i| n[0] * self.projection[0][i] + n[1] * self.projection[1][i]).collect()
    }

    fn with_order(&self, k: i64) -> Result<Self> {
        let ctx = self.ctx().with_order(k);
        let locs: Vec<TruncatedPoly> = self.ring.localizers().iter().map(|f| f.recontext(&ctx)).collect::<std::result::Result<_, _>>()?;
        Ok(JointContext { ring: LocalRing::new(&ctx, &locs)?, projection: self.projection.clone(), codim: self.codim })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RayKind {
    Incoming,
    Outgoing,
    Undirectional,
}

/// Half-line `R_{>=0} direction` carrying `1 + coeff z^exponent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ray {
    pub direction: [i64; 2],
    pub exponent: Exponent,
    pub coeff: Q,
    pub kind: RayKind,
}

/// Half-line in a codimension-one cell through the joint, with its function.
#[derive(Clone, Debug, PartialEq)]
pub struct Cut {
    pub direction: [i64; 2],
    pub function: TruncatedPoly,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct ScatteringDiagram {
    pub joint: JointContext,
    pub cuts: Vec<Cut>,
    pub rays: Vec<Ray>,
}

/// Counterclockwise angle order on nonzero vectors, starting at the
/// positive first axis.
pub fn angle_cmp(a: &[i64; 2], b: &[i64; 2]) -> Ordering {
    let half = |v: &[i64; 2]| if v[1] > 0 || (v[1] == 0 && v[0] > 0) { 0 } else { 1 };
    half(a).cmp(&half(b)).then_with(|| {
        let cross = a[0] as i128 * b[1] as i128 - a[1] as i128 * b[0] as i128;
        0.cmp(&cross)
    })
}

fn prim2(v: [i64; 2]) -> [i64; 2] {
    let p = lattice::primitive(&v);
    [p[0], p[1]]
}

fn same_direction(a: &[i64; 2], b: &[i64; 2]) -> bool {
    prim2(*a) == prim2(*b)
}

fn kind_for(direction: &[i64; 2], proj: &[i64; 2]) -> RayKind {
    if proj == &[0, 0] {
        RayKind::Undirectional
    } else if same_direction(direction, proj) {
        RayKind::Incoming
    } else {
        RayKind::Outgoing
    }
}

struct Factor {
    direction: [i64; 2],
    function: LocalizedElement,
    normal: Vec<i64>,
}

/// Order in which defect classes of the same degree are processed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProcessingOrder {
    #[default]
    Ascending,
    Descending,
}

#[derive(Clone, Debug, Default)]
pub struct CompletionOptions {
    pub order: ProcessingOrder,
    /// Send every defect class along the cut line to this cut, including
    /// the opposite half-line and pure `t` terms.
    pub cut_target: Option<usize>,
    /// When false, terms along cuts are left as residual.
    pub keep_cuts_fixed: bool,
}

/// Result of a completion: the new diagram and the part of the defect that
/// rays and cut changes cannot remove.
#[derive(Clone, Debug)]
pub struct Completion {
    pub diagram: ScatteringDiagram,
    pub residual: LogDerivation,
    pub added_rays: Vec<Ray>,
    /// `(cut index, added terms)`.
    pub cut_changes: Vec<(usize, TruncatedPoly)>,
}

impl ScatteringDiagram {
    pub fn new(joint: JointContext) -> Self {
        ScatteringDiagram { joint, cuts: vec![], rays: vec![] }
    }

    pub fn ctx(&self) -> &Arc<OrderContext> {
        self.joint.ctx()
    }

    pub fn ring(&self) -> &Arc<LocalRing> {
        &self.joint.ring
    }

    pub fn add_cut(&mut self, direction: [i64; 2], function: TruncatedPoly, label: &str) {
        self.cuts.push(Cut { direction, function, label: label.to_string() });
    }

    /// Ray of the given support; the kind is read off from the exponent.
    pub fn add_ray(&mut self, direction: [i64; 2], exponent: Exponent, coeff: Q) {
        let kind = kind_for(&direction, &self.joint.project(&exponent.mbar));
        self.rays.push(Ray { direction, exponent, coeff, kind });
    }

    /// Full line through the joint carrying `1 + c z^m`: an incoming and an
    /// outgoing ray.
    pub fn add_line(&mut self, exponent: Exponent, coeff: Q) {
        let p = self.joint.project(&exponent.mbar);
        self.add_ray(p, exponent.clone(), coeff.clone());
        self.add_ray([-p[0], -p[1]], exponent, coeff);
    }

    fn ray_function(&self, r: &Ray) -> Result<LocalizedElement> {
        let mut p = TruncatedPoly::one(self.ctx());
        if self.ctx().alive(&r.exponent) {
            p = &p + &TruncatedPoly::monomial(self.ctx(), r.exponent.clone(), r.coeff.clone())?;
        }
        Ok(LocalizedElement::from_poly(self.ring(), p))
    }

    fn factors(&self) -> Result<Vec<Factor>> {
        let mut out = vec![];
        for c in &self.cuts {
            if c.direction == [0, 0] {
                return Err(ScatterError::UnsortableDiagram(format!("cut {} has no direction", c.label)));
            }
            out.push(Factor {
                direction: c.direction,
                function: LocalizedElement::from_poly(self.ring(), c.function.clone()),
                normal: self.joint.normal(&c.direction),
            });
        }
        for r in &self.rays {
            if r.direction == [0, 0] {
                return Err(ScatterError::UnsortableDiagram(format!("ray with exponent {} has no direction", r.exponent)));
            }
            out.push(Factor { direction: r.direction, function: self.ray_function(r)?, normal: self.joint.normal(&r.direction) });
        }
        out.sort_by(|a, b| angle_cmp(&a.direction, &b.direction));
        Ok(out)
    }

    /// `theta_r o ... o theta_1` for the half-lines met counterclockwise
    /// starting just below the first axis.
    pub fn loop_product(&self) -> Result<LogAutomorphism> {
        compose_factors(self.ring(), self.factors()?.iter())
    }

    /// Composite of the factors met strictly after the half-line `q`.
    fn after(&self, q: &[i64; 2]) -> Result<LogAutomorphism> {
        let fs = self.factors()?;
        compose_factors(self.ring(), fs.iter().filter(|f| angle_cmp(&f.direction, q) == Ordering::Greater))
    }

    /// The same diagram in the ring of order `k`.
    pub fn at_order(&self, k: i64) -> Result<Self> {
        let joint = self.joint.with_order(k)?;
        let ctx = joint.ctx().clone();
        let cuts = self
            .cuts
            .iter()
            .map(|c| Ok(Cut { direction: c.direction, function: c.function.recontext(&ctx)?, label: c.label.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScatteringDiagram { joint, cuts, rays: self.rays.clone() })
    }

    fn check_previous_order(&self, k: i64) -> Result<()> {
        if k <= 0 {
            return Ok(());
        }
        let prev = self.at_order(k - 1)?;
        let theta = prev.loop_product()?;
        if !theta.is_identity() {
            let what = theta.log().ok().and_then(|x| x.to_json().ok()).map(|j| format!("{:?}", j.terms)).unwrap_or_default();
            return Err(ScatterError::InconsistentInput(format!("loop is not trivial at order {}: {what}", k - 1)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> DiagramJson {
        let ctx = self.ctx();
        DiagramJson {
            joint: JointJson {
                rank: ctx.rank(),
                slopes: ctx.slopes().to_vec(),
                stratum: ctx.stratum().to_vec(),
                order: ctx.order(),
                projection: self.joint.projection.clone(),
                codim: self.joint.codim,
            },
            cuts: self
                .cuts
                .iter()
                .map(|c| CutJson { rho: c.label.clone(), dir: c.direction, f: c.function.to_json() })
                .collect(),
            rays: self
                .rays
                .iter()
                .map(|r| RayJson { dir: r.direction, m: r.exponent.mbar.clone(), h: r.exponent.h, c: fmt_q(&r.coeff), kind: Some(r.kind) })
                .collect(),
            lines: vec![],
        }
    }

    pub fn from_json(j: &DiagramJson) -> Result<Self> {
        let jj = &j.joint;
        if jj.slopes.is_empty() || jj.slopes.iter().any(|s| s.len() != jj.rank) {
            return Err(ScatterError::Malformed("slopes must be non-empty and match the rank".into()));
        }
        if jj.projection.iter().any(|p| p.len() != jj.rank) {
            return Err(ScatterError::Malformed("projection covectors must match the rank".into()));
        }
        let stratum = if jj.stratum.is_empty() { (0..jj.slopes.len()).collect() } else { jj.stratum.clone() };
        if stratum.iter().any(|&i| i >= jj.slopes.len()) {
            return Err(ScatterError::Malformed("stratum index out of range".into()));
        }
        let ctx = OrderContext::new(jj.rank, jj.slopes.clone(), stratum, jj.order);
        let mut cuts = vec![];
        for c in &j.cuts {
            cuts.push(Cut { direction: c.dir, function: TruncatedPoly::from_json(&ctx, &c.f)?, label: c.rho.clone() });
        }
        let fs: Vec<TruncatedPoly> = cuts.iter().map(|c| c.function.clone()).collect();
        let joint = JointContext::new(&ctx, jj.projection.clone(), jj.codim, &fs)?;
        let mut d = ScatteringDiagram { joint, cuts, rays: vec![] };
        let parse = |r: &RayJson| -> Result<(Exponent, Q)> {
            if r.m.len() != jj.rank {
                return Err(ScatterError::Malformed(format!("exponent {:?} has the wrong rank", r.m)));
            }
            let c = parse_q(&r.c).ok_or_else(|| ScatterError::Malformed(format!("bad coefficient {}", r.c)))?;
            let m = Exponent::new(r.m.clone(), r.h);
            if !ctx.in_monoid(&m) {
                return Err(ScatterError::Malformed(format!("exponent {m} is not in the monoid")));
            }
            Ok((m, c))
        };
        for r in &j.rays {
            let (m, c) = parse(r)?;
            d.add_ray(r.dir, m, c);
        }
        for r in &j.lines {
            let (m, c) = parse(r)?;
            d.add_line(m, c);
        }
        Ok(d)
    }

    /// Rank-2 picture: rays as colored half-lines labelled by `(m, c)`,
    /// cuts dashed.
    pub fn render_svg(&self) -> String {
        let size = 400.0;
        let c = size / 2.0;
        let r = size * 0.42;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
        );
        s.push_str(&format!("<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n"));
        let end = |d: &[i64; 2], scale: f64| {
            let len = ((d[0] * d[0] + d[1] * d[1]) as f64).sqrt();
            (c + scale * r * d[0] as f64 / len, c - scale * r * d[1] as f64 / len)
        };
        for cut in &self.cuts {
            let (x, y) = end(&cut.direction, 1.0);
            s.push_str(&format!(
                "<line x1=\"{c}\" y1=\"{c}\" x2=\"{x:.1}\" y2=\"{y:.1}\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n"
            ));
            let (lx, ly) = end(&cut.direction, 1.05);
            s.push_str(&format!("<text x=\"{lx:.1}\" y=\"{ly:.1}\" font-size=\"10\">{}: {}</text>\n", xml_escape(&cut.label), xml_escape(&cut.function.to_string())));
        }
        let mut counts: BTreeMap<[i64; 2], usize> = BTreeMap::new();
        for ray in &self.rays {
            let color = match ray.kind {
                RayKind::Incoming => "steelblue",
                RayKind::Outgoing => "crimson",
                RayKind::Undirectional => "darkgreen",
            };
            let (x, y) = end(&ray.direction, 1.0);
            s.push_str(&format!("<line x1=\"{c}\" y1=\"{c}\" x2=\"{x:.1}\" y2=\"{y:.1}\" stroke=\"{color}\"/>\n"));
            let n = counts.entry(prim2(ray.direction)).or_insert(0);
            let (lx, ly) = end(&ray.direction, 0.55 + 0.1 * *n as f64);
            *n += 1;
            s.push_str(&format!(
                "<text x=\"{lx:.1}\" y=\"{ly:.1}\" font-size=\"10\" fill=\"{color}\">({}, {})</text>\n",
                ray.exponent,
                fmt_q(&ray.coeff)
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn compose_factors<'a, I: Iterator<Item = &'a Factor>>(ring: &Arc<LocalRing>, fs: I) -> Result<LogAutomorphism> {
    let mut acc = LogAutomorphism::identity(ring);
    for f in fs {
        let c = LogAutomorphism::crossing(&f.function, &f.normal)?;
        acc = c.compose(&acc)?;
    }
    Ok(acc)
}

/// Numerator terms of `xi` grouped by `(degree, primitive projected direction)`.
fn classes(xi: &LogDerivation, joint: &JointContext) -> BTreeSet<(i64, [i64; 2])> {
    let ctx = joint.ctx();
    let mut out = BTreeSet::new();
    for c in &xi.components {
        for m in c.num.terms().keys() {
            let p = joint.project(&m.mbar);
            let dir = if p == [0, 0] { p } else { prim2(p) };
            out.insert((ctx.degree(m), dir));
        }
    }
    out
}

fn restrict(xi: &LogDerivation, joint: &JointContext, degree: i64, dir: [i64; 2]) -> LogDerivation {
    let ctx = joint.ctx().clone();
    let comps = xi
        .components
        .iter()
        .map(|c| {
            let num = c.num.filter(|m| {
                let p = joint.project(&m.mbar);
                let d = if p == [0, 0] { p } else { prim2(p) };
                ctx.degree(m) == degree && d == dir
            });
            LocalizedElement::new(xi.ring(), num, c.den.clone())
        })
        .collect();
    LogDerivation::from_components(xi.ring(), comps)
}

/// Writes `eta = a d_n`, or fails when `eta` has a component off `n`.
fn along(eta: &LogDerivation, n: &[i64]) -> Result<LocalizedElement> {
    let j = n.iter().position(|x| *x != 0).ok_or_else(|| ScatterError::NotInClass("zero normal".into()))?;
    let a = eta.components[j].scale(&lattice::qr(1, n[j])).reduce();
    let back = LogDerivation::from_elem_dir(&a, n);
    if back != *eta {
        return Err(ScatterError::NotInClass("derivation is not a multiple of the half-line normal".into()));
    }
    Ok(a)
}

/// Shared order-by-order completion.
fn complete(d: &ScatteringDiagram, opts: &CompletionOptions) -> Result<Completion> {
    let mut cur = d.clone();
    let joint = cur.joint.clone();
    let ring = joint.ring.clone();
    let mut residual_classes: BTreeSet<(i64, [i64; 2])> = BTreeSet::new();
    let mut added_rays = vec![];
    let mut cut_changes: BTreeMap<usize, TruncatedPoly> = BTreeMap::new();
    let limit = 64 * (joint.ctx().max_degree() + 2) as usize;
    for _ in 0..limit {
        let theta = cur.loop_product()?;
        if theta.is_identity() {
            break;
        }
        let xi = theta.log().map_err(|e| ScatterError::InconsistentInput(format!("loop is not unipotent: {e}")))?;
        let open: Vec<(i64, [i64; 2])> = classes(&xi, &joint).into_iter().filter(|c| !residual_classes.contains(c)).collect();
        let Some(lowest) = open.iter().map(|c| c.0).min() else { break };
        let mut at: Vec<[i64; 2]> = open.iter().filter(|c| c.0 == lowest).map(|c| c.1).collect();
        if opts.order == ProcessingOrder::Descending {
            at.reverse();
        }
        let (deg, dir) = (lowest, at[0]);
        let piece = restrict(&xi, &joint, deg, dir);

        // target half-line
        let cut_line = |c: &Cut| {
            let p = prim2(c.direction);
            dir == [0, 0] || dir == p || dir == [-p[0], -p[1]]
        };
        let q = [-dir[0], -dir[1]];
        let target_cut = match opts.cut_target {
            Some(i) if cut_line(&cur.cuts[i]) => Some(i),
            _ if dir == [0, 0] => None,
            _ => cur.cuts.iter().position(|c| same_direction(&c.direction, &q)),
        };
        if dir == [0, 0] && target_cut.is_none() {
            residual_classes.insert((deg, dir));
            continue;
        }
        if target_cut.is_some() && opts.keep_cuts_fixed {
            residual_classes.insert((deg, dir));
            continue;
        }
        let position = match target_cut {
            Some(i) => cur.cuts[i].direction,
            None => q,
        };
        let a_inv = cur.after(&position)?.invert()?;
        let eta = a_inv.adjoint(&piece)?.neg().degree_part(deg).reduce();
        let n = joint.normal(&position);
        let a = along(&eta, &n)?;
        let witness = |a: &LocalizedElement| DenominatorWitness {
            direction: position,
            normal: n.clone(),
            function: LocalizedElement::one(&ring).sub(a),
            cut: target_cut,
        };
        match target_cut {
            Some(i) => {
                let f0 = cur.cuts[i].function.degree_part(0);
                let delta = a.mul_poly(&f0).neg().as_poly().ok_or_else(|| ScatterError::Denominator(Box::new(witness(&a))))?;
                if delta.is_zero() {
                    residual_classes.insert((deg, dir));
                    continue;
                }
                cur.cuts[i].function = &cur.cuts[i].function + &delta;
                let e = cut_changes.entry(i).or_insert_with(|| TruncatedPoly::zero(joint.ctx()));
                *e = &*e + &delta;
            }
            None => {
                let g = a.neg().as_poly().ok_or_else(|| ScatterError::Denominator(Box::new(witness(&a))))?;
                if g.is_zero() {
                    residual_classes.insert((deg, dir));
                    continue;
                }
                for (m, c) in g.terms() {
                    let p = joint.project(&m.mbar);
                    if p == [0, 0] || !same_direction(&p, &dir) {
                        return Err(ScatterError::NotInClass(format!("ray term {m} does not point along {dir:?}")));
                    }
                    let ray = Ray { direction: q, exponent: m.clone(), coeff: c.clone(), kind: RayKind::Outgoing };
                    cur.rays.push(ray.clone());
                    added_rays.push(ray);
                }
            }
        }
    }
    let theta = cur.loop_product()?;
    let residual = if theta.is_identity() {
        LogDerivation::zero(&ring)
    } else {
        theta.log().map_err(|e| ScatterError::InconsistentInput(e.to_string()))?
    };
    let leftover: Vec<(i64, [i64; 2])> = classes(&residual, &joint).into_iter().filter(|c| !residual_classes.contains(c)).collect();
    if !leftover.is_empty() {
        return Err(ScatterError::InconsistentInput(format!("completion did not converge, open classes {leftover:?}")));
    }
    Ok(Completion { diagram: cur, residual, added_rays, cut_changes: cut_changes.into_iter().collect() })
}

/// Completion at a joint in the interior of a maximal cell: outgoing rays
/// only, residual restricted to undirectional terms.
pub fn ks_complete_codim0(d: &ScatteringDiagram) -> Result<Completion> {
    ks_complete_codim0_with(d, ProcessingOrder::Ascending)
}

pub fn ks_complete_codim0_with(d: &ScatteringDiagram, order: ProcessingOrder) -> Result<Completion> {
    if !d.cuts.is_empty() || d.joint.codim != 0 {
        return Err(ScatterError::InconsistentInput("codimension-zero completion takes a diagram without cuts".into()));
    }
    d.check_previous_order(d.ctx().order())?;
    complete(d, &CompletionOptions { order, ..Default::default() })
}

/// Naive completion for joints in codimension one or two. Fails with a
/// witness when cancelling a defect term needs denominators.
pub fn naive_complete(d: &ScatteringDiagram, opts: &CompletionOptions) -> Result<Completion> {
    d.check_previous_order(d.ctx().order())?;
    complete(d, opts)
}

/// Equivalence modulo the truncation: per support direction and kind, the
/// products `prod (1 + c z^m)` agree, and cut functions agree.
pub fn diagrams_equivalent(a: &ScatteringDiagram, b: &ScatteringDiagram) -> Result<bool> {
    if !OrderContext::same(a.ctx(), b.ctx()) {
        return Err(ScatterError::OrderMismatch("diagrams live in different rings".into()));
    }
    if a.cuts.len() != b.cuts.len() {
        return Ok(false);
    }
    for (x, y) in a.cuts.iter().zip(&b.cuts) {
        if !same_direction(&x.direction, &y.direction) || x.function != y.function {
            return Ok(false);
        }
    }
    let products = |d: &ScatteringDiagram| -> Result<BTreeMap<([i64; 2], RayKind), TruncatedPoly>> {
        let mut out: BTreeMap<([i64; 2], RayKind), TruncatedPoly> = BTreeMap::new();
        for r in &d.rays {
            let f = d.ray_function(r)?.num;
            let e = out.entry((prim2(r.direction), r.kind)).or_insert_with(|| TruncatedPoly::one(d.ctx()));
            *e = &*e * &f;
        }
        out.retain(|_, p| !p.is_one());
        Ok(out)
    };
    Ok(products(a)? == products(b)?)
}

/// Adds `c z^m` to a cut function. Returns the new diagram and the
/// predicted leading change of the loop, `-c z^m / f d_n`.
pub fn perturb_cut(d: &ScatteringDiagram, cut: usize, m: &Exponent, c: &Q) -> Result<(ScatteringDiagram, LogDerivation)> {
    let ctx = d.ctx();
    if ctx.ord_max(m) != ctx.order() {
        return Err(ScatterError::OrderMismatch(format!("{m} is not of order {}", ctx.order())));
    }
    let cu = d.cuts.get(cut).ok_or_else(|| ScatterError::Malformed(format!("no cut {cut}")))?;
    let term = TruncatedPoly::monomial(ctx, m.clone(), c.clone())?;
    let mut out = d.clone();
    out.cuts[cut].function = &cu.function + &term;
    let f = LocalizedElement::from_poly(d.ring(), cu.function.clone());
    let ratio = LocalizedElement::from_poly(d.ring(), term).div(&f)?;
    let n = d.joint.normal(&cu.direction);
    Ok((out, LogDerivation::from_elem_dir(&ratio.neg(), &n)))
}

/// Adds a ray carrying `1 + c z^m` with `mbar` in the joint lattice. The
/// predicted change conjugates `-c z^m d_n` past the cuts met later on
/// the loop, using the closed form for cut automorphisms.
pub fn add_undirectional_ray(d: &ScatteringDiagram, direction: [i64; 2], m: &Exponent, c: &Q) -> Result<(ScatteringDiagram, LogDerivation)> {
    let ctx = d.ctx();
    if ctx.ord_max(m) != ctx.order() {
        return Err(ScatterError::OrderMismatch(format!("{m} is not of order {}", ctx.order())));
    }
    if d.joint.project(&m.mbar) != [0, 0] {
        return Err(ScatterError::NotInClass(format!("{m} is not tangent to the joint")));
    }
    let mut out = d.clone();
    out.add_ray(direction, m.clone(), c.clone());
    let n = d.joint.normal(&direction);
    let mut pred = LogDerivation::monomial(d.ring(), m.clone(), -c.clone(), &n)?;
    // innermost factor first: Ad_{F_r} ... Ad_{F_{i+1}}
    let mut later: Vec<&Cut> = d.cuts.iter().filter(|cu| angle_cmp(&cu.direction, &direction) == Ordering::Greater).collect();
    later.sort_by(|a, b| angle_cmp(&a.direction, &b.direction));
    for cu in later {
        let h = LocalizedElement::from_poly(d.ring(), cu.function.clone());
        let n0 = d.joint.normal(&cu.direction);
        let mut next = LogDerivation::zero(d.ring());
        for (j, comp) in pred.components.iter().enumerate() {
            let mut e = vec![0; n.len()];
            e[j] = 1;
            for (mm, cc) in comp.reduce().as_poly().ok_or(LogAutoError::NotPolynomial)?.terms() {
                next = next.add(&conjugation_closed_form(&h, &n0, mm, cc, &e)?);
            }
        }
        pred = next.reduce();
    }
    Ok((out, pred))
}

/// True when every numerator term of `xi` is tangent to the joint, or, with
/// `cut_line`, lies on that line.
pub fn residual_in_class(xi: &LogDerivation, joint: &JointContext, cut_line: Option<[i64; 2]>) -> bool {
    classes(xi, joint).iter().all(|(_, dir)| {
        *dir == [0, 0] || cut_line.is_some_and(|l| {
            let p = prim2(l);
            *dir == p || *dir == [-p[0], -p[1]]
        })
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointJson {
    pub rank: usize,
    pub slopes: Vec<Vec<i64>>,
    #[serde(default)]
    pub stratum: Vec<usize>,
    pub order: i64,
    pub projection: [Vec<i64>; 2],
    #[serde(default)]
    pub codim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutJson {
    pub rho: String,
    pub dir: [i64; 2],
    pub f: Vec<TermJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RayJson {
    pub dir: [i64; 2],
    pub m: Vec<i64>,
    pub h: i64,
    pub c: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<RayKind>,
}

/// Serialized diagram. `lines` is an input convenience: each entry becomes
/// an incoming and an outgoing ray.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramJson {
    pub joint: JointJson,
    #[serde(default)]
    pub cuts: Vec<CutJson>,
    #[serde(default)]
    pub rays: Vec<RayJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<RayJson>,
}

/// Ray automorphism exponent, handy for reports.
pub fn ray_exponent_covector(joint: &JointContext, r: &Ray) -> Vec<i64> {
    joint.normal(&r.direction).iter().map(|x| -x).collect()
}

impl fmt::Display for Ray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R>=0({},{}) 1 + {} z^{}", self.direction[0], self.direction[1], self.coeff, self.exponent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::q;

    fn plane(k: i64) -> ScatteringDiagram {
        let ctx = OrderContext::single_cell(2, vec![0, 0], k);
        ScatteringDiagram::new(JointContext::planar(&ctx, 0, &[]).unwrap())
    }

    #[test]
    fn angles_go_counterclockwise() {
        let mut v = vec![[0, -1], [-1, 0], [1, 0], [1, 1], [0, 1], [1, -1]];
        v.sort_by(angle_cmp);
        assert_eq!(v, vec![[1, 0], [1, 1], [0, 1], [-1, 0], [0, -1], [1, -1]]);
    }

    #[test]
    fn empty_diagram_has_identity_loop() {
        assert!(plane(3).loop_product().unwrap().is_identity());
    }

    #[test]
    fn opposite_cuts_with_equal_functions_cancel() {
        let mut d = plane(2);
        let ctx = d.ctx().clone();
        let x = TruncatedPoly::monomial(&ctx, Exponent::new(vec![1, 0], 1), q(1)).unwrap();
        let f = &TruncatedPoly::one(&ctx) + &x;
        d.add_cut([1, 0], f.clone(), "a");
        d.add_cut([-1, 0], f, "b");
        assert!(d.loop_product().unwrap().is_identity());
    }

    #[test]
    fn single_line_is_consistent() {
        let mut d = plane(3);
        d.add_line(Exponent::new(vec![1, 0], 1), q(1));
        assert!(d.loop_product().unwrap().is_identity());
    }
}
