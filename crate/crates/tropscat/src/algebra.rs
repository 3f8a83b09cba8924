//! Exponents, order functions and truncated monoid algebras with exact
//! rational coefficients, plus localization at slab functions.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{self, fmt_q, parse_q, IMat, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("operands live in different order contexts")]
    ContextMismatch,
    #[error("cell index {0} is not part of the order context")]
    CellMismatch(usize),
    #[error("exponent {0} is not in the monoid")]
    NotInMonoid(Exponent),
    #[error("not divisible: monomial {witness} cannot be cleared at degree {degree}")]
    NotDivisible { witness: Exponent, degree: i64 },
    #[error("element is not a unit: {0}")]
    NotUnit(String),
    #[error("divisor has no degree-zero part")]
    ZeroLeadingPart,
    #[error("malformed coefficient {0:?}")]
    BadCoefficient(String),
    #[error("exponent has rank {got}, context expects {expected}")]
    RankMismatch { expected: usize, got: usize },
}

/// An exponent `m = (mbar, h)`: a tangent vector `mbar` together with the
/// affine part `h`. The monomial `t` is `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exponent {
    pub mbar: Vec<i64>,
    pub h: i64,
}

impl Exponent {
    pub fn new(mbar: Vec<i64>, h: i64) -> Self {
        Exponent { mbar, h }
    }

    pub fn zero(rank: usize) -> Self {
        Exponent { mbar: vec![0; rank], h: 0 }
    }

    pub fn t(rank: usize) -> Self {
        Exponent { mbar: vec![0; rank], h: 1 }
    }

    pub fn rank(&self) -> usize {
        self.mbar.len()
    }

    pub fn is_zero(&self) -> bool {
        self.h == 0 && lattice::is_zero(&self.mbar)
    }

    /// True when `mbar = 0`, i.e. the monomial is a power of `t`.
    pub fn is_pure_t(&self) -> bool {
        lattice::is_zero(&self.mbar)
    }

    pub fn plus(&self, o: &Exponent) -> Exponent {
        Exponent { mbar: lattice::add(&self.mbar, &o.mbar), h: self.h + o.h }
    }

    pub fn minus(&self, o: &Exponent) -> Exponent {
        Exponent { mbar: lattice::sub(&self.mbar, &o.mbar), h: self.h - o.h }
    }

    pub fn neg(&self) -> Exponent {
        self.times(-1)
    }

    pub fn times(&self, s: i64) -> Exponent {
        Exponent { mbar: lattice::scale(&self.mbar, s), h: self.h * s }
    }

    /// Apply a linear chart change to `mbar`, keeping `h`.
    pub fn transport(&self, map: &IMat) -> Exponent {
        Exponent { mbar: lattice::mat_vec(map, &self.mbar), h: self.h }
    }

    fn coords(&self) -> impl Iterator<Item = i64> + '_ {
        self.mbar.iter().copied().chain(std::iter::once(self.h))
    }
}

impl Ord for Exponent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.h, &self.mbar).cmp(&(other.h, &other.mbar))
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.mbar.iter().map(|x| x.to_string()).collect();
        write!(f, "({};{})", parts.join(","), self.h)
    }
}

/// Coefficient ring flag. `Integer` does not change arithmetic; it marks
/// computations whose outputs are expected to stay integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffRing {
    #[default]
    Rational,
    Integer,
}

/// Monoid and truncation data for a ring `k[P]/I^{>k}`.
///
/// `slopes` lists `lambda_sigma` for every maximal cell whose order function
/// must be non-negative on the monoid. `stratum` indexes the cells that
/// contain the truncation stratum; the order used for truncation is the
/// maximum over those.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderContext {
    rank: usize,
    slopes: Vec<Vec<i64>>,
    stratum: Vec<usize>,
    order: i64,
    ring: CoeffRing,
}

impl OrderContext {
    pub fn new(rank: usize, slopes: Vec<Vec<i64>>, stratum: Vec<usize>, order: i64) -> Arc<Self> {
        assert!(slopes.iter().all(|s| s.len() == rank), "slope rank mismatch");
        assert!(stratum.iter().all(|&i| i < slopes.len()), "stratum index out of range");
        assert!(!stratum.is_empty(), "empty stratum");
        Arc::new(OrderContext { rank, slopes, stratum, order, ring: CoeffRing::Rational })
    }

    /// Ring attached to a point in the interior of one maximal cell.
    pub fn single_cell(rank: usize, slope: Vec<i64>, order: i64) -> Arc<Self> {
        Self::new(rank, vec![slope], vec![0], order)
    }

    /// Context whose truncation stratum uses every cell.
    pub fn full(rank: usize, slopes: Vec<Vec<i64>>, order: i64) -> Arc<Self> {
        let n = slopes.len();
        Self::new(rank, slopes, (0..n).collect(), order)
    }

    pub fn with_order(&self, order: i64) -> Arc<Self> {
        Arc::new(OrderContext { order, ..self.clone() })
    }

    pub fn with_ring(&self, ring: CoeffRing) -> Arc<Self> {
        Arc::new(OrderContext { ring, ..self.clone() })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> i64 {
        self.order
    }

    pub fn ring(&self) -> CoeffRing {
        self.ring
    }

    pub fn slopes(&self) -> &[Vec<i64>] {
        &self.slopes
    }

    pub fn stratum(&self) -> &[usize] {
        &self.stratum
    }

    /// `ord_sigma(m) = <mbar, -lambda_sigma> + h`.
    pub fn ord(&self, m: &Exponent, cell: usize) -> Result<i64, AlgebraError> {
        let s = self.slopes.get(cell).ok_or(AlgebraError::CellMismatch(cell))?;
        Ok(m.h - lattice::dot(s, &m.mbar))
    }

    fn ord_unchecked(&self, m: &Exponent, cell: usize) -> i64 {
        m.h - lattice::dot(&self.slopes[cell], &m.mbar)
    }

    /// Maximum of the order over the cells of the truncation stratum.
    pub fn ord_max(&self, m: &Exponent) -> i64 {
        self.stratum.iter().map(|&i| self.ord_unchecked(m, i)).max().unwrap()
    }

    /// Maximum of the order over an arbitrary subset of cells.
    pub fn ord_over(&self, m: &Exponent, cells: &[usize]) -> Result<i64, AlgebraError> {
        let mut best = None;
        for &c in cells {
            let o = self.ord(m, c)?;
            best = Some(best.map_or(o, |b: i64| b.max(o)));
        }
        best.ok_or(AlgebraError::CellMismatch(usize::MAX))
    }

    pub fn in_monoid(&self, m: &Exponent) -> bool {
        m.rank() == self.rank && (0..self.slopes.len()).all(|i| self.ord_unchecked(m, i) >= 0)
    }

    pub fn alive(&self, m: &Exponent) -> bool {
        self.in_monoid(m) && self.ord_max(m) <= self.order
    }

    /// Grading by the sum of orders over the stratum cells. It is additive,
    /// non-negative on the monoid and vanishes exactly on the face of order
    /// zero monomials.
    pub fn degree(&self, m: &Exponent) -> i64 {
        self.stratum.iter().map(|&i| self.ord_unchecked(m, i)).sum()
    }

    pub fn max_degree(&self) -> i64 {
        self.stratum.len() as i64 * self.order.max(0)
    }

    /// True when `-m` is also in the monoid.
    pub fn is_unit_exponent(&self, m: &Exponent) -> bool {
        self.in_monoid(m) && self.in_monoid(&m.neg())
    }

    pub fn same(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b) || **a == **b
    }
}

/// Finite sum `sum c_m z^m` modulo the order ideal of its context.
#[derive(Clone, Debug)]
pub struct TruncatedPoly {
    ctx: Arc<OrderContext>,
    terms: BTreeMap<Exponent, Q>,
}

impl PartialEq for TruncatedPoly {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms && OrderContext::same(&self.ctx, &other.ctx)
    }
}

impl TruncatedPoly {
    pub fn zero(ctx: &Arc<OrderContext>) -> Self {
        TruncatedPoly { ctx: ctx.clone(), terms: BTreeMap::new() }
    }

    pub fn one(ctx: &Arc<OrderContext>) -> Self {
        Self::constant(ctx, Q::one())
    }

    pub fn constant(ctx: &Arc<OrderContext>, c: Q) -> Self {
        let mut p = Self::zero(ctx);
        p.add_term(Exponent::zero(ctx.rank), c);
        p
    }

    pub fn monomial(ctx: &Arc<OrderContext>, m: Exponent, c: Q) -> Result<Self, AlgebraError> {
        if m.rank() != ctx.rank {
            return Err(AlgebraError::RankMismatch { expected: ctx.rank, got: m.rank() });
        }
        if !ctx.in_monoid(&m) {
            return Err(AlgebraError::NotInMonoid(m));
        }
        let mut p = Self::zero(ctx);
        p.add_term(m, c);
        Ok(p)
    }

    pub fn t_power(ctx: &Arc<OrderContext>, k: i64, c: Q) -> Self {
        Self::monomial(ctx, Exponent::t(ctx.rank).times(k), c).expect("t is in every monoid")
    }

    pub fn from_terms<I>(ctx: &Arc<OrderContext>, terms: I) -> Result<Self, AlgebraError>
    where
        I: IntoIterator<Item = (Exponent, Q)>,
    {
        let mut p = Self::zero(ctx);
        for (m, c) in terms {
            if m.rank() != ctx.rank {
                return Err(AlgebraError::RankMismatch { expected: ctx.rank, got: m.rank() });
            }
            if !ctx.in_monoid(&m) {
                return Err(AlgebraError::NotInMonoid(m));
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    /// Add a term, dropping it if it is truncated. The exponent must lie in
    /// the monoid.
    pub(crate) fn add_term(&mut self, m: Exponent, c: Q) {
        if c.is_zero() || !self.ctx.alive(&m) {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = e.get_mut();
                lattice::qadd_assign(v, &c);
                if v.is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn ctx(&self) -> &Arc<OrderContext> {
        &self.ctx
    }

    pub fn terms(&self) -> &BTreeMap<Exponent, Q> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.constant_term().is_one()
    }

    pub fn coeff(&self, m: &Exponent) -> Q {
        self.terms.get(m).cloned().unwrap_or_else(Q::zero)
    }

    pub fn constant_term(&self) -> Q {
        self.coeff(&Exponent::zero(self.ctx.rank))
    }

    pub fn is_monomial(&self) -> bool {
        self.terms.len() == 1
    }

    pub fn is_integral(&self) -> bool {
        self.terms.values().all(|c| c.is_integer())
    }

    fn check(&self, o: &Self) -> Result<(), AlgebraError> {
        if OrderContext::same(&self.ctx, &o.ctx) {
            Ok(())
        } else {
            Err(AlgebraError::ContextMismatch)
        }
    }

    pub fn checked_add(&self, o: &Self) -> Result<Self, AlgebraError> {
        self.check(o)?;
        let mut r = self.clone();
        for (m, c) in &o.terms {
            r.add_term(m.clone(), c.clone());
        }
        Ok(r)
    }

    pub fn checked_sub(&self, o: &Self) -> Result<Self, AlgebraError> {
        self.check(o)?;
        let mut r = self.clone();
        for (m, c) in &o.terms {
            r.add_term(m.clone(), -c.clone());
        }
        Ok(r)
    }

    pub fn checked_mul(&self, o: &Self) -> Result<Self, AlgebraError> {
        self.check(o)?;
        let mut r = Self::zero(&self.ctx);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                r.add_term(m1.plus(m2), lattice::qmul(c1, c2));
            }
        }
        Ok(r)
    }

    pub fn scale(&self, s: &Q) -> Self {
        if s.is_zero() {
            return Self::zero(&self.ctx);
        }
        TruncatedPoly {
            ctx: self.ctx.clone(),
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut r = Self::one(&self.ctx);
        for _ in 0..e {
            r = &r * self;
            if r.is_zero() {
                break;
            }
        }
        r
    }

    /// Multiply by a monomial `z^m`; terms leaving the monoid are an error.
    pub fn shift(&self, m: &Exponent) -> Result<Self, AlgebraError> {
        let mut r = Self::zero(&self.ctx);
        for (e, c) in &self.terms {
            let s = e.plus(m);
            if !self.ctx.in_monoid(&s) {
                return Err(AlgebraError::NotInMonoid(s));
            }
            r.add_term(s, c.clone());
        }
        Ok(r)
    }

    /// Log derivative along `n`: `z^m -> <mbar, n> z^m`.
    pub fn derivative(&self, n: &[i64]) -> Self {
        let mut r = Self::zero(&self.ctx);
        for (m, c) in &self.terms {
            let d = lattice::dot(&m.mbar, n);
            if d != 0 {
                r.add_term(m.clone(), c * lattice::q(d));
            }
        }
        r
    }

    pub fn degree_part(&self, d: i64) -> Self {
        TruncatedPoly {
            ctx: self.ctx.clone(),
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| self.ctx.degree(m) == d)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Terms whose order on the truncation stratum is exactly `k`.
    pub fn order_part(&self, k: i64) -> Self {
        self.filter(|m| self.ctx.ord_max(m) == k)
    }

    pub fn filter<F: Fn(&Exponent) -> bool>(&self, keep: F) -> Self {
        TruncatedPoly {
            ctx: self.ctx.clone(),
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| keep(m))
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Reinterpret in another context with the same rank, dropping terms
    /// that are truncated there.
    pub fn recontext(&self, ctx: &Arc<OrderContext>) -> Result<Self, AlgebraError> {
        let mut r = Self::zero(ctx);
        for (m, c) in &self.terms {
            if !ctx.in_monoid(m) {
                return Err(AlgebraError::NotInMonoid(m.clone()));
            }
            r.add_term(m.clone(), c.clone());
        }
        Ok(r)
    }

    /// Apply a map to every exponent and land in `ctx`.
    pub fn map_exponents<F>(&self, ctx: &Arc<OrderContext>, f: F) -> Result<Self, AlgebraError>
    where
        F: Fn(&Exponent) -> Exponent,
    {
        let mut r = Self::zero(ctx);
        for (m, c) in &self.terms {
            let e = f(m);
            if !ctx.in_monoid(&e) {
                return Err(AlgebraError::NotInMonoid(e));
            }
            r.add_term(e, c.clone());
        }
        Ok(r)
    }

    /// Exact division `self / f` inside the truncated ring. `f` needs a
    /// nonzero degree-zero part. Solved degree by degree; each step is an
    /// exact Laurent division by the degree-zero part of `f`.
    pub fn try_divide(&self, f: &Self) -> Result<Self, AlgebraError> {
        self.check(f)?;
        let f0 = f.degree_part(0);
        if f0.is_zero() {
            return Err(AlgebraError::ZeroLeadingPart);
        }
        let mut rem = self.clone();
        let mut quot = Self::zero(&self.ctx);
        for d in 0..=self.ctx.max_degree() {
            let rd = rem.degree_part(d);
            if rd.is_zero() {
                continue;
            }
            let qd = laurent_divide(&rd, &f0, d)?;
            rem = &rem - &(&qd * f);
            quot = &quot + &qd;
        }
        debug_assert!(rem.is_zero());
        Ok(quot)
    }

    pub fn to_json(&self) -> Vec<TermJson> {
        self.terms
            .iter()
            .map(|(m, c)| TermJson { mbar: m.mbar.clone(), h: m.h, coeff: fmt_q(c) })
            .collect()
    }

    pub fn from_json(ctx: &Arc<OrderContext>, terms: &[TermJson]) -> Result<Self, AlgebraError> {
        let parsed = terms
            .iter()
            .map(|t| {
                let c = parse_q(&t.coeff).ok_or_else(|| AlgebraError::BadCoefficient(t.coeff.clone()))?;
                Ok((Exponent::new(t.mbar.clone(), t.h), c))
            })
            .collect::<Result<Vec<_>, AlgebraError>>()?;
        Self::from_terms(ctx, parsed)
    }
}

/// Exact division in the Laurent ring by lex-leading terms. The quotient of
/// an exact division has its support inside the coordinate box
/// `[min(r) - min(f), max(r) - max(f)]`, which bounds the loop.
fn laurent_divide(r: &TruncatedPoly, f0: &TruncatedPoly, degree: i64) -> Result<TruncatedPoly, AlgebraError> {
    let ctx = r.ctx.clone();
    let dim = ctx.rank + 1;
    let bounds = |p: &TruncatedPoly| {
        let mut lo = vec![i64::MAX; dim];
        let mut hi = vec![i64::MIN; dim];
        for m in p.terms.keys() {
            for (i, x) in m.coords().enumerate() {
                lo[i] = lo[i].min(x);
                hi[i] = hi[i].max(x);
            }
        }
        (lo, hi)
    };
    let (rlo, rhi) = bounds(r);
    let (flo, fhi) = bounds(f0);
    let box_lo: Vec<i64> = rlo.iter().zip(&flo).map(|(a, b)| a - b).collect();
    let box_hi: Vec<i64> = rhi.iter().zip(&fhi).map(|(a, b)| a - b).collect();
    let (lead_m, lead_c) = f0.terms.iter().next_back().map(|(m, c)| (m.clone(), c.clone())).unwrap();

    let mut rem: BTreeMap<Exponent, Q> = r.terms.clone();
    let mut quot = TruncatedPoly::zero(&ctx);
    while let Some((m, c)) = rem.iter().next_back().map(|(m, c)| (m.clone(), c.clone())) {
        let qm = m.minus(&lead_m);
        let inside = qm.coords().enumerate().all(|(i, x)| box_lo[i] <= x && x <= box_hi[i]);
        if !inside || !ctx.in_monoid(&qm) {
            return Err(AlgebraError::NotDivisible { witness: m, degree });
        }
        let qc = &c / &lead_c;
        for (fm, fc) in &f0.terms {
            let e = qm.plus(fm);
            let v = rem.entry(e.clone()).or_insert_with(Q::zero);
            *v -= &qc * fc;
            if v.is_zero() {
                rem.remove(&e);
            }
        }
        quot.add_term(qm, qc);
    }
    Ok(quot)
}

/// One term of the canonical serialization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermJson {
    pub mbar: Vec<i64>,
    pub h: i64,
    pub coeff: String,
}

impl fmt::Display for TruncatedPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| if m.is_zero() { c.to_string() } else { format!("{c}*z^{m}") })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Add for &TruncatedPoly {
    type Output = TruncatedPoly;
    fn add(self, o: &TruncatedPoly) -> TruncatedPoly {
        self.checked_add(o).expect("context mismatch in add")
    }
}

impl Sub for &TruncatedPoly {
    type Output = TruncatedPoly;
    fn sub(self, o: &TruncatedPoly) -> TruncatedPoly {
        self.checked_sub(o).expect("context mismatch in sub")
    }
}

impl Mul for &TruncatedPoly {
    type Output = TruncatedPoly;
    fn mul(self, o: &TruncatedPoly) -> TruncatedPoly {
        self.checked_mul(o).expect("context mismatch in mul")
    }
}

impl Neg for &TruncatedPoly {
    type Output = TruncatedPoly;
    fn neg(self) -> TruncatedPoly {
        self.scale(&-Q::one())
    }
}

/// A truncated ring localized at finitely many functions. Only the
/// degree-zero part of each function is stored: a function is a unit exactly
/// when its degree-zero part is, so the localized ring is the same.
#[derive(Clone, Debug)]
pub struct LocalRing {
    ctx: Arc<OrderContext>,
    localizers: Vec<TruncatedPoly>,
}

impl LocalRing {
    pub fn new(ctx: &Arc<OrderContext>, functions: &[TruncatedPoly]) -> Result<Arc<Self>, AlgebraError> {
        let mut localizers: Vec<TruncatedPoly> = vec![];
        for f in functions {
            if !OrderContext::same(ctx, &f.ctx) {
                return Err(AlgebraError::ContextMismatch);
            }
            let f0 = f.degree_part(0);
            if f0.is_zero() {
                return Err(AlgebraError::ZeroLeadingPart);
            }
            if f0.is_monomial() || localizers.contains(&f0) {
                continue;
            }
            localizers.push(f0);
        }
        Ok(Arc::new(LocalRing { ctx: ctx.clone(), localizers }))
    }

    pub fn polynomial(ctx: &Arc<OrderContext>) -> Arc<Self> {
        Arc::new(LocalRing { ctx: ctx.clone(), localizers: vec![] })
    }

    pub fn ctx(&self) -> &Arc<OrderContext> {
        &self.ctx
    }

    pub fn localizers(&self) -> &[TruncatedPoly] {
        &self.localizers
    }

    pub fn index_of(&self, f: &TruncatedPoly) -> Option<usize> {
        let f0 = f.degree_part(0);
        self.localizers.iter().position(|g| *g == f0)
    }

    fn power(&self, i: usize, e: u32) -> TruncatedPoly {
        self.localizers[i].pow(e)
    }

    fn den_poly(&self, den: &[u32]) -> TruncatedPoly {
        let mut r = TruncatedPoly::one(&self.ctx);
        for (i, &e) in den.iter().enumerate() {
            if e > 0 {
                r = &r * &self.power(i, e);
            }
        }
        r
    }

    pub fn same(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b)
            || (OrderContext::same(&a.ctx, &b.ctx) && a.localizers == b.localizers)
    }
}

/// `num / prod f_i^{den_i}` in a localized truncated ring.
#[derive(Clone, Debug)]
pub struct LocalizedElement {
    ring: Arc<LocalRing>,
    pub num: TruncatedPoly,
    pub den: Vec<u32>,
}

impl PartialEq for LocalizedElement {
    fn eq(&self, other: &Self) -> bool {
        LocalRing::same(&self.ring, &other.ring) && self.sub(other).is_zero()
    }
}

impl LocalizedElement {
    pub fn from_poly(ring: &Arc<LocalRing>, p: TruncatedPoly) -> Self {
        let n = ring.localizers.len();
        LocalizedElement { ring: ring.clone(), num: p, den: vec![0; n] }
    }

    pub fn new(ring: &Arc<LocalRing>, num: TruncatedPoly, den: Vec<u32>) -> Self {
        assert_eq!(den.len(), ring.localizers.len(), "denominator multi-index length");
        LocalizedElement { ring: ring.clone(), num, den }
    }

    pub fn zero(ring: &Arc<LocalRing>) -> Self {
        Self::from_poly(ring, TruncatedPoly::zero(&ring.ctx))
    }

    pub fn one(ring: &Arc<LocalRing>) -> Self {
        Self::from_poly(ring, TruncatedPoly::one(&ring.ctx))
    }

    pub fn constant(ring: &Arc<LocalRing>, c: Q) -> Self {
        Self::from_poly(ring, TruncatedPoly::constant(&ring.ctx, c))
    }

    /// `1 / f_i` for the localizer at index `i`.
    pub fn inv_localizer(ring: &Arc<LocalRing>, i: usize) -> Self {
        let mut den = vec![0; ring.localizers.len()];
        den[i] = 1;
        LocalizedElement { ring: ring.clone(), num: TruncatedPoly::one(&ring.ctx), den }
    }

    pub fn ring(&self) -> &Arc<LocalRing> {
        &self.ring
    }

    pub fn ctx(&self) -> &Arc<OrderContext> {
        &self.ring.ctx
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.iter().all(|&d| d == 0)
    }

    pub fn is_one(&self) -> bool {
        self.sub(&Self::one(&self.ring)).is_zero()
    }

    fn rebase(&self, target: &[u32]) -> TruncatedPoly {
        let extra: Vec<u32> = target.iter().zip(&self.den).map(|(t, d)| t - d).collect();
        if extra.iter().all(|&e| e == 0) {
            return self.num.clone();
        }
        &self.num * &self.ring.den_poly(&extra)
    }

    pub fn add(&self, o: &Self) -> Self {
        let d: Vec<u32> = self.den.iter().zip(&o.den).map(|(a, b)| *a.max(b)).collect();
        let num = &self.rebase(&d) + &o.rebase(&d);
        LocalizedElement { ring: self.ring.clone(), num, den: d }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Self {
        LocalizedElement { ring: self.ring.clone(), num: -&self.num, den: self.den.clone() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        LocalizedElement {
            ring: self.ring.clone(),
            num: &self.num * &o.num,
            den: self.den.iter().zip(&o.den).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn mul_poly(&self, p: &TruncatedPoly) -> Self {
        LocalizedElement { ring: self.ring.clone(), num: &self.num * p, den: self.den.clone() }
    }

    pub fn scale(&self, s: &Q) -> Self {
        LocalizedElement { ring: self.ring.clone(), num: self.num.scale(s), den: self.den.clone() }
    }

    /// Integer power; negative exponents go through `inverse`.
    pub fn pow(&self, e: i64) -> Result<Self, AlgebraError> {
        let base = if e < 0 { self.inverse()? } else { self.clone() };
        let mut r = Self::one(&self.ring);
        for _ in 0..e.unsigned_abs() {
            r = r.mul(&base);
            if r.is_zero() {
                break;
            }
        }
        Ok(r)
    }

    /// Cancel localizer factors from the numerator as far as possible.
    pub fn reduce(&self) -> Self {
        let mut num = self.num.clone();
        let mut den = self.den.clone();
        for (d, f) in den.iter_mut().zip(&self.ring.localizers) {
            while *d > 0 {
                match num.try_divide(f) {
                    Ok(q) => {
                        num = q;
                        *d -= 1;
                    }
                    Err(_) => break,
                }
            }
        }
        LocalizedElement { ring: self.ring.clone(), num, den }
    }

    /// Degree-zero part (modulo `I_0`).
    pub fn degree0(&self) -> Self {
        LocalizedElement { ring: self.ring.clone(), num: self.num.degree_part(0), den: self.den.clone() }
    }

    /// True when the element is congruent to 1 modulo `I_0`.
    pub fn is_unipotent(&self) -> bool {
        self.sub(&Self::one(&self.ring)).degree0().is_zero()
    }

    /// Log derivative along `n`, by the quotient rule.
    pub fn derivative(&self, n: &[i64]) -> Self {
        let mut r = LocalizedElement {
            ring: self.ring.clone(),
            num: self.num.derivative(n),
            den: self.den.clone(),
        };
        for (i, &a) in self.den.iter().enumerate() {
            if a == 0 {
                continue;
            }
            let df = self.ring.localizers[i].derivative(n);
            if df.is_zero() {
                continue;
            }
            let mut den = self.den.clone();
            den[i] += 1;
            let term = LocalizedElement {
                ring: self.ring.clone(),
                num: (&self.num * &df).scale(&-lattice::q(a as i64)),
                den,
            };
            r = r.add(&term);
        }
        r
    }

    /// Multiplicative inverse. The degree-zero part of the numerator is
    /// factored as `c z^lambda prod f_i^{beta_i}`; the rest is nilpotent and
    /// inverted by a finite geometric series.
    pub fn inverse(&self) -> Result<Self, AlgebraError> {
        let ring = &self.ring;
        let ctx = &ring.ctx;
        let n0 = self.num.degree_part(0);
        if n0.is_zero() {
            return Err(AlgebraError::NotUnit(self.num.to_string()));
        }
        let mut rest = n0;
        let mut beta = vec![0u32; ring.localizers.len()];
        for (i, f) in ring.localizers.iter().enumerate() {
            while !rest.is_monomial() {
                match rest.try_divide(f) {
                    Ok(q) => {
                        rest = q;
                        beta[i] += 1;
                    }
                    Err(_) => break,
                }
            }
        }
        let (lam, c) = match rest.terms.iter().next() {
            Some((m, c)) if rest.is_monomial() && ctx.is_unit_exponent(m) => (m.clone(), c.clone()),
            _ => return Err(AlgebraError::NotUnit(self.num.to_string())),
        };
        let u = TruncatedPoly::monomial(ctx, lam.clone(), c.clone())?;
        let u_inv = TruncatedPoly::monomial(ctx, lam.neg(), c.recip())?;
        let lead = &u * &ring.den_poly(&beta);
        let delta = LocalizedElement {
            ring: ring.clone(),
            num: &(&self.num - &lead) * &u_inv,
            den: beta.clone(),
        };
        let minus_delta = delta.neg();
        let mut series = Self::one(ring);
        let mut term = Self::one(ring);
        for _ in 0..=ctx.max_degree() + 1 {
            term = term.mul(&minus_delta);
            if term.is_zero() {
                break;
            }
            series = series.add(&term);
        }
        let base = LocalizedElement { ring: ring.clone(), num: u_inv, den: beta };
        let numer_back = Self::from_poly(ring, ring.den_poly(&self.den));
        Ok(base.mul(&series).mul(&numer_back).reduce())
    }

    pub fn div(&self, o: &Self) -> Result<Self, AlgebraError> {
        Ok(self.mul(&o.inverse()?))
    }

    /// Polynomial value if the reduced form has no denominators.
    pub fn as_poly(&self) -> Option<TruncatedPoly> {
        let r = self.reduce();
        r.is_polynomial().then_some(r.num)
    }

    /// Reinterpret in another localized ring over the same context whose
    /// localizers contain ours.
    pub fn rering(&self, ring: &Arc<LocalRing>) -> Result<Self, AlgebraError> {
        if !OrderContext::same(&self.ring.ctx, &ring.ctx) {
            return Err(AlgebraError::ContextMismatch);
        }
        let mut r = Self::from_poly(ring, self.num.clone());
        for (i, &e) in self.den.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let j = ring
                .localizers
                .iter()
                .position(|g| *g == self.ring.localizers[i])
                .ok_or(AlgebraError::ContextMismatch)?;
            r.den[j] += e;
        }
        Ok(r)
    }
}

impl fmt::Display for LocalizedElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_polynomial() {
            return write!(f, "{}", self.num);
        }
        let dens: Vec<String> = self
            .den
            .iter()
            .enumerate()
            .filter(|(_, e)| **e > 0)
            .map(|(i, e)| format!("({})^{}", self.ring.localizers[i], e))
            .collect();
        write!(f, "({}) / {}", self.num, dens.join(" "))
    }
}

/// Absolute value bound on coefficients, handy for sanity checks.
pub fn max_abs_coeff(p: &TruncatedPoly) -> Q {
    p.terms.values().map(|c| c.abs()).fold(Q::zero(), |a, b| if b > a { b } else { a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::q;

    fn x_y_ctx(k: i64) -> Arc<OrderContext> {
        // one cell with slope 0: ord = h
        OrderContext::single_cell(2, vec![0, 0], k)
    }

    #[test]
    fn t_has_order_one() {
        let ctx = OrderContext::full(2, vec![vec![0, 0], vec![1, 0], vec![0, 1]], 3);
        let t = Exponent::t(2);
        for c in 0..3 {
            assert_eq!(ctx.ord(&t, c).unwrap(), 1);
        }
    }

    #[test]
    fn order_at_vertex_is_not_additive() {
        // one-dimensional B, vertex with P_v = N^2 generated by x, y and t = xy
        let ctx = OrderContext::full(1, vec![vec![-1], vec![0]], 5);
        let x = Exponent::new(vec![1], 0);
        let y = Exponent::new(vec![-1], 1);
        assert_eq!(x.plus(&y), Exponent::t(1));
        assert_eq!(ctx.ord_max(&x), 1);
        assert_eq!(ctx.ord_max(&y), 1);
        assert_eq!(ctx.ord_max(&x.plus(&y)), 1);
    }

    #[test]
    fn truncation_drops_high_order() {
        let ctx = x_y_ctx(2);
        let tx = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(2), q(1)), (Exponent::new(vec![1, 0], 1), q(1))]).unwrap();
        let ty = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(2), q(1)), (Exponent::new(vec![0, 1], 1), q(1))]).unwrap();
        let p = &tx * &ty;
        assert_eq!(p.len(), 4);
        let p3 = &p * &tx;
        // (1+tx)^2 (1+ty) mod t^3: 1 + 2tx + ty + t^2x^2 + 2t^2xy
        assert_eq!(p3.len(), 5);
    }

    #[test]
    fn division_round_trip() {
        let ctx = x_y_ctx(3);
        let f = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(2), q(1)), (Exponent::new(vec![1, 0], 1), q(2))]).unwrap();
        let g = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(2), q(3)), (Exponent::new(vec![0, 1], 1), q(1))]).unwrap();
        let p = &f * &g;
        assert_eq!(p.try_divide(&f).unwrap(), g);
        assert_eq!(f.try_divide(&f).unwrap(), TruncatedPoly::one(&ctx));
    }

    #[test]
    fn counterexample_non_divisibility() {
        // cuts (-1,0), (0,-1), (1,2) with phi values 0, 0, 2
        let ctx = OrderContext::full(3, vec![vec![0, 0, 0], vec![2, 0, 0], vec![0, 1, 0]], 1);
        let u = TruncatedPoly::monomial(&ctx, Exponent::new(vec![0, -1, 0], 0), q(1)).unwrap();
        let f = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(3), q(1)), (Exponent::new(vec![0, 0, 1], 0), q(1))]).unwrap();
        match u.try_divide(&f) {
            Err(AlgebraError::NotDivisible { witness, .. }) => assert_eq!(witness, Exponent::new(vec![0, -1, 0], 0)),
            other => panic!("expected NotDivisible, got {other:?}"),
        }
    }

    #[test]
    fn localized_inverse() {
        let ctx = OrderContext::full(3, vec![vec![0, 0, 0], vec![2, 0, 0], vec![0, 1, 0]], 2);
        let w = Exponent::new(vec![0, 0, 1], 0);
        let f = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(3), q(1)), (w.clone(), q(1))]).unwrap();
        let ring = LocalRing::new(&ctx, std::slice::from_ref(&f)).unwrap();
        let u = TruncatedPoly::monomial(&ctx, Exponent::new(vec![0, -1, 0], 0), q(1)).unwrap();
        let a = LocalizedElement::from_poly(&ring, &(&f * &f) + &u);
        let inv = a.inverse().unwrap();
        assert!(a.mul(&inv).is_one());
        let g = LocalizedElement::from_poly(&ring, f.clone());
        assert!(g.inverse().unwrap().mul(&g).is_one());
    }
}
