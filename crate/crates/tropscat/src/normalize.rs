//! t-content, tlog in finite slices of vertex completions, and slab
//! normalization.

use std::fmt;
use std::sync::Arc;

use num::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, Exponent, OrderContext, TruncatedPoly};
use crate::lattice::{self, fmt_q, IMat, Q};
use crate::logauto::{LogAutoError, LogAutomorphism};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    LogAuto(#[from] LogAutoError),
    #[error("cone condition violated by order-zero monomial {0}")]
    ConeConditionViolated(Exponent),
    #[error("constant term is zero")]
    ZeroConstantTerm,
    #[error("slab is not normalized below order {order}: tlog has t^{found}")]
    NotPreNormalized { order: i64, found: i64 },
    #[error("no covector positive on the order-zero exponents was found")]
    NoPositiveCovector,
}

type Result<T> = std::result::Result<T, NormalizeError>;

/// Truncated series `sum_{i>=1} a_i t^i`; index 0 is kept at zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TSeries {
    pub coeffs: Vec<Q>,
}

impl TSeries {
    pub fn zero(k: i64) -> Self {
        TSeries { coeffs: vec![Q::zero(); k.max(0) as usize + 1] }
    }

    pub fn order(&self) -> i64 {
        self.coeffs.len() as i64 - 1
    }

    pub fn coeff(&self, i: i64) -> Q {
        self.coeffs.get(i as usize).cloned().unwrap_or_else(Q::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Lowest power with a nonzero coefficient.
    pub fn valuation(&self) -> Option<i64> {
        self.coeffs.iter().position(|c| !c.is_zero()).map(|i| i as i64)
    }

    pub fn add(&self, o: &Self) -> Self {
        let n = self.coeffs.len().min(o.coeffs.len());
        TSeries { coeffs: (0..n).map(|i| &self.coeffs[i] + &o.coeffs[i]).collect() }
    }

    pub fn truncate(&self, k: i64) -> Self {
        let n = (k.max(0) as usize + 1).min(self.coeffs.len());
        TSeries { coeffs: self.coeffs[..n].to_vec() }
    }
}

impl fmt::Display for TSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| format!("{}*t^{}", fmt_q(c), i))
            .collect();
        if parts.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", parts.join(" + "))
        }
    }
}

/// Finite slice of a vertex completion. `nu` is a covector positive on the
/// tangent parts of order-zero exponents; orders are measured on the
/// reference cell, where they are additive.
#[derive(Clone, Debug)]
pub struct TlogContext {
    pub ctx: Arc<OrderContext>,
    pub nu: Vec<i64>,
    pub reference_cell: usize,
}

impl TlogContext {
    pub fn new(ctx: &Arc<OrderContext>, nu: Vec<i64>) -> Self {
        let reference_cell = ctx.stratum()[0];
        TlogContext { ctx: ctx.clone(), nu, reference_cell }
    }

    /// Pick the first covector with entries in `[-3, 3]` taking value at
    /// least one on every order-zero tangent vector of `f`.
    pub fn auto(ctx: &Arc<OrderContext>, f: &TruncatedPoly) -> Result<Self> {
        let probe = TlogContext::new(ctx, vec![0; ctx.rank()]);
        let zero_order: Vec<&Exponent> =
            f.terms().keys().filter(|m| !m.is_pure_t() && probe.ord(m) == 0).collect();
        let n = ctx.rank();
        let mut cand = vec![-3i64; n];
        loop {
            if zero_order.iter().all(|m| lattice::dot(&cand, &m.mbar) >= 1) {
                return Ok(TlogContext::new(ctx, cand));
            }
            let mut i = 0;
            loop {
                if i == n {
                    return Err(NormalizeError::NoPositiveCovector);
                }
                cand[i] += 1;
                if cand[i] <= 3 {
                    break;
                }
                cand[i] = -3;
                i += 1;
            }
        }
    }

    pub fn ord(&self, m: &Exponent) -> i64 {
        m.h - lattice::dot(&self.ctx.slopes()[self.reference_cell], &m.mbar)
    }

    pub fn nu_degree(&self, m: &Exponent) -> i64 {
        lattice::dot(&self.nu, &m.mbar)
    }
}

/// `sum_{mbar = 0} a_m t^{ord(m)}`.
pub fn tcont(f: &TruncatedPoly, k: i64) -> TSeries {
    let mut s = TSeries::zero(k);
    for (m, c) in f.terms() {
        if m.is_pure_t() && m.h >= 1 && m.h <= k {
            s.coeffs[m.h as usize] += c;
        }
    }
    s
}

/// `tcont(log(f / a_0))` up to `t^k`, expanded in the finite slice that
/// can still contribute to pure powers of `t`.
pub fn tlog(f: &TruncatedPoly, tc: &TlogContext, k: i64) -> Result<TSeries> {
    let k = k.min(tc.ctx.order());
    let a0 = f.constant_term();
    if a0.is_zero() {
        return Err(NormalizeError::ZeroConstantTerm);
    }
    let one = TruncatedPoly::one(f.ctx());
    let g = (&one - &f.scale(&a0.recip())).filter(|m| tc.ord(m) <= k);

    let mut bound = Q::zero();
    for m in g.terms().keys() {
        let o = tc.ord(m);
        let d = tc.nu_degree(m);
        if o == 0 {
            if d < 1 {
                return Err(NormalizeError::ConeConditionViolated(m.clone()));
            }
        } else {
            let b = lattice::qr(-d, o);
            if b > bound {
                bound = b;
            }
        }
    }
    let keep = |m: &Exponent| {
        let o = tc.ord(m);
        o <= k && lattice::q(tc.nu_degree(m)) <= &bound * lattice::q(k - o)
    };
    let g = g.filter(keep);
    let mut out = TSeries::zero(k);
    let mut power = g.clone();
    let mut i: i64 = 1;
    while !power.is_zero() {
        // log(f / a0) = log(1 - g) = -sum g^i / i
        let inv_i = lattice::qr(1, i);
        for (j, c) in tcont(&power, k).coeffs.iter().enumerate() {
            out.coeffs[j] -= c * &inv_i;
        }
        power = (&power * &g).filter(keep);
        i += 1;
    }
    Ok(out)
}

/// Checks `tlog(theta(a)) = tlog(a)`.
pub fn tlog_invariance(theta: &LogAutomorphism, a: &TruncatedPoly, tc: &TlogContext, k: i64) -> Result<bool> {
    let image = theta.apply_poly(a)?.as_poly().ok_or(LogAutoError::NotPolynomial)?;
    Ok(tlog(&image, tc, k)? == tlog(a, tc, k)?)
}

/// One representative vertex for the normalization of a slab: the function
/// seen there is `z^shift * f` with tangent parts mapped by `chart`, and
/// `h` raised by `<tilt, chart mbar>`.
#[derive(Clone, Debug)]
pub struct VertexClass {
    pub tlog: TlogContext,
    pub shift: Exponent,
    pub chart: IMat,
    pub tilt: Vec<i64>,
}

impl VertexClass {
    pub fn base(tlog: TlogContext) -> Self {
        let n = tlog.ctx.rank();
        VertexClass { tlog, shift: Exponent::zero(n), chart: lattice::identity(n), tilt: vec![0; n] }
    }

    pub fn view(&self, f: &TruncatedPoly) -> Result<TruncatedPoly> {
        let ctx = self.tlog.ctx.clone();
        let mut out = TruncatedPoly::zero(&ctx);
        for (m, c) in f.terms() {
            let mut e = m.plus(&self.shift).transport(&self.chart);
            e.h += lattice::dot(&self.tilt, &e.mbar);
            if !ctx.in_monoid(&e) {
                return Err(AlgebraError::NotInMonoid(e).into());
            }
            out = &out + &TruncatedPoly::monomial(&ctx, e, c.clone())?;
        }
        Ok(out)
    }
}

/// Result of normalizing one slab function to order `k`.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub function: TruncatedPoly,
    /// `c_v` for each vertex class, in input order.
    pub corrections: Vec<Q>,
}

/// Make `tlog` vanish to order `k` at every vertex class by subtracting
/// `c_v t^k z^{-shift_v}`. The function must already be normalized below
/// order `k`.
pub fn normalize_slab(f: &TruncatedPoly, k: i64, classes: &[VertexClass]) -> Result<Normalized> {
    let mut cs = Vec::with_capacity(classes.len());
    for cl in classes {
        let view = cl.view(f)?;
        let series = tlog(&view, &cl.tlog, k)?;
        if let Some(v) = series.valuation() {
            if v < k {
                return Err(NormalizeError::NotPreNormalized { order: k, found: v });
            }
        }
        // tlog is normalized by the constant term, so the correction is
        // scaled back by it.
        let a0 = view.constant_term();
        cs.push(series.coeff(k) * a0);
    }
    let mut out = f.clone();
    let n = f.ctx().rank();
    for (cl, c) in classes.iter().zip(&cs) {
        if c.is_zero() {
            continue;
        }
        let m = Exponent::t(n).times(k).minus(&cl.shift);
        out = &out - &TruncatedPoly::monomial(f.ctx(), m, c.clone())?;
    }
    Ok(Normalized { function: out, corrections: cs })
}

/// Run slab normalization at orders `1..=k` for a single vertex, returning
/// the normalized function and the coefficients `a_1..a_k` added to it.
pub fn normalize_series(f: &TruncatedPoly, k: i64, tc: &TlogContext) -> Result<(TruncatedPoly, Vec<Q>)> {
    let mut cur = f.clone();
    let mut added = Vec::new();
    for order in 1..=k {
        let ctx = tc.ctx.with_order(order);
        let local = TlogContext { ctx: ctx.clone(), ..tc.clone() };
        let fk = cur.recontext(&ctx)?;
        let res = normalize_slab(&fk, order, &[VertexClass::base(local)])?;
        let c = res.corrections[0].clone();
        cur = &cur - &TruncatedPoly::t_power(f.ctx(), order, c.clone());
        added.push(-c);
    }
    Ok((cur, added))
}

/// Smallest `s >= 0` making `nu + s * ord` non-negative on every term of
/// `f`; that weight is additive, so bounding it cuts out an ideal.
pub fn slice_slope(f: &TruncatedPoly, tc: &TlogContext) -> Result<i64> {
    let mut s = 0;
    for m in f.terms().keys().filter(|m| !m.is_zero()) {
        let (o, d) = (tc.ord(m), tc.nu_degree(m));
        if o == 0 {
            if d < 1 {
                return Err(NormalizeError::ConeConditionViolated(m.clone()));
            }
        } else {
            s = s.max((-d).div_euclid(o) + i64::from((-d).rem_euclid(o) != 0));
        }
    }
    Ok(s)
}

/// Factorization `f = prod (1 + a_m z^m)` inside the slice of order at most
/// `k` and weight `nu + slope * ord` at most `cap`, with the slope from
/// [`slice_slope`].
pub fn product_expand(f: &TruncatedPoly, tc: &TlogContext, k: i64, cap: i64) -> Result<Vec<(Exponent, Q)>> {
    if !f.constant_term().is_one() {
        return Err(NormalizeError::ZeroConstantTerm);
    }
    let slope = slice_slope(f, tc)?;
    let weight = |m: &Exponent| tc.nu_degree(m) + slope * tc.ord(m);
    let keep = |m: &Exponent| tc.ord(m) <= k && weight(m) <= cap;
    let key = |m: &Exponent| (tc.ord(m), weight(m), m.clone());
    let mut cur = f.filter(keep);
    let mut factors = Vec::new();
    loop {
        let next = cur.terms().iter().filter(|(m, _)| !m.is_zero()).min_by_key(|(m, _)| key(m)).map(|(m, c)| (m.clone(), c.clone()));
        let Some((m, a)) = next else { break };
        // divide by 1 + a z^m inside the slice
        let step = TruncatedPoly::monomial(f.ctx(), m.clone(), -a.clone())?;
        let mut inv = TruncatedPoly::one(f.ctx());
        let mut p = TruncatedPoly::one(f.ctx());
        loop {
            p = (&p * &step).filter(keep);
            if p.is_zero() {
                break;
            }
            inv = &inv + &p;
        }
        cur = (&cur * &inv).filter(keep);
        factors.push((m, a));
    }
    Ok(factors)
}

/// Serialized monoid plus slab function consumed by the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalizeInput {
    pub rank: usize,
    /// Slopes of the cells whose orders cut out the monoid.
    pub slopes: Vec<Vec<i64>>,
    #[serde(default)]
    pub nu: Option<Vec<i64>>,
    pub function: Vec<crate::algebra::TermJson>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::q;

    fn local_p2(k: i64) -> (Arc<OrderContext>, TruncatedPoly) {
        let ctx = OrderContext::single_cell(3, vec![0, 0, 0], k);
        let f = TruncatedPoly::from_terms(
            &ctx,
            [
                (Exponent::zero(3), q(1)),
                (Exponent::new(vec![1, 0, 0], 0), q(1)),
                (Exponent::new(vec![0, 1, 0], 0), q(1)),
                (Exponent::new(vec![-1, -1, 0], 1), q(1)),
            ],
        )
        .unwrap();
        (ctx, f)
    }

    #[test]
    fn tcont_of_pure_t() {
        let ctx = OrderContext::single_cell(2, vec![0, 0], 3);
        let f = TruncatedPoly::t_power(&ctx, 2, q(3));
        assert_eq!(tcont(&f, 3).coeff(2), q(3));
        let g = TruncatedPoly::monomial(&ctx, Exponent::new(vec![1, 0], 1), q(1)).unwrap();
        assert!(tcont(&g, 3).is_zero());
    }

    #[test]
    fn tlog_of_one_plus_t_power() {
        let ctx = OrderContext::single_cell(2, vec![0, 0], 3);
        let f = &TruncatedPoly::one(&ctx) + &TruncatedPoly::t_power(&ctx, 3, q(5));
        let tc = TlogContext::new(&ctx, vec![1, 1]);
        assert_eq!(tlog(&f, &tc, 3).unwrap().coeff(3), q(5));
    }

    #[test]
    fn local_p2_first_coefficients() {
        let (ctx, f) = local_p2(3);
        let tc = TlogContext::new(&ctx, vec![1, 1, 0]);
        let (_, a) = normalize_series(&f, 3, &tc).unwrap();
        assert_eq!(a, vec![q(-2), q(5), q(-32)]);
    }

    #[test]
    fn local_p2_five_coefficients() {
        let (ctx, f) = local_p2(5);
        let tc = TlogContext::auto(&ctx, &f).unwrap();
        let t0 = std::time::Instant::now();
        let (_, a) = normalize_series(&f, 5, &tc).unwrap();
        assert_eq!(a, vec![q(-2), q(5), q(-32), q(286), q(-3038)]);
        eprintln!("{:?}", t0.elapsed());
    }
}
