//! Log derivations and log automorphisms of localized truncated rings.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, Exponent, LocalRing, LocalizedElement, TermJson, TruncatedPoly};
use crate::lattice::{self, IMat, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogAutoError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("derivation is not nilpotent: it has a component of degree zero")]
    NotNilpotent,
    #[error("automorphism is not congruent to the identity modulo the maximal ideal")]
    NotInGroup,
    #[error("operands live in different rings")]
    ContextMismatch,
    #[error("inverse check failed")]
    InverseCheckFailed,
    #[error("only identity monoid maps are supported here")]
    UnsupportedMonoidMap,
    #[error("element has denominators where a polynomial is required")]
    NotPolynomial,
}

type Result<T> = std::result::Result<T, LogAutoError>;

/// `xi = sum_j a_j d_j` where `d_j` is the log derivative along the j-th dual
/// basis vector; `xi(m) = sum_j a_j mbar_j` and `xi(z^m) = xi(m) z^m`.
#[derive(Clone, Debug)]
pub struct LogDerivation {
    ring: Arc<LocalRing>,
    pub components: Vec<LocalizedElement>,
}

impl PartialEq for LogDerivation {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl LogDerivation {
    pub fn zero(ring: &Arc<LocalRing>) -> Self {
        let n = ring.ctx().rank();
        LogDerivation { ring: ring.clone(), components: vec![LocalizedElement::zero(ring); n] }
    }

    pub fn from_components(ring: &Arc<LocalRing>, components: Vec<LocalizedElement>) -> Self {
        assert_eq!(components.len(), ring.ctx().rank());
        LogDerivation { ring: ring.clone(), components }
    }

    /// `c z^m d_n`.
    pub fn monomial(ring: &Arc<LocalRing>, m: Exponent, c: Q, n: &[i64]) -> Result<Self> {
        let p = TruncatedPoly::monomial(ring.ctx(), m, c)?;
        Ok(Self::from_poly_dir(ring, &p, n))
    }

    /// `p d_n` for a polynomial `p`.
    pub fn from_poly_dir(ring: &Arc<LocalRing>, p: &TruncatedPoly, n: &[i64]) -> Self {
        let comps = n
            .iter()
            .map(|&nj| LocalizedElement::from_poly(ring, p.scale(&lattice::q(nj))))
            .collect();
        LogDerivation { ring: ring.clone(), components: comps }
    }

    /// `g d_n` for a localized coefficient `g`.
    pub fn from_elem_dir(g: &LocalizedElement, n: &[i64]) -> Self {
        let comps = n.iter().map(|&nj| g.scale(&lattice::q(nj))).collect();
        LogDerivation { ring: g.ring().clone(), components: comps }
    }

    pub fn ring(&self) -> &Arc<LocalRing> {
        &self.ring
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, o: &Self) -> Self {
        let comps = self.components.iter().zip(&o.components).map(|(a, b)| a.add(b)).collect();
        LogDerivation { ring: self.ring.clone(), components: comps }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(&-Q::one())
    }

    pub fn scale(&self, s: &Q) -> Self {
        LogDerivation { ring: self.ring.clone(), components: self.components.iter().map(|c| c.scale(s)).collect() }
    }

    pub fn mul_elem(&self, g: &LocalizedElement) -> Self {
        LogDerivation { ring: self.ring.clone(), components: self.components.iter().map(|c| c.mul(g)).collect() }
    }

    pub fn reduce(&self) -> Self {
        LogDerivation { ring: self.ring.clone(), components: self.components.iter().map(|c| c.reduce()).collect() }
    }

    /// Value on an exponent: `xi(m) = sum_j a_j mbar_j`.
    pub fn value(&self, mbar: &[i64]) -> LocalizedElement {
        let mut r = LocalizedElement::zero(&self.ring);
        for (a, &x) in self.components.iter().zip(mbar) {
            if x != 0 {
                r = r.add(&a.scale(&lattice::q(x)));
            }
        }
        r
    }

    /// Action on ring elements.
    pub fn act(&self, g: &LocalizedElement) -> LocalizedElement {
        let n = self.components.len();
        let mut r = LocalizedElement::zero(&self.ring);
        for j in 0..n {
            if self.components[j].is_zero() {
                continue;
            }
            let mut e = vec![0; n];
            e[j] = 1;
            let d = g.derivative(&e);
            if !d.is_zero() {
                r = r.add(&self.components[j].mul(&d));
            }
        }
        r
    }

    pub fn bracket(&self, o: &Self) -> Self {
        let comps = self
            .components
            .iter()
            .zip(&o.components)
            .map(|(a1, a2)| self.act(a2).sub(&o.act(a1)))
            .collect();
        LogDerivation { ring: self.ring.clone(), components: comps }.reduce()
    }

    /// Keep only the terms of the numerators in a given degree.
    pub fn degree_part(&self, d: i64) -> Self {
        let comps = self
            .components
            .iter()
            .map(|c| LocalizedElement::new(&self.ring, c.num.degree_part(d), c.den.clone()))
            .collect();
        LogDerivation { ring: self.ring.clone(), components: comps }
    }

    /// Polynomial terms `(m, n)` with `xi = sum c z^m d_n`; the covector
    /// carries the coefficient.
    pub fn terms(&self) -> Result<BTreeMap<Exponent, Vec<Q>>> {
        let n = self.components.len();
        let mut out: BTreeMap<Exponent, Vec<Q>> = BTreeMap::new();
        for (j, c) in self.components.iter().enumerate() {
            let p = c.as_poly().ok_or(LogAutoError::NotPolynomial)?;
            for (m, a) in p.terms() {
                out.entry(m.clone()).or_insert_with(|| vec![Q::zero(); n])[j] += a;
            }
        }
        out.retain(|_, v| v.iter().any(|x| !x.is_zero()));
        Ok(out)
    }

    /// Divergence `sum_j d_j(a_j)`; zero iff the standard volume form is
    /// preserved.
    pub fn divergence(&self) -> LocalizedElement {
        let n = self.components.len();
        let mut r = LocalizedElement::zero(&self.ring);
        for (j, a) in self.components.iter().enumerate() {
            let mut e = vec![0; n];
            e[j] = 1;
            r = r.add(&a.derivative(&e));
        }
        r
    }

    pub fn preserves_volume(&self) -> bool {
        self.divergence().is_zero()
    }

    fn check_nilpotent(&self) -> Result<()> {
        if self.components.iter().all(|c| c.num.degree_part(0).is_zero()) {
            Ok(())
        } else {
            Err(LogAutoError::NotNilpotent)
        }
    }

    pub fn exp(&self) -> Result<LogAutomorphism> {
        self.check_nilpotent()?;
        let n = self.components.len();
        let limit = self.ring.ctx().max_degree() + 1;
        let mut vals = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![0; n];
            e[j] = 1;
            let xm = self.value(&e);
            let mut total = LocalizedElement::one(&self.ring);
            let mut cur = LocalizedElement::one(&self.ring);
            let mut fact = Q::one();
            let mut i = 1i64;
            loop {
                cur = xm.mul(&cur).add(&self.act(&cur)).reduce();
                if cur.is_zero() {
                    break;
                }
                if i > limit {
                    return Err(LogAutoError::NotNilpotent);
                }
                fact *= lattice::q(i);
                total = total.add(&cur.scale(&fact.recip()));
                i += 1;
            }
            vals.push(total.reduce());
        }
        Ok(LogAutomorphism::from_values(&self.ring, vals, None))
    }

    pub fn to_json(&self) -> Result<DerivationJson> {
        let terms = self.terms()?;
        Ok(DerivationJson {
            terms: terms
                .into_iter()
                .map(|(m, n)| DerivationTermJson { mbar: m.mbar, h: m.h, n: n.iter().map(lattice::fmt_q).collect() })
                .collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationTermJson {
    pub mbar: Vec<i64>,
    pub h: i64,
    pub n: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationJson {
    pub terms: Vec<DerivationTermJson>,
}

/// Log automorphism `theta`, stored by its values on the standard basis.
/// The ring map is `z^m -> theta(mbar) z^{beta(m)}`, with `beta` acting on
/// `mbar` and fixing `h`.
#[derive(Clone, Debug)]
pub struct LogAutomorphism {
    ring: Arc<LocalRing>,
    values: Vec<LocalizedElement>,
    beta: Option<IMat>,
    inverses: OnceLock<std::result::Result<Vec<LocalizedElement>, AlgebraError>>,
    localizer_images: OnceLock<Vec<std::result::Result<LocalizedElement, AlgebraError>>>,
    products: Arc<Mutex<HashMap<Vec<i64>, LocalizedElement>>>,
}

impl PartialEq for LogAutomorphism {
    fn eq(&self, other: &Self) -> bool {
        self.beta_matrix() == other.beta_matrix() && self.values == other.values
    }
}

impl LogAutomorphism {
    pub fn identity(ring: &Arc<LocalRing>) -> Self {
        let n = ring.ctx().rank();
        Self::from_values(ring, vec![LocalizedElement::one(ring); n], None)
    }

    pub fn from_values(ring: &Arc<LocalRing>, values: Vec<LocalizedElement>, beta: Option<IMat>) -> Self {
        assert_eq!(values.len(), ring.ctx().rank());
        let beta = beta.filter(|b| *b != lattice::identity(ring.ctx().rank()));
        LogAutomorphism { ring: ring.clone(), values, beta, inverses: OnceLock::new(),
            localizer_images: OnceLock::new(),
            products: Arc::default(),
        }
    }

    /// `m -> f^{-<mbar, n>}`, the automorphism attached to a wall or cut
    /// with function `f` and normal `n`.
    pub fn crossing(f: &LocalizedElement, n: &[i64]) -> Result<Self> {
        let ring = f.ring().clone();
        let mut inv: Option<LocalizedElement> = None;
        let mut vals = Vec::with_capacity(n.len());
        for &nj in n {
            let v = if nj > 0 {
                if inv.is_none() {
                    inv = Some(f.inverse()?);
                }
                inv.as_ref().unwrap().pow(nj)?
            } else {
                f.pow(-nj)?
            };
            vals.push(v);
        }
        Ok(Self::from_values(&ring, vals, None))
    }

    pub fn ring(&self) -> &Arc<LocalRing> {
        &self.ring
    }

    pub fn values(&self) -> &[LocalizedElement] {
        &self.values
    }

    pub fn beta_matrix(&self) -> IMat {
        self.beta.clone().unwrap_or_else(|| lattice::identity(self.ring.ctx().rank()))
    }

    pub fn has_identity_beta(&self) -> bool {
        self.beta.is_none()
    }

    pub fn is_identity(&self) -> bool {
        self.beta.is_none() && self.values.iter().all(|v| v.is_one())
    }

    fn inverses(&self) -> std::result::Result<&Vec<LocalizedElement>, AlgebraError> {
        self.inverses
            .get_or_init(|| self.values.iter().map(|v| v.inverse()).collect())
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// `theta(m)` for an arbitrary tangent vector, memoised along the
    /// lattice.
    pub fn value(&self, mbar: &[i64]) -> Result<LocalizedElement> {
        let Some(j) = mbar.iter().position(|&x| x != 0) else {
            return Ok(LocalizedElement::one(&self.ring));
        };
        if let Some(v) = self.products.lock().unwrap().get(mbar) {
            return Ok(v.clone());
        }
        let mut prev = mbar.to_vec();
        let r = if mbar[j] > 0 {
            prev[j] -= 1;
            self.value(&prev)?.mul(&self.values[j])
        } else {
            prev[j] += 1;
            self.value(&prev)?.mul(&self.inverses()?[j])
        };
        self.products.lock().unwrap().insert(mbar.to_vec(), r.clone());
        Ok(r)
    }

    pub fn apply_poly(&self, p: &TruncatedPoly) -> Result<LocalizedElement> {
        let ctx = self.ring.ctx();
        let mut r = LocalizedElement::zero(&self.ring);
        for (m, c) in p.terms() {
            let tm = self.value(&m.mbar)?;
            let target = match &self.beta {
                Some(b) => m.transport(b),
                None => m.clone(),
            };
            let mono = TruncatedPoly::monomial(ctx, target, c.clone())?;
            r = r.add(&tm.mul_poly(&mono));
        }
        Ok(r)
    }

    fn localizer_image_inverse(&self, i: usize) -> Result<LocalizedElement> {
        let images = self.localizer_images.get_or_init(|| {
            self.ring
                .localizers()
                .iter()
                .map(|f| {
                    self.apply_poly(f)
                        .map_err(|e| match e {
                            LogAutoError::Algebra(a) => a,
                            other => AlgebraError::NotUnit(other.to_string()),
                        })
                        .and_then(|g| g.inverse())
                })
                .collect()
        });
        images[i].clone().map_err(LogAutoError::from)
    }

    /// Ring map applied to a localized element.
    pub fn apply(&self, g: &LocalizedElement) -> Result<LocalizedElement> {
        let mut r = self.apply_poly(&g.num)?;
        for (i, &e) in g.den.iter().enumerate() {
            if e > 0 {
                r = r.mul(&self.localizer_image_inverse(i)?.pow(e as i64)?);
            }
        }
        Ok(r.reduce())
    }

    /// `self o other`: `(theta1 o theta2)(m) = theta1(beta2 m) * theta1bar(theta2(m))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if !LocalRing::same(&self.ring, &other.ring) {
            return Err(LogAutoError::ContextMismatch);
        }
        if other.is_identity() {
            return Ok(self.clone());
        }
        if self.is_identity() {
            return Ok(other.clone());
        }
        let n = self.values.len();
        let b2 = other.beta_matrix();
        let mut vals = Vec::with_capacity(n);
        for (j, oj) in other.values.iter().enumerate() {
            let col: Vec<i64> = b2.iter().map(|row| row[j]).collect();
            let v = self.value(&col)?.mul(&self.apply(oj)?);
            vals.push(v.reduce());
        }
        let beta = lattice::mat_mul(&self.beta_matrix(), &b2);
        Ok(Self::from_values(&self.ring, vals, Some(beta)))
    }

    /// Degree-zero part `m -> theta(m) mod I_0`.
    pub fn degree0(&self) -> Self {
        Self::from_values(&self.ring, self.values.iter().map(|v| v.degree0()).collect(), self.beta.clone())
    }

    pub fn is_unipotent(&self) -> bool {
        self.beta.is_none() && self.values.iter().all(|v| v.is_unipotent())
    }

    /// Logarithm of a unipotent automorphism.
    pub fn log(&self) -> Result<LogDerivation> {
        if !self.is_unipotent() {
            return Err(LogAutoError::NotInGroup);
        }
        let n = self.values.len();
        let limit = self.ring.ctx().max_degree() + 1;
        let mut comps = Vec::with_capacity(n);
        for j in 0..n {
            let theta_m = &self.values[j];
            let mut prev = LocalizedElement::one(&self.ring);
            let mut total = LocalizedElement::zero(&self.ring);
            let mut i = 1i64;
            loop {
                let next = theta_m.mul(&self.apply(&prev)?).sub(&prev).reduce();
                if next.is_zero() {
                    break;
                }
                if i > limit {
                    return Err(LogAutoError::NotInGroup);
                }
                let s = if i % 2 == 1 { lattice::qr(1, i) } else { lattice::qr(-1, i) };
                total = total.add(&next.scale(&s));
                prev = next;
                i += 1;
            }
            comps.push(total.reduce());
        }
        Ok(LogDerivation::from_components(&self.ring, comps))
    }

    /// Inverse automorphism. Identity monoid map only; the degree-zero part
    /// must fix its own values (true for wall and cut crossings).
    pub fn invert(&self) -> Result<Self> {
        if self.beta.is_some() {
            return Err(LogAutoError::UnsupportedMonoidMap);
        }
        if self.is_unipotent() {
            return self.log()?.neg().exp();
        }
        let d = self.degree0();
        for v in &d.values {
            if d.apply(v)? != *v {
                return Err(LogAutoError::UnsupportedMonoidMap);
            }
        }
        let d_inv_vals = d.values.iter().map(|v| v.inverse()).collect::<std::result::Result<Vec<_>, _>>()?;
        let d_inv = Self::from_values(&self.ring, d_inv_vals, None);
        let u = self.compose(&d_inv)?;
        let u_inv = u.log()?.neg().exp()?;
        let inv = d_inv.compose(&u_inv)?;
        if !self.compose(&inv)?.is_identity() {
            return Err(LogAutoError::InverseCheckFailed);
        }
        Ok(inv)
    }

    /// Adjoint action `Ad_theta(xi)`, giving the derivation of
    /// `theta o exp(xi) o theta^{-1}`.
    pub fn adjoint(&self, xi: &LogDerivation) -> Result<LogDerivation> {
        if self.beta.is_some() {
            return Err(LogAutoError::UnsupportedMonoidMap);
        }
        let inv = self.invert()?;
        let mut comps = Vec::with_capacity(self.values.len());
        for j in 0..self.values.len() {
            let a = self.apply(&xi.act(&inv.values[j]))?.mul(&self.values[j]);
            let b = self.apply(&xi.components[j])?;
            comps.push(a.add(&b).reduce());
        }
        Ok(LogDerivation::from_components(&self.ring, comps))
    }

    /// Exact test that the pullback of `dlog z_1 ^ ... ^ dlog z_n` is
    /// unchanged: the Jacobian `delta_jk + d_k(theta_j)/theta_j` has
    /// determinant one.
    pub fn preserves_volume(&self) -> Result<bool> {
        let n = self.values.len();
        if let Some(b) = &self.beta {
            if lattice::det(b).abs() != 1 {
                return Ok(false);
            }
        }
        let inv = self.inverses()?;
        let mut jac = vec![vec![LocalizedElement::zero(&self.ring); n]; n];
        for j in 0..n {
            for k in 0..n {
                let mut e = vec![0; n];
                e[k] = 1;
                let mut entry = self.values[j].derivative(&e).mul(&inv[j]);
                if j == k {
                    entry = entry.add(&LocalizedElement::one(&self.ring));
                }
                jac[j][k] = entry;
            }
        }
        let d = leibniz_det(&jac, &self.ring);
        let sign = self.beta.as_ref().map_or(1, lattice::det);
        Ok(d.scale(&lattice::q(sign)).sub(&LocalizedElement::one(&self.ring)).is_zero())
    }

    pub fn to_json(&self) -> AutomorphismJson {
        AutomorphismJson {
            beta: self.beta.clone(),
            values: self
                .values
                .iter()
                .map(|v| {
                    let r = v.reduce();
                    LocalizedJson { num: r.num.to_json(), den: r.den.clone() }
                })
                .collect(),
        }
    }
}

fn leibniz_det(m: &[Vec<LocalizedElement>], ring: &Arc<LocalRing>) -> LocalizedElement {
    let n = m.len();
    if n == 0 {
        return LocalizedElement::one(ring);
    }
    let mut total = LocalizedElement::zero(ring);
    for c in 0..n {
        let minor: Vec<Vec<LocalizedElement>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, x)| x.clone()).collect())
            .collect();
        let term = m[0][c].mul(&leibniz_det(&minor, ring));
        total = if c % 2 == 0 { total.add(&term) } else { total.sub(&term) };
    }
    total
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizedJson {
    pub num: Vec<TermJson>,
    pub den: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutomorphismJson {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<IMat>,
    pub values: Vec<LocalizedJson>,
}

/// Closed form for conjugating `c z^m d_n` by `m' -> h^{-<m', n0>}`, valid
/// when `n0` annihilates every exponent of `h`:
/// `z^m (h^{-a} d_n + h^{-a-1} d_n(h) d_{n0})` with `a = <mbar, n0>`.
pub fn conjugation_closed_form(
    h: &LocalizedElement,
    n0: &[i64],
    m: &Exponent,
    c: &Q,
    n: &[i64],
) -> Result<LogDerivation> {
    let ring = h.ring().clone();
    let zm = LocalizedElement::from_poly(&ring, TruncatedPoly::monomial(ring.ctx(), m.clone(), c.clone())?);
    let a = lattice::dot(&m.mbar, n0);
    let ha = h.pow(-a)?;
    let ha1 = h.pow(-a - 1)?;
    let first = LogDerivation::from_elem_dir(&zm.mul(&ha), n);
    let second = LogDerivation::from_elem_dir(&zm.mul(&ha1).mul(&h.derivative(n)), n0);
    Ok(first.add(&second).reduce())
}

/// Subalgebra membership flags for a derivation relative to a codimension
/// two sublattice `Lambda_j` and an optional cone `K` in the quotient.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FiltrationTags {
    pub g: bool,
    pub h_tilde: bool,
    pub h: bool,
    pub h_perp: bool,
    pub h_parallel: bool,
    pub h_cone: Option<bool>,
}

/// Data describing `Lambda_j` and the projection to `Q = Lambda / Lambda_j`.
#[derive(Clone, Debug)]
pub struct JointLattice {
    /// Basis of `Lambda_j`.
    pub basis: Vec<Vec<i64>>,
    /// Two covectors vanishing on `Lambda_j` inducing coordinates on the quotient.
    pub projection: [Vec<i64>; 2],
}

impl JointLattice {
    pub fn contains(&self, v: &[i64]) -> bool {
        let mut rows: Vec<Vec<Q>> = self.basis.iter().map(|b| b.iter().map(|&x| lattice::q(x)).collect()).collect();
        let r0 = lattice::rank(&rows);
        rows.push(v.iter().map(|&x| lattice::q(x)).collect());
        lattice::rank(&rows) == r0
    }

    pub fn annihilates(&self, n: &[Q]) -> bool {
        self.basis.iter().all(|b| b.iter().zip(n).map(|(x, y)| lattice::q(*x) * y).sum::<Q>().is_zero())
    }

    pub fn project(&self, v: &[i64]) -> [i64; 2] {
        [lattice::dot(&self.projection[0], v), lattice::dot(&self.projection[1], v)]
    }
}

/// Closed convex cone spanned by one or two vectors of the quotient plane.
fn in_cone(gens: &[[i64; 2]], v: [i64; 2]) -> bool {
    if v == [0, 0] {
        return false;
    }
    match gens {
        [g] => g[0] * v[1] - g[1] * v[0] == 0 && g[0] * v[0] + g[1] * v[1] > 0,
        [a, b] => {
            let cross = |p: [i64; 2], q: [i64; 2]| p[0] * q[1] - p[1] * q[0];
            let ab = cross(*a, *b);
            if ab == 0 {
                return in_cone(&[*a], v);
            }
            let s = ab.signum();
            cross(*a, v) * s >= 0 && cross(v, *b) * s >= 0
        }
        _ => false,
    }
}

pub fn classify(xi: &LogDerivation, joint: &JointLattice, cone: Option<&[[i64; 2]]>) -> Result<FiltrationTags> {
    let terms = xi.terms()?;
    let mut tags = FiltrationTags {
        g: true,
        h_tilde: true,
        h: true,
        h_perp: true,
        h_parallel: true,
        h_cone: cone.map(|_| true),
    };
    for (m, n) in &terms {
        let in_perp_j = joint.annihilates(n);
        let pairing: Q = m.mbar.iter().zip(n).map(|(x, y)| lattice::q(*x) * y).sum();
        let in_perp_m = pairing.is_zero();
        let mbar_zero = m.is_pure_t();
        let in_lj = joint.contains(&m.mbar);
        tags.g &= in_perp_j;
        tags.h_tilde &= in_perp_j && in_perp_m;
        tags.h &= in_perp_j && in_perp_m && !mbar_zero;
        tags.h_perp &= in_perp_j && in_perp_m && !in_lj;
        tags.h_parallel &= in_perp_j && in_lj && !mbar_zero;
        if let (Some(flag), Some(k)) = (tags.h_cone.as_mut(), cone) {
            let p = joint.project(&m.mbar);
            *flag &= in_perp_j && in_perp_m && in_cone(k, [-p[0], -p[1]]);
        }
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::OrderContext;
    use crate::lattice::q;

    fn ring(k: i64) -> Arc<LocalRing> {
        LocalRing::polynomial(&OrderContext::single_cell(2, vec![0, 0], k))
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = ring(3);
        assert!(LogDerivation::zero(&r).exp().unwrap().is_identity());
    }

    #[test]
    fn exp_log_round_trip() {
        let r = ring(3);
        let xi = LogDerivation::monomial(&r, Exponent::new(vec![1, 0], 1), q(2), &[0, 1])
            .unwrap()
            .add(&LogDerivation::monomial(&r, Exponent::new(vec![0, 1], 1), q(-1), &[1, 1]).unwrap());
        let theta = xi.exp().unwrap();
        assert_eq!(theta.log().unwrap(), xi);
        assert!(theta.compose(&theta.invert().unwrap()).unwrap().is_identity());
    }

    #[test]
    fn wall_crossing_matches_exponential_of_log() {
        // exp(log(1 + t x) d_n) is m -> (1 + t x)^{<mbar, n>}
        let r = ring(4);
        let ctx = r.ctx().clone();
        let f = TruncatedPoly::from_terms(&ctx, [(Exponent::zero(2), q(1)), (Exponent::new(vec![1, 0], 1), q(1))]).unwrap();
        let fl = LocalizedElement::from_poly(&r, f);
        let theta = LogAutomorphism::crossing(&fl, &[0, -1]).unwrap();
        let xi = theta.log().unwrap();
        let v = xi.value(&[0, 1]).as_poly().unwrap();
        // log(1 + tx) = tx - t^2x^2/2 + t^3x^3/3 - t^4x^4/4
        assert_eq!(v.coeff(&Exponent::new(vec![2, 0], 2)), lattice::qr(-1, 2));
        assert_eq!(v.len(), 4);
        assert_eq!(xi.exp().unwrap(), theta);
    }

    #[test]
    fn volume_forms() {
        let r = ring(3);
        let ok = LogDerivation::monomial(&r, Exponent::new(vec![1, 0], 1), q(1), &[0, 1]).unwrap();
        let bad = LogDerivation::monomial(&r, Exponent::new(vec![1, 0], 1), q(1), &[1, 0]).unwrap();
        assert!(ok.preserves_volume());
        assert!(!bad.preserves_volume());
        assert!(ok.exp().unwrap().preserves_volume().unwrap());
        assert!(!bad.exp().unwrap().preserves_volume().unwrap());
    }

    #[test]
    fn classification_flags() {
        let r = LocalRing::polynomial(&OrderContext::single_cell(3, vec![0, 0, 0], 3));
        let joint = JointLattice { basis: vec![vec![0, 0, 1]], projection: [vec![1, 0, 0], vec![0, 1, 0]] };
        let pure_t = LogDerivation::monomial(&r, Exponent::t(3), q(1), &[1, 0, 0]).unwrap();
        let tags = classify(&pure_t, &joint, None).unwrap();
        assert!(tags.h_tilde && !tags.h);
        let perp = LogDerivation::monomial(&r, Exponent::new(vec![1, 0, 0], 1), q(1), &[0, 1, 0]).unwrap();
        let tags = classify(&perp, &joint, Some(&[[-1, 0]])).unwrap();
        assert!(tags.h_perp && tags.h && !tags.h_parallel);
        assert_eq!(tags.h_cone, Some(true));
    }
}
