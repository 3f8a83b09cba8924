use std::sync::Arc;

use proptest::prelude::*;

use tropscat::algebra::{Exponent, LocalRing, LocalizedElement, OrderContext, TruncatedPoly};
use tropscat::lattice::q;
use tropscat::logauto::{conjugation_closed_form, LogAutomorphism, LogDerivation};

const K: i64 = 3;

fn ring() -> Arc<LocalRing> {
    LocalRing::polynomial(&OrderContext::single_cell(2, vec![0, 0], K))
}

type Term = ([i64; 2], i64, i64, [i64; 2]);

/// `sum c z^m d_n` over terms of positive order.
fn derivation(r: &Arc<LocalRing>, terms: &[Term]) -> LogDerivation {
    terms.iter().fold(LogDerivation::zero(r), |acc, (m, h, c, n)| {
        acc.add(&LogDerivation::monomial(r, Exponent::new(m.to_vec(), *h), q(*c), n).unwrap())
    })
}

fn derivation_terms() -> impl Strategy<Value = Vec<Term>> {
    let pair = || (-2i64..=2, -2i64..=2).prop_map(|(a, b)| [a, b]);
    prop::collection::vec((pair(), 1i64..=K, -3i64..=3, pair()), 0..4)
}

/// `1 + sum c t^h z^{(a, 0)}`, constant along `(0, 1)`.
fn annihilated(r: &Arc<LocalRing>, terms: &[(i64, i64, i64)]) -> LocalizedElement {
    let ctx = r.ctx();
    let mut f = TruncatedPoly::one(ctx);
    for (a, h, c) in terms {
        f = &f + &TruncatedPoly::monomial(ctx, Exponent::new(vec![*a, 0], *h), q(*c)).unwrap();
    }
    LocalizedElement::from_poly(r, f)
}

fn h_terms() -> impl Strategy<Value = Vec<(i64, i64, i64)>> {
    prop::collection::vec((-2i64..=2, 1i64..=K, -2i64..=2), 0..3)
}

#[test]
fn brackets_of_depth_beyond_the_order_vanish() {
    let r = ring();
    let a = derivation(&r, &[([1, 0], 1, 1, [0, 1])]);
    let b = derivation(&r, &[([0, 1], 1, 1, [1, 0])]);
    let mut x = a.clone();
    for i in 0..K {
        assert!(!x.reduce().is_zero() || i > 0);
        x = a.bracket(&x.bracket(&b));
    }
    assert!(x.reduce().is_zero());
}

#[test]
fn conjugating_by_a_wall_crossing_matches_the_closed_form() {
    let r = ring();
    let h = annihilated(&r, &[(1, 1, 1)]);
    let theta = LogAutomorphism::crossing(&h, &[0, 1]).unwrap();
    let m = Exponent::new(vec![0, 1], 1);
    let direct = theta.adjoint(&LogDerivation::monomial(&r, m.clone(), q(1), &[1, 0]).unwrap()).unwrap();
    assert_eq!(direct.reduce(), conjugation_closed_form(&h, &[0, 1], &m, &q(1), &[1, 0]).unwrap().reduce());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn exp_and_log_are_inverse(t in derivation_terms()) {
        let r = ring();
        let xi = derivation(&r, &t).reduce();
        let theta = xi.exp().unwrap();
        prop_assert_eq!(theta.log().unwrap().reduce(), xi);
        prop_assert_eq!(theta.log().unwrap().exp().unwrap(), theta.clone());
        prop_assert!(theta.compose(&theta.invert().unwrap()).unwrap().is_identity());
    }

    #[test]
    fn adjoint_is_a_group_action(a in derivation_terms(), b in derivation_terms(), x in derivation_terms()) {
        let r = ring();
        let t1 = derivation(&r, &a).exp().unwrap();
        let t2 = derivation(&r, &b).exp().unwrap();
        let xi = derivation(&r, &x);
        let lhs = t1.compose(&t2).unwrap().adjoint(&xi).unwrap().reduce();
        let rhs = t1.adjoint(&t2.adjoint(&xi).unwrap()).unwrap().reduce();
        prop_assert_eq!(lhs, rhs);
        // exp(Ad_theta xi) = theta exp(xi) theta^{-1}
        let conj = t1.compose(&xi.exp().unwrap()).unwrap().compose(&t1.invert().unwrap()).unwrap();
        prop_assert_eq!(t1.adjoint(&xi).unwrap().exp().unwrap(), conj);
    }

    #[test]
    fn bracket_is_a_lie_bracket(a in derivation_terms(), b in derivation_terms(), c in derivation_terms()) {
        let r = ring();
        let (a, b, c) = (derivation(&r, &a), derivation(&r, &b), derivation(&r, &c));
        prop_assert!(a.bracket(&b).add(&b.bracket(&a)).reduce().is_zero());
        let jacobi = a.bracket(&b.bracket(&c)).add(&b.bracket(&c.bracket(&a))).add(&c.bracket(&a.bracket(&b)));
        prop_assert!(jacobi.reduce().is_zero());
    }

    #[test]
    fn closed_form_conjugation(ht in h_terms(), m in ((-2i64..=2, -2i64..=2), 1i64..=K), c in -3i64..=3, n in (-2i64..=2, -2i64..=2)) {
        let r = ring();
        let h = annihilated(&r, &ht);
        let theta = LogAutomorphism::crossing(&h, &[0, 1]).unwrap();
        let e = Exponent::new(vec![(m.0).0, (m.0).1], m.1);
        let nv = [n.0, n.1];
        let direct = theta.adjoint(&LogDerivation::monomial(&r, e.clone(), q(c), &nv).unwrap()).unwrap().reduce();
        let closed = conjugation_closed_form(&h, &[0, 1], &e, &q(c), &nv).unwrap().reduce();
        prop_assert_eq!(direct, closed);
    }

    #[test]
    fn parallel_crossings_commute(f in h_terms(), g in h_terms(), s in 1i64..=2) {
        let r = ring();
        let a = LogAutomorphism::crossing(&annihilated(&r, &f), &[0, 1]).unwrap();
        let b = LogAutomorphism::crossing(&annihilated(&r, &g), &[0, s]).unwrap();
        prop_assert_eq!(a.compose(&b).unwrap(), b.compose(&a).unwrap());
    }
}
