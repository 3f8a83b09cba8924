use std::sync::Arc;

use proptest::prelude::*;

use tropscat::algebra::{AlgebraError, Exponent, LocalRing, LocalizedElement, OrderContext, TruncatedPoly};
use tropscat::lattice::q;
use tropscat::samples;
use tropscat::structure::Surface;

/// Vertex of the fan of the projective plane with slopes `0, (1, 0), (0, 1)`.
fn plane_vertex(k: i64) -> Arc<OrderContext> {
    OrderContext::full(2, vec![vec![0, 0], vec![1, 0], vec![0, 1]], k)
}

fn poly(ctx: &Arc<OrderContext>, terms: &[([i64; 2], i64, i64)]) -> TruncatedPoly {
    let mut f = TruncatedPoly::zero(ctx);
    for (m, h, c) in terms {
        let e = Exponent::new(m.to_vec(), *h);
        if ctx.in_monoid(&e) {
            f = &f + &TruncatedPoly::monomial(ctx, e, q(*c)).unwrap();
        }
    }
    f
}

fn terms() -> impl Strategy<Value = Vec<([i64; 2], i64, i64)>> {
    prop::collection::vec(((-2i64..=2, -2i64..=2).prop_map(|(a, b)| [a, b]), 0i64..=3, -3i64..=3), 0..5)
}

#[test]
fn t_has_order_one_everywhere() {
    let ctx = plane_vertex(3);
    for c in 0..3 {
        assert_eq!(ctx.ord(&Exponent::t(2), c).unwrap(), 1);
    }
    assert_eq!(ctx.ord_max(&Exponent::t(2)), 1);
    assert_eq!(plane_vertex(7).ord_max(&Exponent::t(2)), 1);
}

#[test]
fn order_at_a_vertex_of_a_line_is_not_additive() {
    // slopes 0 and 1 on the two sides: x and y generate, t = xy
    let ctx = OrderContext::full(1, vec![vec![0], vec![1]], 4);
    let x = Exponent::new(vec![-1], 0);
    let y = Exponent::new(vec![1], 1);
    assert_eq!(x.plus(&y), Exponent::t(1));
    assert_eq!(ctx.ord_max(&x), 1);
    assert_eq!(ctx.ord_max(&y), 1);
    assert_eq!(ctx.ord_max(&Exponent::t(1)), 1);
}

#[test]
fn pure_t_order_is_uniform() {
    let ctx = plane_vertex(5);
    for h in 0..5 {
        let e = Exponent::new(vec![0, 0], h);
        assert!((0..3).all(|c| ctx.ord(&e, c).unwrap() == h));
        assert_eq!(ctx.ord_max(&e), h);
    }
}

#[test]
fn order_jump_across_an_edge_is_the_kink() {
    let s = samples::standard_grid(2, 2);
    let surf = Surface::new(s.manifold.clone(), s.polarization.clone()).unwrap();
    for edge in surf.interior_edges() {
        let mono = surf.monodromy(edge).unwrap().clone();
        let v = mono.v_plus;
        let (ctx, cells) = surf.vertex_context(v, 5, Default::default());
        let ip = cells.iter().position(|&c| c == mono.sigma_plus).unwrap();
        let im = cells.iter().position(|&c| c == mono.sigma_minus).unwrap();
        // slope difference evaluated on a vector crossing the edge once
        let dc = s.manifold.to_vertex_chart(v, mono.sigma_plus, &[mono.d[1], -mono.d[0]]);
        let lp = &s.polarization.slopes[v][&mono.sigma_plus];
        let lm = &s.polarization.slopes[v][&mono.sigma_minus];
        let kink = (lm[0] - lp[0]) * dc[0] + (lm[1] - lp[1]) * dc[1];
        let e = Exponent::new(dc.clone(), 10);
        assert_eq!(ctx.ord(&e, ip).unwrap() - ctx.ord(&e, im).unwrap(), kink);
        assert_ne!(kink, 0);
    }
}

#[test]
fn multiplication_truncates() {
    let ctx = OrderContext::single_cell(2, vec![0, 0], 2);
    let a = poly(&ctx, &[([0, 0], 0, 1), ([1, 0], 1, 1)]);
    let b = poly(&ctx, &[([0, 0], 0, 1), ([0, 1], 1, 1)]);
    // (1 + tx)(1 + ty) = 1 + tx + ty + t^2 xy, all of order at most 2
    assert_eq!(&a * &b, poly(&ctx, &[([0, 0], 0, 1), ([1, 0], 1, 1), ([0, 1], 1, 1), ([1, 1], 2, 1)]));
    // squaring the result drops every term of order 3 and 4
    let sq = &(&a * &b) * &(&a * &b);
    assert!(sq.terms().keys().all(|m| m.h <= 2));
    assert_eq!(sq.coeff(&Exponent::new(vec![1, 1], 2)), q(4));
    assert_eq!(&a * &TruncatedPoly::one(&ctx), a);
}

#[test]
fn mixing_contexts_is_an_error() {
    let a = TruncatedPoly::one(&plane_vertex(2));
    let b = TruncatedPoly::one(&plane_vertex(3));
    assert!(matches!(a.checked_mul(&b), Err(AlgebraError::ContextMismatch)));
}

#[test]
fn dividing_by_a_factor() {
    let ctx = OrderContext::single_cell(2, vec![0, 0], 4);
    let x = poly(&ctx, &[([0, 0], 0, 1), ([1, 0], 0, 1)]);
    let y = poly(&ctx, &[([0, 0], 0, 1), ([0, 1], 0, 1)]);
    assert_eq!((&x * &y).try_divide(&x).unwrap(), y);
    assert_eq!(x.try_divide(&x).unwrap(), TruncatedPoly::one(&ctx));
}

#[test]
fn localized_elements_reduce() {
    let ctx = OrderContext::single_cell(2, vec![0, 0], 3);
    let f = poly(&ctx, &[([0, 0], 0, 1), ([1, 0], 0, 1)]);
    let g = poly(&ctx, &[([0, 0], 0, 2), ([0, 1], 1, 1)]);
    let ring = LocalRing::new(&ctx, std::slice::from_ref(&f)).unwrap();
    let ff = LocalizedElement::new(&ring, f.clone(), vec![1]);
    assert!(ff.reduce().is_one());
    let fg = LocalizedElement::new(&ring, &f * &g, vec![1]).reduce();
    assert_eq!(fg, LocalizedElement::from_poly(&ring, g.clone()));
    let kept = LocalizedElement::new(&ring, g.clone(), vec![1]);
    assert_eq!(kept.reduce(), kept);
    assert_eq!(kept.reduce().reduce(), kept.reduce());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ring_axioms(a in terms(), b in terms(), c in terms()) {
        let ctx = plane_vertex(3);
        let (a, b, c) = (poly(&ctx, &a), poly(&ctx, &b), poly(&ctx, &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert!((&a - &a).is_zero());
    }

    #[test]
    fn cell_orders_are_additive(m1 in (-3i64..=3, -3i64..=3, -3i64..=6), m2 in (-3i64..=3, -3i64..=3, -3i64..=6), cell in 0usize..3) {
        let ctx = plane_vertex(4);
        let a = Exponent::new(vec![m1.0, m1.1], m1.2);
        let b = Exponent::new(vec![m2.0, m2.1], m2.2);
        prop_assert_eq!(ctx.ord(&a.plus(&b), cell).unwrap(), ctx.ord(&a, cell).unwrap() + ctx.ord(&b, cell).unwrap());
        prop_assert!(ctx.ord_max(&a.plus(&b)) <= ctx.ord_max(&a) + ctx.ord_max(&b));
    }

    #[test]
    fn division_undoes_multiplication(qt in terms(), ft in terms(), c0 in prop::sample::select(vec![-3i64, -2, -1, 1, 2, 3])) {
        let ctx = plane_vertex(3);
        let quotient = poly(&ctx, &qt);
        let mut f = poly(&ctx, &ft).filter(|m| !m.is_zero());
        f = &f + &TruncatedPoly::constant(&ctx, q(c0));
        prop_assert_eq!((&quotient * &f).try_divide(&f).unwrap(), quotient);
    }

    #[test]
    fn chart_round_trips_keep_orders(mx in -3i64..=3, my in -3i64..=3, h in 0i64..=4) {
        let s = samples::focus_focus();
        let surf = Surface::new(s.manifold.clone(), s.polarization.clone()).unwrap();
        for v in 0..s.manifold.vertex_count {
            for c in s.manifold.cells_at(v) {
                let e = Exponent::new(vec![mx, my], h);
                let at_v = surf.cell_to_vertex(v, c, &e);
                prop_assert_eq!(surf.vertex_to_cell(v, c, &at_v), e.clone());
                let (ctx, cells) = surf.vertex_context(v, 6, Default::default());
                let i = cells.iter().position(|&x| x == c).unwrap();
                prop_assert_eq!(ctx.ord(&at_v, i).unwrap(), h);
            }
        }
    }
}
