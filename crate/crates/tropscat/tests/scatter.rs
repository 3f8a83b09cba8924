use std::cmp::Ordering;
use std::sync::Arc;

use proptest::prelude::*;

use tropscat::algebra::{Exponent, LocalizedElement, OrderContext, TruncatedPoly};
use tropscat::lattice::{q, Q};
use tropscat::logauto::LogAutomorphism;
use tropscat::samples;
use tropscat::scatter::*;

fn plane(k: i64) -> Arc<OrderContext> {
    OrderContext::single_cell(2, vec![0, 0], k)
}

fn poly(ctx: &Arc<OrderContext>, terms: &[([i64; 2], i64, i64)]) -> TruncatedPoly {
    let mut f = TruncatedPoly::one(ctx);
    for (m, h, c) in terms {
        f = &f + &TruncatedPoly::monomial(ctx, Exponent::new(m.to_vec(), *h), q(*c)).unwrap();
    }
    f
}

/// Complete order by order with outgoing rays.
fn complete_to(d: &ScatteringDiagram, k: i64, order: ProcessingOrder) -> Completion {
    let mut cur = d.at_order(0).unwrap();
    let mut last = None;
    for i in 0..=k {
        let c = ks_complete_codim0_with(&cur.at_order(i).unwrap(), order).unwrap();
        cur = c.diagram.clone();
        last = Some(c);
    }
    last.unwrap()
}

fn lines(k: i64, ls: &[([i64; 2], i64, i64)]) -> ScatteringDiagram {
    let mut d = ScatteringDiagram::new(JointContext::planar(&plane(k), 0, &[]).unwrap());
    for (m, h, c) in ls {
        d.add_line(Exponent::new(m.to_vec(), *h), q(*c));
    }
    d
}

#[test]
fn two_lines_produce_the_product_ray() {
    let c = ks_complete_codim0(&samples::two_lines(2)).unwrap();
    assert_eq!(c.added_rays.len(), 1);
    let r = &c.added_rays[0];
    assert_eq!(r.direction, [-1, -1]);
    assert_eq!(r.exponent, Exponent::new(vec![1, 1], 2));
    assert_eq!(r.coeff, q(1));
    assert_eq!(r.kind, RayKind::Outgoing);
    assert!(c.residual.is_zero());
    assert!(c.diagram.loop_product().unwrap().is_identity());
}

#[test]
fn brute_force_search_finds_only_the_product_ray() {
    let d = samples::two_lines(2);
    assert!(!d.loop_product().unwrap().is_identity());
    let mut found = vec![];
    for a in -2i64..=2 {
        for b in -2i64..=2 {
            if (a, b) == (0, 0) {
                continue;
            }
            for c in [-3i64, -2, -1, 1, 2, 3] {
                let mut e = d.clone();
                e.add_ray([-a, -b], Exponent::new(vec![a, b], 2), q(c));
                if e.loop_product().unwrap().is_identity() {
                    found.push(([a, b], c));
                }
            }
        }
    }
    assert_eq!(found, vec![([1, 1], 1)]);
}

#[test]
fn consistent_input_is_left_alone() {
    let d = lines(3, &[([1, 0], 1, 1)]);
    let c = ks_complete_codim0(&d).unwrap();
    assert!(c.added_rays.is_empty());
    assert!(diagrams_equivalent(&c.diagram, &d).unwrap());
}

#[test]
fn pure_t_defect_is_reported_not_cancelled() {
    // a ray carrying 1 + t has no direction to send its inverse along
    let mut d = ScatteringDiagram::new(JointContext::planar(&plane(1), 0, &[]).unwrap());
    d.add_ray([1, 1], Exponent::new(vec![0, 0], 1), q(1));
    assert_eq!(d.rays[0].kind, RayKind::Undirectional);
    let c = ks_complete_codim0(&d).unwrap();
    assert!(c.added_rays.is_empty());
    assert!(!c.residual.is_zero());
    assert!(residual_in_class(&c.residual, &d.joint, None));
}

#[test]
fn counterexample_is_trivial_at_order_zero() {
    let d = samples::denominator_counterexample(0).unwrap();
    assert!(d.loop_product().unwrap().is_identity());
}

#[test]
fn counterexample_needs_a_denominator() {
    let d = samples::denominator_counterexample(1).unwrap();
    let err = naive_complete(&d, &CompletionOptions::default()).unwrap_err();
    let ScatterError::Denominator(w) = err else { panic!("{err}") };
    assert_eq!(w.direction, [0, 1]);
    // m -> g^{<mbar, (1, 0, 0)>}
    assert_eq!(w.normal, vec![-1, 0, 0]);
    let ctx = d.ctx();
    let f1 = poly(ctx, &[]);
    let w3 = TruncatedPoly::monomial(ctx, Exponent::new(vec![0, 0, 1], 0), q(1)).unwrap();
    let u = TruncatedPoly::monomial(ctx, Exponent::new(vec![0, -1, 0], 0), q(1)).unwrap();
    let f1 = &f1 + &w3;
    // g = 1 + u / (1 + w)
    let i = d.ring().index_of(&f1).unwrap();
    let mut den = vec![0; d.ring().localizers().len()];
    den[i] = 1;
    let expected = LocalizedElement::new(d.ring(), &f1 + &u, den.clone());
    let got = w.function.reduce();
    assert_eq!(got, expected);
    let support = |p: &TruncatedPoly| p.terms().keys().cloned().collect::<Vec<_>>();
    assert_eq!(support(&got.num), support(&(&f1 + &u)));
    assert_eq!(got.den, den);
    assert!(!got.is_polynomial());
}

#[test]
fn splitting_a_ray_is_equivalent() {
    let k = 3;
    let m = Exponent::new(vec![1, 0], 2);
    let mut one = ScatteringDiagram::new(JointContext::planar(&plane(k), 0, &[]).unwrap());
    one.add_ray([-1, 0], m.clone(), q(3));
    let mut two = ScatteringDiagram::new(JointContext::planar(&plane(k), 0, &[]).unwrap());
    // (1 + z^m)(1 + 2 z^m) = 1 + 3 z^m since z^{2m} has order 4
    two.add_ray([-1, 0], m.clone(), q(1));
    two.add_ray([-1, 0], m.clone(), q(2));
    assert!(diagrams_equivalent(&one, &two).unwrap());
    assert!(diagrams_equivalent(&one, &one).unwrap());
    let mut other = one.clone();
    other.rays[0].coeff = q(2);
    assert!(!diagrams_equivalent(&one, &other).unwrap());
}

#[test]
fn differing_cut_constants_are_not_equivalent() {
    let ctx = plane(2);
    let f = poly(&ctx, &[([1, 0], 1, 1)]);
    let g = &f + &TruncatedPoly::t_power(&ctx, 2, q(1));
    let mk = |h: &TruncatedPoly| {
        let mut d = ScatteringDiagram::new(JointContext::planar(&ctx, 1, std::slice::from_ref(h)).unwrap());
        d.add_cut([1, 0], h.clone(), "a");
        d.add_cut([-1, 0], h.clone(), "b");
        d
    };
    assert!(!diagrams_equivalent(&mk(&f), &mk(&g)).unwrap());
    assert!(matches!(diagrams_equivalent(&mk(&f), &lines(3, &[])), Err(ScatterError::OrderMismatch(_))));
}

#[test]
fn cut_perturbation_matches_recomputation() {
    let k = 3;
    let ctx = plane(k);
    let f = poly(&ctx, &[([1, 0], 1, 1), ([0, 0], 2, 1)]);
    let mut d = ScatteringDiagram::new(JointContext::planar(&ctx, 1, std::slice::from_ref(&f)).unwrap());
    d.add_cut([1, 0], f.clone(), "a");
    d.add_cut([-1, 0], f.clone(), "b");
    assert!(d.loop_product().unwrap().is_identity());
    let m = Exponent::new(vec![1, 0], k);
    let (p, pred) = perturb_cut(&d, 0, &m, &q(5)).unwrap();
    assert_eq!(p.loop_product().unwrap().log().unwrap().reduce(), pred.reduce());
    let (_, zero) = perturb_cut(&d, 0, &m, &q(0)).unwrap();
    assert!(zero.reduce().is_zero());
    assert!(matches!(perturb_cut(&d, 0, &Exponent::new(vec![1, 0], 1), &q(1)), Err(ScatterError::OrderMismatch(_))));
}

#[test]
fn undirectional_ray_prediction_matches_recomputation() {
    let k = 2;
    let ctx = plane(k);
    let f = poly(&ctx, &[([1, 0], 1, 1)]);
    let mut d = ScatteringDiagram::new(JointContext::planar(&ctx, 1, std::slice::from_ref(&f)).unwrap());
    d.add_cut([1, 0], f.clone(), "a");
    d.add_cut([-1, 0], f.clone(), "b");
    let (p, pred) = add_undirectional_ray(&d, [0, 1], &Exponent::new(vec![0, 0], k), &q(2)).unwrap();
    assert_eq!(p.loop_product().unwrap().log().unwrap().reduce(), pred);
    assert!(matches!(add_undirectional_ray(&d, [0, 1], &Exponent::new(vec![1, 0], k), &q(2)), Err(ScatterError::NotInClass(_))));
}

#[test]
fn descending_order_agrees_on_two_lines_up_to_order_four() {
    let d = samples::two_lines(4);
    for k in 1..=4 {
        let a = complete_to(&d, k, ProcessingOrder::Ascending);
        let b = complete_to(&d, k, ProcessingOrder::Descending);
        assert!(diagrams_equivalent(&a.diagram, &b.diagram).unwrap(), "order {k}");
        assert!(a.diagram.loop_product().unwrap().is_identity());
    }
}

#[test]
fn completion_rejects_an_inconsistent_lower_order() {
    let d = samples::two_lines(3);
    assert!(matches!(ks_complete_codim0(&d), Err(ScatterError::InconsistentInput(_))));
}

#[test]
fn diagram_json_round_trip() {
    let c = ks_complete_codim0(&samples::two_lines(2)).unwrap();
    let j = c.diagram.to_json();
    let text = serde_json::to_string(&j).unwrap();
    let back = ScatteringDiagram::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert!(diagrams_equivalent(&back, &c.diagram).unwrap());
    assert!(c.diagram.render_svg().starts_with("<svg"));
}

fn directions() -> impl Strategy<Value = [i64; 2]> {
    prop::sample::select(vec![[0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1], [1, 1], [2, 1], [1, 2], [-2, 1]])
}

/// Rays `(dir, m, c)` with `mbar = +-s dir`; none on the positive first axis.
fn rays() -> impl Strategy<Value = Vec<([i64; 2], i64, i64, i64)>> {
    let sign = prop::sample::select(vec![-1i64, 1]);
    let coeff = prop::sample::select(vec![-2i64, -1, 1, 2]);
    prop::collection::vec((directions(), sign, 1i64..=3, coeff), 1..5)
}

fn ray_diagram(proj: [Vec<i64>; 2], map: impl Fn([i64; 2]) -> [i64; 2], rs: &[([i64; 2], i64, i64, i64)]) -> ScatteringDiagram {
    let ctx = plane(3);
    let mut d = ScatteringDiagram::new(JointContext::new(&ctx, proj, 0, &[]).unwrap());
    for (dir, s, h, c) in rs {
        d.add_ray(map(*dir), Exponent::new(vec![s * dir[0], s * dir[1]], *h), Q::from_integer((*c).into()));
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reversing_orientation_inverts_the_loop(rs in rays()) {
        let d = ray_diagram([vec![1, 0], vec![0, 1]], |v| v, &rs);
        let mirror = ray_diagram([vec![1, 0], vec![0, -1]], |v| [v[0], -v[1]], &rs);
        let l = d.loop_product().unwrap();
        prop_assert_eq!(mirror.loop_product().unwrap(), l.invert().unwrap());
    }

    #[test]
    fn changing_the_base_cell_conjugates_the_loop(rs in rays()) {
        let d = ray_diagram([vec![1, 0], vec![0, 1]], |v| v, &rs);
        // quarter turn: the loop now starts on the old negative second axis
        let turned = ray_diagram([vec![0, -1], vec![1, 0]], |v| [-v[1], v[0]], &rs);
        let late: Vec<_> = rs.iter().filter(|r| angle_cmp(&r.0, &[0, -1]) != Ordering::Less).cloned().collect();
        let b = ray_diagram([vec![1, 0], vec![0, 1]], |v| v, &late).loop_product().unwrap();
        let expected = b.invert().unwrap().compose(&d.loop_product().unwrap()).unwrap().compose(&b).unwrap();
        prop_assert_eq!(turned.loop_product().unwrap(), expected);
    }

    #[test]
    fn completion_is_unique_up_to_equivalence(ls in prop::collection::vec((directions(), 1i64..=2, prop::sample::select(vec![-1i64, 1, 2])), 1..4)) {
        let k = 3;
        let ls: Vec<([i64; 2], i64, i64)> = ls.into_iter().collect();
        let d = lines(k, &ls);
        let a = complete_to(&d, k, ProcessingOrder::Ascending);
        let b = complete_to(&d, k, ProcessingOrder::Descending);
        prop_assert!(diagrams_equivalent(&a.diagram, &b.diagram).unwrap());
        prop_assert!(residual_in_class(&a.residual, &d.joint, None));
        let l: LogAutomorphism = a.diagram.loop_product().unwrap();
        prop_assert_eq!(l.log().unwrap().reduce(), a.residual.reduce());
    }
}
