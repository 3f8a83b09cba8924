use tropscat::algebra::{CoeffRing, Exponent};
use tropscat::lattice::{q, qr};
use tropscat::samples::{self, Sample};
use tropscat::structure::{GluingInput, PiecewiseMultiplicative, RunOptions, Site, Structure, StructureError, StructureJson, Surface};

fn surface(s: &Sample) -> Surface {
    Surface::new(s.manifold.clone(), s.polarization.clone()).unwrap()
}

fn gluing(s: &Sample) -> GluingInput {
    GluingInput::new(s.sections.clone(), CoeffRing::Integer)
}

fn run(s: &Sample, k: i64) -> (Surface, Vec<Structure>) {
    let surf = surface(s);
    let out = surf.run(&gluing(s), k, &RunOptions { jobs: 2, checkpoint_dir: None }).unwrap();
    (surf, out)
}

fn pieces(st: &Structure, edge: [usize; 2]) -> Vec<String> {
    st.slab(edge).unwrap().pieces.iter().map(|p| p.function.to_string()).collect()
}

#[test]
fn diamond_stabilizes_after_first_order() {
    let (surf, out) = run(&samples::focus_focus(), 4);
    assert_eq!(out.len(), 5);
    for st in &out {
        assert!(surf.check_consistency(st).unwrap().passes());
        assert!(st.is_integral());
        assert!(st.walls.is_empty());
    }
    for st in &out[1..] {
        assert_eq!(pieces(st, [0, 1]), vec!["1 + 1*z^(1,0;1)"]);
        assert_eq!(pieces(st, [0, 3]), vec!["1 + 1*z^(1,0;1)"]);
        for e in [[0, 2], [0, 4]] {
            assert_eq!(pieces(st, e), vec!["1"]);
        }
    }
    for w in out.windows(2) {
        assert_eq!(surf.compatible(&w[0], &w[1]).unwrap(), Ok(()));
    }
}

#[test]
fn pair_grows_one_product_wall_at_order_two() {
    let (surf, out) = run(&samples::focus_focus_pair(), 3);
    assert!(out[1].walls.is_empty());
    for st in &out[2..] {
        assert_eq!(st.walls.len(), 1);
        let w = &st.walls[0];
        assert_eq!(w.cell, 2);
        assert_eq!(w.base, [q(0), q(0)]);
        assert_eq!(w.top, [qr(-1, 2), qr(-1, 2)]);
        assert_eq!(w.m, Exponent::new(vec![1, 1], 2));
        assert_eq!(w.c, q(1));
        assert_eq!(surf.order_at_top(w).unwrap(), None);
    }
    assert_eq!(pieces(&out[3], [0, 1]), vec!["1 + 1*z^(1,0;1)"]);
    assert_eq!(pieces(&out[3], [0, 2]), vec!["1 + 1*z^(0,1;1)"]);
}

#[test]
fn corrupted_wall_fails_only_at_its_base() {
    let (surf, out) = run(&samples::focus_focus_pair(), 2);
    let mut bad = out[2].clone();
    bad.walls[0].c = q(2);
    let report = surf.check_consistency(&bad).unwrap();
    let failed: Vec<&str> = report.failures().iter().map(|j| j.site.as_str()).collect();
    assert_eq!(failed, vec!["vertex 0"]);
    assert!(!report.failures()[0].defect.is_empty());
}

#[test]
fn order_zero_is_consistent_on_all_samples() {
    let mut all = vec![samples::focus_focus(), samples::focus_focus_pair(), samples::cubic_cone(), samples::standard_grid(3, 3)];
    all.push(samples::regular_grid(2, 2, &|i, j| (i * j) as i64).unwrap());
    for s in &all {
        let surf = surface(s);
        let s0 = surf.initial_structure(&gluing(s)).unwrap();
        assert!(surf.check_consistency(&s0).unwrap().passes());
    }
}

#[test]
fn multiplicative_violation_is_localized() {
    let mut s = samples::standard_grid(3, 2);
    s.sections.insert([1, 5], vec![(vec![0, 0], q(2))]);
    let surf = surface(&s);
    assert_eq!(surf.multiplicative_failures(&gluing(&s)).unwrap(), vec![5]);
    assert!(matches!(surf.initial_structure(&gluing(&s)), Err(StructureError::MultiplicativeConditionFailed { vertex: 5 })));
}

#[test]
fn mismatched_sections_are_rejected() {
    let mut s = samples::focus_focus();
    let mut other = s.sections[&[0, 1]].clone();
    other.push((vec![2, 0], q(1)));
    s.sections.insert([1, 0], other);
    assert!(matches!(surface(&s).initial_structure(&gluing(&s)), Err(StructureError::BadSection { .. })));
}

#[test]
fn cubic_cone_is_trivial_below_order_three() {
    let (surf, out) = run(&samples::cubic_cone(), 3);
    for st in &out[..3] {
        assert!(st.walls.is_empty());
        assert_eq!(*st, surf.at_order(&out[0], st.order).unwrap());
    }
    assert!(surf.check_consistency(&out[3]).unwrap().passes());
    assert!(out[3].is_integral());
    for w in &out[3].walls {
        if let Some(h) = surf.order_at_top(w).unwrap() {
            assert!(h > w.m.h, "{w:?}");
        }
    }
}

#[test]
fn standard_grid_runs_consistently() {
    let (surf, out) = run(&samples::standard_grid(3, 3), 3);
    for st in &out {
        assert!(surf.check_consistency(st).unwrap().passes());
    }
}

#[test]
fn chamber_change_is_independent_of_the_vertex() {
    let (surf, out) = run(&samples::focus_focus(), 3);
    let st = &out[3];
    let mono = surf.monodromy([0, 1]).unwrap().clone();
    let mut checked = 0;
    for mbar in [vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1], vec![1, 1], vec![0, 2]] {
        if tropscat::lattice::dot(&mbar, &mono.d_check) < 0 {
            continue;
        }
        let m = Exponent::new(mbar, 1);
        for s in [qr(1, 4), qr(3, 4)] {
            let a = surf.change_chamber(st, [0, 1], &s, 0, &m).unwrap();
            let b = surf.change_chamber(st, [0, 1], &s, 1, &m).unwrap();
            assert_eq!(a, b, "{m} at {s}");
            checked += 1;
        }
    }
    assert!(checked >= 6);
}

#[test]
fn chamber_change_refuses_negative_powers() {
    let (surf, out) = run(&samples::focus_focus(), 1);
    let mono = surf.monodromy([0, 1]).unwrap().clone();
    let m = Exponent::new(mono.d_check.iter().map(|x| -x).collect(), 1);
    assert!(matches!(surf.change_chamber(&out[1], [0, 1], &qr(1, 4), 0, &m), Err(StructureError::Unsupported(_))));
}

#[test]
fn d_factor_changes_by_the_monodromy() {
    let s = samples::focus_focus();
    let surf = surface(&s);
    let mono = surf.monodromy([0, 1]).unwrap().clone();
    let mut mu = PiecewiseMultiplicative::default();
    let vals = [(q(2), q(3)), (q(5), qr(1, 7)), (q(11), q(13)), (qr(3, 2), q(17))];
    for (c, (a, b)) in vals.iter().enumerate() {
        mu.values.insert(c, [a.clone(), b.clone()]);
    }
    let plus = surf.d_factor(&mu, [0, 1], mono.v_plus).unwrap();
    let minus = surf.d_factor(&mu, [0, 1], mono.v_minus).unwrap();
    // the two transports of a monomial with <d_check, m> = 1 differ by kappa d
    let d_minus = s.manifold.from_vertex_chart(mono.v_plus, mono.sigma_minus, &s.manifold.to_vertex_chart(mono.v_plus, mono.sigma_plus, &mono.d));
    let step = mu.eval(mono.sigma_minus, &d_minus).unwrap().pow(mono.kappa as i32);
    assert_ne!(step, q(1));
    assert_eq!(minus, plus / step);
}

#[test]
fn joints_of_the_pair_at_order_two() {
    let (surf, out) = run(&samples::focus_focus_pair(), 2);
    let joints = surf.joints(&out[2]);
    assert!(joints.contains(&Site::Vertex(0)));
    assert!(!joints.iter().any(|s| matches!(s, Site::Vertex(v) if *v != 0)));
}

#[test]
fn json_round_trip() {
    let (surf, out) = run(&samples::focus_focus_pair(), 2);
    for st in &out {
        let j = StructureJson::from_structure(&surf, st, true).unwrap();
        let text = serde_json::to_string(&j).unwrap();
        let back: StructureJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back, j);
        let (_, again) = back.to_structure(None).unwrap();
        assert_eq!(&again, st);
    }
}

#[test]
fn json_rejects_a_wrong_vertex_change() {
    let (surf, out) = run(&samples::focus_focus(), 1);
    let mut j = StructureJson::from_structure(&surf, &out[1], false).unwrap();
    let piece = &mut j.slabs.iter_mut().find(|s| s.rho == [0, 1]).unwrap().pieces[0];
    assert_eq!(piece.per_vertex_f.len(), 2);
    piece.per_vertex_f.get_mut("1").unwrap()[0].coeff = "5".into();
    assert!(matches!(j.to_structure(Some(&surf)), Err(StructureError::Malformed(_))));
}

#[test]
fn checkpoints_resume() {
    let dir = std::env::temp_dir().join(format!("tropscat-ckpt-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let s = samples::focus_focus_pair();
    let surf = surface(&s);
    let opts = RunOptions { jobs: 1, checkpoint_dir: Some(dir.clone()) };
    let first = surf.run(&gluing(&s), 2, &opts).unwrap();
    assert!(dir.join("structure_order_2.json").exists());
    let second = surf.run(&gluing(&s), 3, &opts).unwrap();
    assert_eq!(&second[..3], &first[..]);
    let fresh = surf.run(&gluing(&s), 3, &RunOptions::default()).unwrap();
    assert_eq!(second, fresh);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn rational_ring_gives_the_same_walls() {
    let s = samples::focus_focus_pair();
    let surf = surface(&s);
    let a = surf.run(&gluing(&s), 2, &RunOptions::default()).unwrap();
    let b = surf.run(&GluingInput::new(s.sections.clone(), CoeffRing::Rational), 2, &RunOptions::default()).unwrap();
    let walls = |v: &Vec<Structure>| v.iter().map(|s| s.walls.clone()).collect::<Vec<_>>();
    assert_eq!(walls(&a), walls(&b));
}
