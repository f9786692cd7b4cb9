use std::sync::Arc;

use gflow_core::etale::pullback;
use gflow_core::fields::{average, ActionField};
use gflow_core::flows::{integrate_curve, Integrator, VectorField};
use gflow_core::groups::{CompactGroup, FiniteGroup, GroupElement, HaarConfig, SmoothAction};
use gflow_core::{parse, seeded_rng, Config, Manifold, SmoothMap};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn so3_element(v: [f64; 3]) -> GroupElement {
    CompactGroup::So3.exp(&DVector::from_row_slice(&v), 1.0).unwrap()
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-3.0f64..3.0)
}

fn circle_on_plane() -> Arc<SmoothAction> {
    Arc::new(SmoothAction::torus_rotation(1, Manifold::euclidean(2), vec![(0, 0, 1)]).unwrap())
}

fn exprs(src: &[&str]) -> Vec<gflow_core::Expr> {
    src.iter().map(|s| parse(s).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn so3_group_laws(a in vec3(), b in vec3(), c in vec3()) {
        let g = CompactGroup::So3;
        let (x, y, z) = (so3_element(a), so3_element(b), so3_element(c));
        let left = g.mul(&g.mul(&x, &y), &z);
        let right = g.mul(&x, &g.mul(&y, &z));
        prop_assert!(g.distance(&left, &right) < 1e-12);
        prop_assert!(g.distance(&g.mul(&x, &g.inv(&x)), &g.identity()) < 1e-12);
        prop_assert!((g.distance(&x, &y) - g.distance(&y, &x)).abs() < 1e-12);
        prop_assert!(g.element_residual(&x) < 1e-12);
    }

    #[test]
    fn adjoint_is_a_homomorphism(a in vec3(), b in vec3(), xi in vec3()) {
        let g = CompactGroup::So3;
        let (x, y) = (so3_element(a), so3_element(b));
        let xi = DVector::from_row_slice(&xi);
        let composed = g.ad(&g.mul(&x, &y), &xi).unwrap();
        let nested = g.ad(&x, &g.ad(&y, &xi).unwrap()).unwrap();
        prop_assert!((composed - nested).amax() < 1e-12);
    }

    #[test]
    fn right_action_law_on_the_torus(m in prop::array::uniform4(-2.0f64..2.0), s in 0.0f64..6.3, t in 0.0f64..6.3) {
        let act = SmoothAction::torus_rotation(2, Manifold::euclidean(4), vec![(0, 0, 1), (1, 2, 3)]).unwrap();
        let g = CompactGroup::Torus(2);
        let (x, y) = (GroupElement::Torus(vec![s, t]), GroupElement::Torus(vec![t, s]));
        let m = DVector::from_row_slice(&m);
        let twice = act.act(&act.act(&m, &x).unwrap(), &y).unwrap();
        let once = act.act(&m, &g.mul(&x, &y)).unwrap();
        prop_assert!((twice - once).amax() < 1e-12);
    }

    #[test]
    fn averaged_fields_are_invariant(m in prop::array::uniform2(-2.0f64..2.0), angle in 0.0f64..6.3) {
        let f = ActionField::from_exprs("drift", circle_on_plane(), exprs(&["1 + x2", "x1^2"]), None).unwrap();
        let av = average(&f, &HaarConfig::default()).unwrap().field;
        let act = &f.action;
        let m = DVector::from_row_slice(&m);
        let g = GroupElement::Torus(vec![angle]);
        let mg = act.act(&m, &g).unwrap();
        let moved = act.tangent_action(&m, &av.x(&m).unwrap(), &g).unwrap();
        prop_assert!((av.x(&mg).unwrap() - moved).amax() < 1e-10);
    }

    #[test]
    fn averaging_is_linear(m in prop::array::uniform2(-2.0f64..2.0), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = ActionField::from_exprs("f", circle_on_plane(), exprs(&["1 + x2", "x1^2"]), None).unwrap();
        let g = ActionField::from_exprs("g", circle_on_plane(), exprs(&["x1*x2", "sin(x1)"]), None).unwrap();
        let haar = HaarConfig::default();
        let combo = average(&ActionField::linear_combination(a, &f, b, &g).unwrap(), &haar).unwrap().field;
        let (fa, ga) = (average(&f, &haar).unwrap().field, average(&g, &haar).unwrap().field);
        let m = DVector::from_row_slice(&m);
        let expected = fa.x(&m).unwrap() * a + ga.x(&m).unwrap() * b;
        prop_assert!((combo.x(&m).unwrap() - expected).amax() < 1e-10);
    }

    #[test]
    fn pullback_by_linear_maps_is_exact(entries in prop::array::uniform4(-2.0f64..2.0), u in prop::array::uniform2(-1.0f64..1.0)) {
        let a = DMatrix::from_row_slice(2, 2, &entries);
        prop_assume!(a.determinant().abs() > 0.1);
        let x = SmoothMap::from_exprs(2, exprs(&["1 + x1*x2", "x2^2 - x1"])).unwrap();
        let pulled = pullback(&SmoothMap::linear(a.clone()), &x);
        let u = DVector::from_row_slice(&u);
        let expected = a.clone().try_inverse().unwrap() * x.eval(&(&a * &u)).unwrap();
        prop_assert!((pulled.eval(&u).unwrap() - expected).amax() < 1e-10);
    }

    #[test]
    fn flows_of_invariant_fields_commute_with_rotations(m in prop::array::uniform2(-1.5f64..1.5), angle in 0.0f64..6.3) {
        let f = ActionField::from_exprs("swirl", circle_on_plane(), exprs(&["x1 - x2*(x1^2 + x2^2)", "x2 + x1*(x1^2 + x2^2)"]), None).unwrap();
        let field = VectorField::from_action_field(&f);
        let integ = Integrator::default().with_step(1e-2);
        let times = integ.times(0.3).unwrap();
        let act = &f.action;
        let g = GroupElement::Torus(vec![angle]);
        let m = DVector::from_row_slice(&m);
        let plain = integrate_curve(&field, &m, &times, &integ).unwrap();
        let moved = integrate_curve(&field, &act.act(&m, &g).unwrap(), &times, &integ).unwrap();
        prop_assert!(plain.status.is_complete() && moved.status.is_complete());
        let expect = act.act(&plain.last(), &g).unwrap();
        prop_assert!((moved.last() - expect).amax() < 1e-9);
    }

    #[test]
    fn sphere_retraction_and_projection(p in vec3(), v in vec3()) {
        let s = Manifold::sphere(3, 1.5);
        let cfg = Config::default();
        let q = DVector::from_row_slice(&p);
        prop_assume!(q.norm() > 0.1);
        let on = s.project_point(&q, &cfg).unwrap();
        prop_assert!(s.is_on_manifold(&on, &cfg));
        let proj = s.tangent_projector(&on, &cfg).unwrap();
        prop_assert!((&proj * &proj - &proj).amax() < 1e-12);
        let w = &proj * DVector::from_row_slice(&v) * 0.1;
        let next = s.retract(&on, &w, &cfg).unwrap();
        prop_assert!(s.is_on_manifold(&next, &cfg));
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>()) {
        let s = Manifold::sphere(3, 1.0);
        let cfg = Config::default();
        let a = s.sample(&mut seeded_rng(seed), 4, 1.0, &cfg).unwrap();
        let b = s.sample(&mut seeded_rng(seed), 4, 1.0, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cayley_validation_accepts_groups_and_rejects_perturbations(n in 3usize..8, a in 1usize..8, b in 1usize..8, c in 1usize..8) {
        let names: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
        let table: Vec<Vec<usize>> = (0..n).map(|i| (0..n).map(|j| (i + j) % n).collect()).collect();
        prop_assert!(FiniteGroup::from_table("Z", names.clone(), table.clone()).is_ok());
        let (a, b, c) = (a % n, b % n, c % n);
        prop_assume!(a != 0 && b != 0 && c != 0 && b != c);
        let mut broken = table;
        broken[a].swap(b, c);
        prop_assert!(FiniteGroup::from_table("Z", names, broken).is_err());
    }
}
