use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sxh::extract::{extract, grid_for, ExtractOptions, Extraction, FixtureSpec};
use sxh::io::{self, Dataset};
use sxh::lorentz::{eta, gram_defect, lorentz_orthonormalize, minkowski_dot, ProductSplit};
use sxh::pipeline::{full_check, roundtrip_alignment};
use sxh::reconstruct::{align_congruence, align_frames, reconstruct, transport_edge, ReconstructOptions, SeedFrame};
use sxh::structure::Tolerances;

fn fixture(spec: &FixtureSpec, nodes: &[usize]) -> Extraction {
    let imm = spec.build().unwrap();
    let grid = grid_for(imm.as_ref(), nodes).unwrap();
    extract(imm.as_ref(), &grid, &ExtractOptions { twist: spec.twist(), ..Default::default() }).unwrap()
}

fn near_identity(dim: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec(-0.3f64..0.3, dim * dim).prop_map(move |p| {
        (0..dim).map(|j| DVector::from_fn(dim, |i, _| if i == j { 1.0 } else { 0.0 } + p[j * dim + i])).collect()
    })
}

fn lorentz_generator(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim * dim).prop_map(move |p| {
        let a = DMatrix::from_vec(dim, dim, p);
        eta(dim) * (&a - a.transpose())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orthonormalized_frames_are_lorentz(vecs in (3usize..7).prop_flat_map(near_identity)) {
        let frame = lorentz_orthonormalize(&vecs).unwrap();
        prop_assert!(frame.gram_defect() <= 1e-12);
        let first = frame.matrix().column(0).into_owned();
        let cos = first.normalize().dot(&vecs[0].normalize());
        prop_assert!((cos.abs() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn product_structure_is_an_isometric_involution(k in 1usize..4, m in 1usize..4) {
        let split = ProductSplit::new(k, m).unwrap();
        let p = split.psi_matrix();
        let e = eta(split.dim());
        prop_assert_eq!(&p * &p, DMatrix::identity(split.dim(), split.dim()));
        prop_assert_eq!(p.transpose() * &e * &p, e);
    }

    #[test]
    fn tangent_projection_kills_position_components(
        k in 1usize..3,
        m in 1usize..3,
        raw in prop::collection::vec(-2.0f64..2.0, 16),
    ) {
        let split = ProductSplit::new(k, m).unwrap();
        let d = split.dim();
        let s = DVector::from_fn(k + 1, |i, _| raw[i] + 0.5);
        let s = &s / s.norm();
        let y = DVector::from_fn(m, |i, _| raw[k + 1 + i]);
        let mut x = DVector::zeros(d);
        x.rows_mut(0, k + 1).copy_from(&s);
        x.rows_mut(k + 1, m).copy_from(&y);
        x[d - 1] = (1.0 + y.norm_squared()).sqrt();
        prop_assert!(split.product_defect(&x) <= 1e-12);
        let v = DVector::from_fn(d, |i, _| raw[(i + 7) % 16]);
        let t = split.project_tangent(&x, &v);
        let (xi1, xi2) = split.split_position(&x);
        let scale = x.norm() * v.norm();
        prop_assert!(minkowski_dot(&t, &xi1).unwrap().abs() <= 1e-12 * scale.max(1.0));
        prop_assert!(minkowski_dot(&t, &xi2).unwrap().abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn transport_preserves_minkowski_gram(w in (3usize..6).prop_flat_map(lorentz_generator), dt in -0.02f64..0.02) {
        let dim = w.nrows();
        let s = transport_edge(&w, &w, dt, &DMatrix::identity(dim, dim));
        prop_assert!(gram_defect(&s) <= 1e-10);
        let back = transport_edge(&w, &w, -dt, &s);
        prop_assert!((back - DMatrix::identity(dim, dim)).amax() <= 1e-10);
    }

    #[test]
    fn seed_isometries_preserve_product_structure(rot in -3.0f64..3.0, boost in -1.5f64..1.5, k in 1usize..3, m in 1usize..3) {
        let split = ProductSplit::new(k, m).unwrap();
        let q = SeedFrame { rotation: rot, boost }.isometry(split);
        let e = eta(split.dim());
        let scale = boost.cosh().powi(2);
        prop_assert!((q.transpose() * &e * &q - &e).amax() <= 1e-12 * scale);
        let p = split.psi_matrix();
        prop_assert!((&q * &p - &p * &q).amax() == 0.0);
    }

    #[test]
    fn seed_parse_accepts_what_it_prints(rot in -3.0f64..3.0, boost in -1.0f64..1.0) {
        let seed = SeedFrame::parse(&format!("rot={rot},boost={boost}")).unwrap();
        prop_assert_eq!(seed, SeedFrame { rotation: rot, boost });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn datasets_roundtrip_bit_identically(theta0 in 0.2f64..2.9, warp in -0.5f64..0.5, twist in -1.0f64..1.0) {
        let spec = FixtureSpec::new("F2").with("theta0", theta0).with("warp", warp).with("twist", twist);
        let e = fixture(&spec, &[17]);
        let tol = Tolerances::default().with_override("gauss", 0.5);
        let ds = Dataset::from_data(&e.data, &tol, Some("F2".into()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        io::save_json(&path, &ds).unwrap();
        let back = io::load_dataset(&path).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_data().unwrap(), e.data);
    }

    #[test]
    fn helices_satisfy_every_check(a in 0.1f64..0.95) {
        let spec = FixtureSpec::new("F1").with("a", a).with("b", (1.0 - a * a).sqrt());
        let e = fixture(&spec, &[41]);
        let r = full_check(&e.data, &Tolerances::default()).unwrap();
        prop_assert!(r.passed(), "{:?}", r.failures());
        let f = e.data.psi.f_at(0)[(0, 0)];
        prop_assert!((f - (2.0 * a * a - 1.0)).abs() <= 1e-10);
    }

    #[test]
    fn normal_regauging_changes_reconstruction_by_an_isometry(angle in -3.0f64..3.0, theta0 in 0.7f64..2.4) {
        let e = fixture(&FixtureSpec::new("F2").with("theta0", theta0), &[41]);
        let (c, s) = (angle.cos(), angle.sin());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let turned = e.data.regauge(&q).unwrap();
        let tol = Tolerances::default();
        prop_assert!(full_check(&turned, &tol).unwrap().passed());
        let a = reconstruct(&e.data, &ReconstructOptions::default(), &tol).unwrap();
        let b = reconstruct(&turned, &ReconstructOptions::default(), &tol).unwrap();
        prop_assert!(b.report.passed(), "{:?}", b.report.failures());
        let mut undo = DMatrix::identity(5, 5);
        undo.view_mut((1, 1), (2, 2)).copy_from(&q.transpose());
        let points = |r: &sxh::reconstruct::Reconstruction| -> Vec<DVector<f64>> {
            (0..r.immersion.points.len()).map(|i| r.immersion.point(i)).collect()
        };
        let cg = align_frames(&a.base_map, &points(&a), &(&b.base_map * undo), &points(&b), e.split).unwrap();
        prop_assert!(cg.residual <= 1e-8, "residual {}", cg.residual);
        prop_assert!(cg.lorentz_defect <= 1e-8 && cg.commutation_defect <= 1e-8);
    }

    #[test]
    fn any_base_node_reproduces_the_helix(base in 0usize..200) {
        let e = fixture(&FixtureSpec::new("F1"), &[200]);
        let opts = ReconstructOptions { base: Some(base), ..Default::default() };
        let (block, c) = roundtrip_alignment(&e, &e.data, &opts, &Tolerances::default()).unwrap();
        prop_assert!(c.residual <= 1e-4, "residual {}", c.residual);
        prop_assert!(block.passed());
    }

    #[test]
    fn seeded_reconstructions_align_to_the_seed(rot in -3.0f64..3.0, boost in -1.0f64..1.0) {
        let e = fixture(&FixtureSpec::new("F1"), &[200]);
        let tol = Tolerances::default();
        let seed = SeedFrame { rotation: rot, boost };
        let a = reconstruct(&e.data, &ReconstructOptions::default(), &tol).unwrap();
        let b = reconstruct(&e.data, &ReconstructOptions { seed, ..Default::default() }, &tol).unwrap();
        let c = align_congruence(&a, &b).unwrap();
        let err = (c.to_matrix() - seed.isometry(e.split)).amax();
        prop_assert!(err <= 1e-8 * boost.cosh().powi(2), "|T - Q| = {err}");
    }
}
