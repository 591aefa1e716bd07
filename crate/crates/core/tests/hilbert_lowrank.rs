use std::sync::Arc;

use liftrec::hilbert::{assemble_inner_product, BivariateField, Grid1D, Grid2D, GridRef, Kind};
use liftrec::lowrank::{self, RankOneModel, SubdiffForm};
use liftrec::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn mat(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn vecn(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(DVector::from_vec)
}

fn unit(n: usize) -> impl Strategy<Value = DVector<f64>> {
    vecn(n).prop_filter("nonzero", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

#[test]
fn grid_1d_examples() {
    let g = Grid1D::new(3, 0.0, 1.0).unwrap();
    assert_eq!(g.nodes.as_slice(), &[0.0, 0.5, 1.0]);
    assert_eq!(g.h, 0.5);
    assert_eq!(g.quad_weights.as_slice(), &[0.25, 0.5, 0.25]);
    let g = Grid1D::new(101, 0.0, 1.0).unwrap();
    assert!((g.quad_weights.sum() - 1.0).abs() < 1e-14);
    assert!(matches!(Grid1D::new(2, 0.0, 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(Grid1D::new(5, 1.0, 1.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn grid_2d_partition_and_weights() {
    let g = Grid2D::unit_square(9).unwrap();
    let mut all: Vec<usize> = g.interior_index.iter().chain(&g.boundary_index).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..g.len()).collect::<Vec<_>>());
    assert!((g.boundary_weights.sum() - 4.0).abs() < 1e-12);
    assert!((g.interior_weights.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn inner_product_examples() {
    let g = Grid1D::new(3, 0.0, 1.0).unwrap();
    let l2 = assemble_inner_product(GridRef::One(&g), Kind::L2).unwrap();
    assert!((&l2.gram - DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.5, 0.25]))).amax() < 1e-15);

    let g = Grid1D::new(41, 0.0, 1.0).unwrap();
    let h2 = assemble_inner_product(GridRef::One(&g), Kind::H2).unwrap();
    let c = DVector::from_element(41, -3.0);
    assert!((h2.norm(&c) - 3.0).abs() < 1e-10);

    // ∫sin² = ½, ∫(π cos)² = π²/2, ∫(π² sin)² = π⁴/2
    let g = Grid1D::new(401, 0.0, 1.0).unwrap();
    let h2 = assemble_inner_product(GridRef::One(&g), Kind::H2).unwrap();
    let s = g.nodes.map(|x| (std::f64::consts::PI * x).sin());
    let pi2 = std::f64::consts::PI.powi(2);
    let exact = ((1.0 + pi2 + pi2 * pi2) / 2.0).sqrt();
    assert!((h2.norm(&s) - exact).abs() / exact < 0.01, "{} vs {exact}", h2.norm(&s));
}

#[test]
fn gram_structure() {
    let g = Grid1D::new(21, 0.0, 2.0).unwrap();
    for kind in [Kind::L2, Kind::H1, Kind::H2] {
        let ip = assemble_inner_product(GridRef::One(&g), kind).unwrap();
        let gram = &ip.gram;
        assert!((gram - gram.transpose()).norm() <= 1e-12 * gram.norm());
        assert!(gram.clone().symmetric_eigenvalues().min() > 0.0);
        let rec = ip.whitener.transpose() * &ip.whitener;
        assert!((rec - gram).norm() <= 1e-10 * gram.norm());
        let id = ip.kernel.transpose() * gram;
        assert!((id - DMatrix::identity(21, 21)).norm() < 1e-8);
    }
}

#[test]
fn field_examples() {
    let g = Grid1D::new(11, 0.0, 1.0).unwrap();
    let l2 = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::L2).unwrap());
    let one = BivariateField::new(l2.clone(), l2.clone(), DMatrix::from_element(11, 11, 1.0)).unwrap();
    assert_eq!(one.diag_restrict().unwrap(), DVector::from_element(11, 1.0));
    let sum = DMatrix::from_fn(11, 11, |j, k| g.nodes[j] + g.nodes[k]);
    let f = BivariateField::new(l2.clone(), l2.clone(), sum).unwrap();
    assert!((f.diag_restrict().unwrap() - g.nodes.map(|x| 2.0 * x)).norm() < 1e-14);
    let y = DMatrix::from_fn(11, 11, |_, k| g.nodes[k]);
    let f = BivariateField::new(l2.clone(), l2.clone(), y).unwrap();
    let int = f.integrate_second_variable().unwrap();
    assert!(int.iter().all(|v| (v - 0.5).abs() <= g.h * g.h));
    let wide = assemble_inner_product(GridRef::One(&Grid1D::new(5, 0.0, 1.0).unwrap()), Kind::L2).unwrap();
    let rect = BivariateField::new(l2.clone(), Arc::new(wide), DMatrix::zeros(11, 5)).unwrap();
    assert!(rect.diag_restrict().is_err());
    assert!(BivariateField::new(l2.clone(), l2, DMatrix::zeros(3, 3)).is_err());
}

#[test]
fn norm_examples() {
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
    assert!((lowrank::nuclear_norm(&d).unwrap() - 4.0).abs() < 1e-14);
    assert!((lowrank::operator_norm(&d).unwrap() - 3.0).abs() < 1e-14);
    let p = lowrank::svt_prox(&d, 1.5).unwrap();
    assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, 0.0]))).norm() < 1e-14);
    assert_eq!(lowrank::svt_prox(&d, 3.0).unwrap().norm(), 0.0);
    let m = lowrank::leading_rank_one(&d).unwrap();
    assert!((m.sigma - 3.0).abs() < 1e-14);
    assert!((m.u[0] - 1.0).abs() < 1e-14 && (m.v[0] - 1.0).abs() < 1e-14);
    assert!(matches!(lowrank::leading_rank_one(&DMatrix::zeros(2, 2)), Err(Error::DegenerateInput(_))));
}

#[test]
fn subdiff_constructed_cases() {
    let e = |n: usize, i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let model = RankOneModel::new(2.0, e(3, 0), e(3, 0)).unwrap();
    let h = model.direction();
    for form in SubdiffForm::ALL {
        assert!(lowrank::subdiff_check(&h, &model, form, true).unwrap().holds, "{form:?}");
    }
    let bad = &h + e(3, 1) * e(3, 1).transpose() * 1.5;
    for form in SubdiffForm::ALL {
        assert!(!lowrank::subdiff_check(&bad, &model, form, false).unwrap().holds, "{form:?}");
    }
    let f = model.matrix();
    assert_eq!(lowrank::bregman_divergence(&f, &f, &h).unwrap(), 0.0);
    assert!(lowrank::bregman_divergence(&(&f * 2.0), &f, &h).unwrap().abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn whitening_is_isometric(a in vecn(15), b in vecn(15), kind in prop::sample::select(vec![Kind::L2, Kind::H1, Kind::H2])) {
        let g = Grid1D::new(15, 0.0, 1.0).unwrap();
        let ip = assemble_inner_product(GridRef::One(&g), kind).unwrap();
        let lhs = a.dot(&(&ip.gram * &b));
        let rhs = ip.whiten_vec(&a).dot(&ip.whiten_vec(&b));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()) * ip.gram.norm());
    }

    #[test]
    fn whiten_round_trip(v in mat(9, 9)) {
        let g = Grid1D::new(9, 0.0, 1.0).unwrap();
        let h2 = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::H2).unwrap());
        let l2 = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::L2).unwrap());
        let f = BivariateField::new(h2.clone(), l2.clone(), v.clone()).unwrap();
        let back = BivariateField::unwhiten(&f.whiten(), h2, l2).unwrap();
        prop_assert!((back.values - &v).norm() <= 1e-10 * (1.0 + v.norm()));
    }

    #[test]
    fn restriction_and_integration_are_linear(f in mat(7, 7), g in mat(7, 7), al in -3.0..3.0f64, be in -3.0..3.0f64) {
        let grid = Grid1D::new(7, 0.0, 1.0).unwrap();
        let l2 = Arc::new(assemble_inner_product(GridRef::One(&grid), Kind::L2).unwrap());
        let mk = |m: DMatrix<f64>| BivariateField::new(l2.clone(), l2.clone(), m).unwrap();
        let comb = mk(&f * al + &g * be);
        let (ff, gg) = (mk(f), mk(g));
        let d = comb.diag_restrict().unwrap() - (ff.diag_restrict().unwrap() * al + gg.diag_restrict().unwrap() * be);
        prop_assert!(d.norm() < 1e-12);
        let i = comb.integrate_second_variable().unwrap()
            - (ff.integrate_second_variable().unwrap() * al + gg.integrate_second_variable().unwrap() * be);
        prop_assert!(i.norm() < 1e-12);
    }

    #[test]
    fn restriction_of_tensor_is_product(u in vecn(8), v in vecn(8)) {
        let grid = Grid1D::new(8, 0.0, 1.0).unwrap();
        let l2 = Arc::new(assemble_inner_product(GridRef::One(&grid), Kind::L2).unwrap());
        let f = BivariateField::rank_one(l2.clone(), l2, &u, &v).unwrap();
        prop_assert!((f.diag_restrict().unwrap() - u.component_mul(&v)).norm() < 1e-14);
        prop_assert!((f.integrate_second_variable().unwrap() - &u * grid.integrate(&v)).norm() < 1e-12);
    }

    #[test]
    fn norm_ordering(m in mat(4, 4)) {
        let nuc = lowrank::nuclear_norm(&m).unwrap();
        let op = lowrank::operator_norm(&m).unwrap();
        prop_assert!(nuc + 1e-12 >= m.norm() && m.norm() + 1e-12 >= op);
    }

    #[test]
    fn dual_formula(g in mat(4, 3), hs in prop::collection::vec(mat(4, 3), 20)) {
        let nuc = lowrank::nuclear_norm(&g).unwrap();
        for h in &hs {
            let h = h / lowrank::operator_norm(h).unwrap().max(1e-12);
            prop_assert!(g.dot(&h) <= nuc + 1e-10);
        }
        let s = lowrank::svd(&g).unwrap();
        let k = s.s.iter().filter(|x| **x > 1e-10 * s.s[0]).count();
        let uvt = s.u.columns(0, k) * s.v_t.rows(0, k);
        prop_assert!((g.dot(&uvt) - nuc).abs() < 1e-8 * (1.0 + nuc));
    }

    #[test]
    fn svt_is_nonexpansive(a in mat(4, 3), b in mat(4, 3), tau in 0.05..3.0f64) {
        let pa = lowrank::svt_prox(&a, tau).unwrap();
        let pb = lowrank::svt_prox(&b, tau).unwrap();
        prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
    }

    #[test]
    fn tangent_projections(m in mat(5, 4), u in unit(5), v in unit(4), s in 0.1..5.0f64) {
        let model = RankOneModel::new(s, u, v).unwrap();
        let pt = lowrank::project_tangent(&m, &model).unwrap();
        let pc = lowrank::project_tangent_complement(&m, &model).unwrap();
        prop_assert!((lowrank::project_tangent(&pt, &model).unwrap() - &pt).norm() < 1e-10);
        prop_assert!(pt.dot(&pc).abs() < 1e-10);
        prop_assert!((&pt + &pc - &m).norm() < 1e-12);
        prop_assert!((lowrank::project_tangent(&model.direction(), &model).unwrap() - model.direction()).norm() < 1e-12);
        prop_assert!(lowrank::operator_norm(&pc).unwrap() <= lowrank::operator_norm(&m).unwrap() + 1e-12);
    }

    #[test]
    fn subdiff_forms_agree(u in unit(4), v in unit(3), w in mat(4, 3), scale in 0.0..2.0f64) {
        let model = RankOneModel::new(1.0, u, v).unwrap();
        let wp = lowrank::project_tangent_complement(&w, &model).unwrap();
        let n = lowrank::operator_norm(&wp).unwrap();
        prop_assume!(n > 1e-6);
        prop_assume!((scale - 1.0).abs() > 1e-4);
        let h = model.direction() + wp * (scale / n);
        let verdicts: Vec<bool> = SubdiffForm::ALL
            .iter()
            .map(|f| lowrank::subdiff_check(&h, &model, *f, false).unwrap().holds)
            .collect();
        prop_assert!(verdicts.iter().all(|x| *x == (scale <= 1.0)), "{verdicts:?} at {scale}");
    }

    #[test]
    fn subdiff_boundary_cases(u in unit(4), v in unit(3), w in mat(4, 3), sign in prop::bool::ANY) {
        let model = RankOneModel::new(1.0, u, v).unwrap();
        let wp = lowrank::project_tangent_complement(&w, &model).unwrap();
        let n = lowrank::operator_norm(&wp).unwrap();
        prop_assume!(n > 1e-6);
        let t = if sign { 1.0 + 1e-9 } else { 1.0 - 1e-9 };
        let h = model.direction() + wp * (t / n);
        let verdicts: Vec<bool> = SubdiffForm::ALL
            .iter()
            .map(|f| lowrank::subdiff_check(&h, &model, *f, false).unwrap().holds)
            .collect();
        prop_assert!(verdicts.iter().all(|x| *x == verdicts[0]), "{verdicts:?}");
    }

    #[test]
    fn bregman_nonnegative(f in mat(4, 3), u in unit(4), v in unit(3), w in mat(4, 3)) {
        let model = RankOneModel::new(1.5, u, v).unwrap();
        let wp = lowrank::project_tangent_complement(&w, &model).unwrap();
        let n = lowrank::operator_norm(&wp).unwrap().max(1e-12);
        let h = model.direction() + wp * (0.9 / n);
        prop_assert!(lowrank::bregman_divergence(&f, &model.matrix(), &h).unwrap() >= -1e-10);
    }

    #[test]
    fn leading_rank_one_is_stable(u in unit(4), v in unit(3), s in 0.5..3.0f64, e in mat(4, 3)) {
        let m = RankOneModel::new(s, u, v).unwrap().matrix();
        let a = lowrank::leading_rank_one(&m).unwrap();
        let b = lowrank::leading_rank_one(&(&m + e * 1e-8)).unwrap();
        prop_assert!((a.sigma - b.sigma).abs() < 1e-6);
        prop_assert!((&a.u - &b.u).norm() < 1e-6 && (&a.v - &b.v).norm() < 1e-6);
        prop_assert!((a.u.norm() - 1.0).abs() < 1e-12 && (a.v.norm() - 1.0).abs() < 1e-12);
    }
}
