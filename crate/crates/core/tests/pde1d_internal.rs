use liftrec::acceptance::{loglog_slope, step_problem, DELTAS};
use liftrec::certify::{self, TangentKind};
use liftrec::hilbert::{BivariateField, Grid1D};
use liftrec::internal::{self, InternalProblem, InternalSpaces, RecoveryMode};
use liftrec::lowrank::{self, DEFAULT_MARGIN};
use liftrec::pde1d::{self, Potential1D, StateField1D};
use liftrec::solvers::SolverOptions;
use liftrec::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spaces(n: usize) -> InternalSpaces {
    InternalSpaces::new(&Grid1D::new(n, 0.0, 1.0).unwrap()).unwrap()
}

fn cosh_exact(g: &Grid1D) -> DVector<f64> {
    g.nodes.map(|x| (x - 0.5).cosh() / 0.5f64.cosh())
}

#[test]
fn schrodinger_examples() {
    let g = Grid1D::new(41, 0.0, 1.0).unwrap();
    let u = pde1d::solve_schrodinger_1d(&g, &Potential1D::constant(&g, 0.0).unwrap(), 0.0, 1.0).unwrap();
    assert!((&u.values - &g.nodes).amax() < 1e-13);
    let u = pde1d::solve_schrodinger_1d(&g, &Potential1D::constant(&g, 1.0).unwrap(), 1.0, 1.0).unwrap();
    assert!((&u.values - cosh_exact(&g)).amax() <= 2.0 * g.h * g.h);
    let q = Potential1D::step(&g, 1.0, 0.5, 0.4, 0.6).unwrap();
    let u = pde1d::solve_schrodinger_1d(&g, &q, 1.0, 1.0).unwrap();
    assert!(u.values.min() > 0.0);
    assert_eq!((u.f_a, u.f_b), (1.0, 1.0));
}

#[test]
fn schrodinger_is_second_order() {
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [41, 81, 161] {
        let g = Grid1D::new(n, 0.0, 1.0).unwrap();
        let u = pde1d::solve_schrodinger_1d(&g, &Potential1D::constant(&g, 1.0).unwrap(), 1.0, 1.0).unwrap();
        hs.push(g.h);
        errs.push((&u.values - cosh_exact(&g)).amax());
    }
    let order = loglog_slope(&hs, &errs);
    assert!((1.8..=2.2).contains(&order), "order {order}");
}

#[test]
fn poisson_and_extension_examples() {
    let g = Grid1D::new(11, 0.0, 1.0).unwrap();
    let v = pde1d::solve_poisson_dirichlet_1d(&g, &DVector::zeros(11), 2.0, 3.0).unwrap();
    assert!((&v.values - g.nodes.map(|x| 2.0 + x)).amax() < 1e-13);
    let v = pde1d::solve_poisson_dirichlet_1d(&g, &DVector::from_element(11, 2.0), 0.0, 0.0).unwrap();
    assert!((&v.values - g.nodes.map(|x| x * x - x)).amax() < 1e-13);
    let f = pde1d::harmonic_extension_1d(&g, 1.0, 1.0);
    assert!((&f.values - DVector::from_element(11, 1.0)).amax() < 1e-15);
    let f = pde1d::harmonic_extension_1d(&g, 0.0, 2.0);
    assert!((&f.values - g.nodes.map(|x| 2.0 * x)).amax() < 1e-14);
    let d2 = liftrec::hilbert::second_derivative_matrix(&g);
    let lap = &d2 * &f.values;
    assert!(lap.rows(1, 9).amax() < 1e-12);
}

#[test]
fn division_oracle_examples() {
    let g = Grid1D::new(81, 0.0, 1.0).unwrap();
    let q = Potential1D::step(&g, 1.0, 0.5, 0.4, 0.6).unwrap();
    let u = pde1d::solve_schrodinger_1d(&g, &q, 1.0, 1.0).unwrap();
    let back = pde1d::direct_division_oracle(&g, &u).unwrap();
    assert!((back.values.rows(1, 79) - q.values.rows(1, 79)).amax() < 1e-9);
    let c = StateField1D::new(cosh_exact(&g)).unwrap();
    let one = pde1d::direct_division_oracle(&g, &c).unwrap();
    assert!(one.values.rows(1, 79).iter().all(|v| (v - 1.0).abs() < g.h * g.h));
    let cross = StateField1D::new(g.nodes.map(|x| x - 0.5)).unwrap();
    assert!(matches!(pde1d::direct_division_oracle(&g, &cross), Err(Error::DegenerateInput(_))));
}

#[test]
fn noise_injection() {
    let sp = spaces(41);
    let p = step_problem(&sp, 0.5).unwrap();
    let same = pde1d::inject_h2_noise(&p.u_true, 0.0, 3, &sp.h2).unwrap();
    assert_eq!(same, p.u_true);
    for seed in 1..5 {
        let u = pde1d::inject_h2_noise(&p.u_true, 1e-3, seed, &sp.h2).unwrap();
        let e = &u.values - &p.u_true.values;
        assert!((sp.h2.norm(&e) - 1e-3).abs() < 1e-9, "{}", sp.h2.norm(&e));
        let m = p.noisy(1e-3, seed).unwrap();
        assert!(m.data_error <= 1e-3 * (1.0 + p.int_q * p.int_q).sqrt() * (1.0 + 1e-9));
    }
    let a = p.noisy(1e-2, 9).unwrap();
    let b = p.noisy(1e-2, 9).unwrap();
    assert_eq!(a.z, b.z);
}

#[test]
fn problem_examples() {
    let g = Grid1D::new(41, 0.0, 1.0).unwrap();
    let (p, m) = internal::build_internal_problem(&g, &Potential1D::constant(&g, 1.0).unwrap(), 1.0, 1.0, None).unwrap();
    // the reference potential uses one-sided stencils at the ends, so ∫q is 1 up to O(h²)
    assert!((&m.z2 - &p.u_true.values * p.int_q).amax() < 1e-12);
    assert!((p.int_q - 1.0).abs() < g.h * g.h);
    let op = internal::assemble_internal_operator(&p).unwrap();
    assert!((op.apply(&[p.truth().whiten()]).unwrap() - &m.z).norm() < 1e-10 * (1.0 + m.z.norm()));
    assert!(m.data_error == 0.0);
    // −π² is a Dirichlet eigenvalue of the discrete Laplacian only approximately; hit it exactly
    let lam = 2.0 * (1.0 - (std::f64::consts::PI * g.h).cos()) / (g.h * g.h);
    let hit = Potential1D::constant(&g, -lam).unwrap();
    assert!(matches!(
        internal::build_internal_problem(&g, &hit, 1.0, 1.0, None),
        Err(Error::EigenvalueHit(_)) | Err(Error::InvalidArgument(_)) | Err(Error::NumericFailure(_))
    ));
}

#[test]
fn trace_extraction_examples() {
    let sp = spaces(21);
    let p = step_problem(&sp, 0.5).unwrap();
    let q = internal::extract_q_from_trace(&p.truth().values, p.f_a, p.f_b, &p.grid).unwrap();
    assert!((&q.values - &p.q_ref.values).amax() < 1e-12);
    let z = internal::extract_q_from_trace(&DMatrix::zeros(21, 21), 1.0, 1.0, &p.grid).unwrap();
    assert_eq!(z.values.amax(), 0.0);
    assert!(internal::extract_q_from_trace(&DMatrix::zeros(21, 21), 0.0, 0.0, &p.grid).is_err());
}

#[test]
fn exact_recovery_examples() {
    let sp = spaces(41);
    let opts = SolverOptions::default();
    let p = step_problem(&sp, 0.5).unwrap();
    let rec = internal::recover_internal(&p, &p.noiseless().unwrap(), RecoveryMode::Exact, &opts).unwrap();
    assert!(rec.relative_error(&p) <= 1e-3);
    assert!(rec.rank_ratio <= 1e-4);
    let truth = p.truth().whiten();
    assert!((&rec.f_hat_whitened - &truth).norm() <= 1e-4 * truth.norm());

    let c = InternalProblem::new(&sp, &Potential1D::constant(&sp.grid, 2.0).unwrap(), 1.0, 1.0).unwrap();
    assert!(internal::sufficient_condition(&c).lhs_normalized < 10.0 * sp.grid.h * sp.grid.h);
    let rec = internal::recover_internal(&c, &c.noiseless().unwrap(), RecoveryMode::Exact, &opts).unwrap();
    assert!(rec.relative_error(&c) <= 1e-6);
    assert!(internal::recover_internal(&c, &c.noisy(1e-3, 1).unwrap(), RecoveryMode::Exact, &opts).is_err());
}

#[test]
fn noisy_rate_is_linear() {
    let sp = spaces(41);
    let p = step_problem(&sp, 0.5).unwrap();
    let opts = SolverOptions::default();
    let errs: Vec<f64> = DELTAS
        .iter()
        .map(|&d| {
            let m = p.noisy(d, 2).unwrap();
            internal::recover_internal(&p, &m, RecoveryMode::Noisy { c: 1.0 }, &opts).unwrap().relative_error(&p)
        })
        .collect();
    let slope = loglog_slope(&DELTAS, &errs);
    assert!((0.8..=1.2).contains(&slope), "slope {slope}");
}

#[test]
fn closed_form_family() {
    let sp = spaces(41);
    let p = step_problem(&sp, 0.5).unwrap();
    let model = p.model();
    for alpha in [0.0, 0.5, 1.0] {
        let h = internal::closed_form_precertificate(&p, alpha).unwrap();
        let r = (lowrank::project_tangent(&h, &model).unwrap() - model.direction()).norm();
        assert!(r <= 1e-8, "alpha {alpha}: {r}");
    }
    let a = internal::optimal_alpha(&p);
    let (w, b) = internal::certificate_norm(&p, a).unwrap();
    assert!(w <= b + 1e-9 && b < 1.0, "{w} {b}");
    let far: Vec<f64> = [100.0, 200.0, 300.0].iter().map(|t| internal::certificate_norm(&p, a + t).unwrap().1).collect();
    assert!(((far[2] - far[1]) - (far[1] - far[0])).abs() <= 1e-9 * far[2]);
    assert!(far[1] - far[0] > 0.0);

    let c = InternalProblem::new(&sp, &Potential1D::constant(&sp.grid, 1.5).unwrap(), 1.0, 1.0).unwrap();
    let (w, b) = internal::certificate_norm(&c, internal::optimal_alpha(&c)).unwrap();
    let h2 = sp.grid.h * sp.grid.h;
    assert!(w <= b + 1e-9 && b < 10.0 * h2, "{w} {b}");
}

#[test]
fn condition_interval() {
    let sp = spaces(401);
    for q0 in [-0.69, -0.5, -0.3, 0.0, 0.3, 0.5, 0.79] {
        let r = internal::step_condition(&sp, q0, 0.4, 0.6, 1.0).unwrap();
        assert!(r.pass && r.lhs_normalized < 1.0, "q0 {q0}: {}", r.lhs_normalized);
    }
    assert!(!internal::step_condition(&sp, 1.5, 0.4, 0.6, 1.0).unwrap().pass);
    let c = InternalProblem::new(&sp, &Potential1D::constant(&sp.grid, 3.0).unwrap(), 1.0, 1.0).unwrap();
    let r = internal::sufficient_condition(&c);
    assert!(r.pass && r.lhs_normalized < 10.0 * sp.grid.h * sp.grid.h);
}

#[test]
fn condition_implies_least_norm_certificate() {
    let sp = spaces(41);
    for q0 in [-0.6, -0.3, 0.0, 0.3, 0.6, 1.0, 1.2] {
        let p = step_problem(&sp, q0).unwrap();
        let cond = internal::sufficient_condition(&p);
        let cert = internal::certify_internal(&p, DEFAULT_MARGIN).unwrap();
        assert!(cert.least_norm.max_tangent_residual() <= 1e-8);
        if cond.pass {
            assert!(cert.ndsc_pass(), "q0 {q0}: w {}", cert.least_norm.max_w_norm());
        }
    }
}

#[test]
fn apriori_constant_dominates() {
    let sp = spaces(41);
    for q0 in [0.0, 0.5] {
        let p = step_problem(&sp, q0).unwrap();
        let c_phi = internal::apriori_constant(&p);
        assert!(c_phi.is_finite() && c_phi >= 2f64.sqrt());
        let op = internal::assemble_internal_operator(&p).unwrap();
        let s = certify::tangent_injectivity(&op, &[p.model()], TangentKind::General).unwrap();
        assert!(s > 0.0 && 1.0 / s <= c_phi, "1/σ = {} vs {c_phi}", 1.0 / s);
    }
}

#[test]
fn linear_system_oracle_agrees() {
    let sp = spaces(41);
    let p = step_problem(&sp, 0.3).unwrap();
    let m = p.noiseless().unwrap();
    let (q, f) = internal::linear_system_oracle(&p, &m).unwrap();
    let div = pde1d::direct_division_oracle(&p.grid, &p.u_true).unwrap();
    assert!((&q.values - &div.values).amax() < 1e-10);
    assert_eq!(lowrank::numerical_rank(&f.whiten()).unwrap(), 1);
    let op = internal::assemble_internal_operator(&p).unwrap();
    assert!((op.apply(&[f.whiten()]).unwrap() - &m.z).norm() < 1e-9 * (1.0 + m.z.norm()));
}

#[test]
fn rank_one_feasible_points_are_the_truth() {
    // a⊗b with a∘b = u∘q matches the diagonal block; the integral block
    // then forces a ∝ u
    let sp = spaces(21);
    let p = step_problem(&sp, 0.5).unwrap();
    let op = internal::assemble_internal_operator(&p).unwrap();
    let z = p.noiseless().unwrap().z;
    let (u, q) = (&p.u_true.values, &p.q_ref.values);
    let residual = |g: &DVector<f64>| {
        let f = BivariateField::rank_one(p.h2.clone(), p.l2.clone(), &u.component_mul(g), &q.component_div(g)).unwrap();
        (op.apply(&[f.whiten()]).unwrap() - &z).norm()
    };
    for mu in [0.5, 2.0] {
        assert!(residual(&DVector::from_element(21, mu)) < 1e-10);
    }
    for k in 1..5 {
        let g = p.grid.nodes.map(|x| 1.0 + 0.1 * (k as f64 * x).sin());
        assert!(residual(&g) > 1e-6, "k {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn poisson_superposition(r1 in prop::collection::vec(-5.0..5.0f64, 15), r2 in prop::collection::vec(-5.0..5.0f64, 15),
                             a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let g = Grid1D::new(15, 0.0, 1.0).unwrap();
        let (r1, r2) = (DVector::from_vec(r1), DVector::from_vec(r2));
        let s1 = pde1d::solve_poisson_dirichlet_1d(&g, &r1, a, 0.0).unwrap();
        let s2 = pde1d::solve_poisson_dirichlet_1d(&g, &r2, 0.0, b).unwrap();
        let s = pde1d::solve_poisson_dirichlet_1d(&g, &(&r1 + &r2), a, b).unwrap();
        prop_assert!((s.values - s1.values - s2.values).amax() < 1e-12);
    }

    #[test]
    fn state_scales_with_boundary_data(t in 0.01..10.0f64, q0 in -0.5..2.0f64) {
        let g = Grid1D::new(31, 0.0, 1.0).unwrap();
        let q = Potential1D::step(&g, 1.0, q0, 0.4, 0.6).unwrap();
        let u = pde1d::solve_schrodinger_1d(&g, &q, 1.0, 1.0).unwrap();
        let ut = pde1d::solve_schrodinger_1d(&g, &q, t, t).unwrap();
        prop_assert!((ut.values - u.values * t).amax() <= 1e-12 * t);
    }

    #[test]
    fn condition_forms_agree(q0 in -0.9..3.0f64, a in 0.05..0.45f64, w in 0.05..0.5f64, f in 0.2..3.0f64) {
        let sp = spaces(41);
        let q = Potential1D::step(&sp.grid, 1.0, q0, a, a + w).unwrap();
        let p = InternalProblem::new(&sp, &q, f, f).unwrap();
        let r = internal::sufficient_condition(&p);
        prop_assert!((r.lhs_normalized - r.lhs_unnormalized).abs() <= 1e-10 * (1.0 + r.lhs_normalized));
    }

    #[test]
    fn certificate_norm_below_majorant(q0 in -0.9..3.0f64, a in 0.05..0.6f64, w in 0.05..0.3f64, alpha in -3.0..3.0f64) {
        let sp = spaces(31);
        let q = Potential1D::step(&sp.grid, 1.0, q0, a, a + w).unwrap();
        let p = InternalProblem::new(&sp, &q, 1.0, 1.0).unwrap();
        let (exact, bound) = internal::certificate_norm(&p, alpha).unwrap();
        prop_assert!(exact <= bound + 1e-9, "{exact} > {bound}");
    }
}
