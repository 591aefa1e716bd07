use liftrec::acceptance::loglog_slope;
use liftrec::calderon::{self, BasisW, BoundaryBasis, CalderonMode, CalderonProblem, CalderonSystem};
use liftrec::certify::{self, TangentKind};
use liftrec::hilbert::Grid2D;
use liftrec::solvers::SolverOptions;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const HATS: [f64; 4] = [1.0, 1.5, 2.0, 1.2];

fn small(n: usize, count: usize) -> CalderonProblem {
    CalderonProblem::unit_square(n, 2, count, &HATS).unwrap()
}

// u = cosh x + y² + 1 solves −Δu + qu = 0 with q = (cosh x + 2)/u
fn manufactured(g: &Grid2D) -> (DVector<f64>, DVector<f64>) {
    let u = g.sample(|x, y| x.cosh() + y * y + 1.0);
    let q = g.sample(|x, y| (x.cosh() + 2.0) / (x.cosh() + y * y + 1.0));
    (u, q)
}

#[test]
fn manufactured_solution_converges() {
    let mut hs = Vec::new();
    let mut node_err = Vec::new();
    let mut flux_err = Vec::new();
    for n in [9, 17, 33] {
        let g = Grid2D::unit_square(n).unwrap();
        let (u, q) = manufactured(&g);
        let f = g.boundary_values(&u);
        let s = calderon::solve_schrodinger_2d(&g, &q, &f).unwrap();
        node_err.push((&s - &u).amax());
        let flux = calderon::dtn_flux(&g, &q, &f).unwrap();
        let mut e: f64 = 0.0;
        for (b, &node) in g.boundary_index.iter().enumerate() {
            let nrm = &g.boundary_normals[b];
            if nrm[0] != 0.0 && nrm[1] != 0.0 {
                continue;
            }
            let (x, y) = g.coords(node);
            let exact = x.sinh() * nrm[0] + 2.0 * y * nrm[1];
            e = e.max((flux[b] - exact).abs());
        }
        flux_err.push(e);
        hs.push(g.hx);
    }
    let order = loglog_slope(&hs, &node_err);
    assert!(order >= 1.8, "node order {order}: {node_err:?}");
    let order = loglog_slope(&hs, &flux_err);
    assert!(order >= 0.9, "flux order {order}: {flux_err:?}");
}

#[test]
fn truth_data_identities() {
    let p = small(9, 3);
    let op = calderon::assemble_calderon_operator(&p).unwrap();
    let m = p.measurements(None).unwrap();
    let lay = p.layout();
    assert_eq!(lay.pairs.len(), 3);
    assert!(m.z.rows_range(lay.phi3.clone()).amax() == 0.0);
    let z = p.apply_values(&op, &p.truth_stack()).unwrap();
    assert!((&z - &m.z).amax() < 1e-9);
    // z₂ = [∫q]·f̃_i in H¹ coordinates
    let nodes = p.grid.len();
    for i in 0..p.count() {
        let z2 = m.z.rows(lay.phi2.start + i * nodes, nodes);
        let expect = p.h1.whiten_vec(&(&p.harmonic[i] * p.int_q));
        assert!((z2 - expect).amax() < 1e-9);
        // v_{F_i†} = u_i† − f̃_i has flux Λ_q f_i − Λ_0 f_i
        let z1 = m.z.rows(i * p.nb(), p.nb());
        let sw = p.grid.boundary_weights.map(f64::sqrt);
        assert!((z1 - (&p.fluxes[i] - &p.harmonic_fluxes[i]).component_mul(&sw)).amax() < 1e-12);
    }
    assert!(op.adjoint_mismatch(100, 3) < 1e-9);
}

#[test]
fn integral_block_removes_scaling() {
    let p = small(9, 2);
    let op = calderon::assemble_calderon_operator(&p).unwrap();
    let z = p.measurements(None).unwrap().z;
    for mu in [0.5, 0.99, 1.01, 2.0] {
        let w: Vec<DMatrix<f64>> = p.truth_stack().iter().map(|f| f.whiten() * mu).collect();
        let r = op.apply(&w).unwrap() - &z;
        let lay = p.layout();
        let phi2 = r.rows_range(lay.phi2.clone()).norm();
        let phi3 = r.rows_range(lay.phi3.clone()).norm();
        assert!(phi2 > 1e-6, "mu {mu}");
        assert!(phi3 < 1e-12, "mu {mu}");
    }
}

#[test]
fn constant_potential_single_measurement() {
    let g = Grid2D::unit_square(9).unwrap();
    let w = BasisW::bilinear_hats(&g, 2).unwrap();
    let coeffs = w.project(&g, &DVector::from_element(g.len(), 1.5));
    assert!((w.evaluate(&coeffs) - DVector::from_element(g.len(), 1.5)).amax() < 1e-10);
    let bdry = BoundaryBasis::trigonometric(&g, 1).unwrap();
    let p = CalderonProblem::new(&g, w, bdry, coeffs).unwrap();
    let (rep, row) = calderon::certify_calderon(&p, 1e-3).unwrap();
    assert!(rep.is_some() && row.tangent_residual <= 1e-8, "{row:?}");
    let sys = CalderonSystem::new(&p).unwrap();
    let rec = calderon::recover_calderon(&p, &sys, &p.measurements(None).unwrap(), CalderonMode::Exact, &SolverOptions::default()).unwrap();
    assert!(rec.constraint_residual <= 1e-7);
}

#[test]
fn study_table_and_injectivity() {
    let p = small(9, 3);
    let rows = calderon::precertificate_study(&p, &[1, 2, 3]).unwrap();
    assert_eq!(rows.iter().map(|r| r.count).collect::<Vec<_>>(), vec![1, 2, 3]);
    for r in &rows {
        assert!(r.degenerate || r.tangent_residual <= 1e-8, "{r:?}");
    }
    let op = calderon::assemble_calderon_operator(&p).unwrap();
    let s = certify::tangent_injectivity(&op, &p.models().unwrap(), TangentKind::General).unwrap();
    assert!(s > 0.0);
}

#[test]
fn derivative_is_symmetric_and_compact() {
    let p = small(13, 4);
    let h = p.grid.sample(|x, y| (std::f64::consts::PI * x).sin() * (1.0 + y) - 0.3);
    let d = calderon::frechet_derivative(&p, &p.q_nodal, &h).unwrap();
    let b = calderon::derivative_bilinear(&p, &d);
    assert!((&b - b.transpose()).amax() <= 1e-8 * (1.0 + b.amax()));
    let prof = calderon::compactness_diagnostic(&p, &p.q_nodal, &h, 12).unwrap();
    assert!(prof.iter().all(|s| *s >= 0.0));
    assert!(prof.as_slice().windows(2).all(|w| w[1] <= w[0]));
    let zero = calderon::compactness_diagnostic(&p, &p.q_nodal, &DVector::zeros(p.grid.len()), 6).unwrap();
    assert_eq!(zero.amax(), 0.0);
}

#[test]
fn gauss_newton_local_probe() {
    let p = small(9, 4);
    let data = calderon::forward_fluxes(&p, &p.q_nodal).unwrap();
    let init = p.q_coeffs.map(|v| v + 0.05);
    let hist = calderon::gauss_newton_baseline(&p, &init, &data, 10).unwrap();
    assert!(hist.misfits.windows(2).all(|w| w[1] <= w[0]), "{:?}", hist.misfits);
    let last = DVector::from_column_slice(hist.iterates.last().unwrap());
    assert!((last - &p.q_coeffs).norm() < 1e-6 * p.q_coeffs.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn extraction_is_linear(a in prop::collection::vec(-1.0..1.0f64, 81 * 4), b in prop::collection::vec(-1.0..1.0f64, 81 * 4),
                            s in -2.0..2.0f64, t in -2.0..2.0f64) {
        let g = Grid2D::unit_square(9).unwrap();
        let bd = BoundaryBasis::trigonometric(&g, 2).unwrap();
        let f = bd.column(1);
        let (a, b) = (DMatrix::from_vec(81, 4, a), DMatrix::from_vec(81, 4, b));
        let lhs = calderon::extract_q_calderon(&g, &(&a * s + &b * t), &f).unwrap();
        let rhs = calderon::extract_q_calderon(&g, &a, &f).unwrap() * s + calderon::extract_q_calderon(&g, &b, &f).unwrap() * t;
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn extraction_exact_on_rank_one(u in prop::collection::vec(0.5..2.0f64, 81), q in prop::collection::vec(-1.0..1.0f64, 4)) {
        let g = Grid2D::unit_square(9).unwrap();
        let bd = BoundaryBasis::trigonometric(&g, 1).unwrap();
        let q = DVector::from_vec(q);
        // rows at boundary nodes must carry f·q
        let mut uu = DVector::from_vec(u);
        for (b, &node) in g.boundary_index.iter().enumerate() {
            uu[node] = bd.f[(b, 0)];
        }
        let c = &uu * q.transpose();
        let back = calderon::extract_q_calderon(&g, &c, &bd.column(0)).unwrap();
        prop_assert!((back - q).amax() < 1e-12);
    }
}
