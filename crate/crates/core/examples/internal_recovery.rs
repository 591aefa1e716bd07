//! Recover a step potential from interior data, exactly and under H² noise.
use liftrec::hilbert::Grid1D;
use liftrec::internal::{self, InternalProblem, InternalSpaces, RecoveryMode};
use liftrec::lowrank::DEFAULT_MARGIN;
use liftrec::pde1d::Potential1D;
use liftrec::solvers::SolverOptions;

fn main() -> liftrec::Result<()> {
    let spaces = InternalSpaces::new(&Grid1D::new(41, 0.0, 1.0)?)?;
    let q = Potential1D::step(&spaces.grid, 1.0, 0.5, 0.4, 0.6)?;
    let p = InternalProblem::new(&spaces, &q, 1.0, 1.0)?;
    let cond = internal::sufficient_condition(&p);
    let cert = internal::certify_internal(&p, DEFAULT_MARGIN)?;
    println!("condition lhs {:.4} (pass {}), certificate ‖P_T⊥H‖ {:.4}", cond.lhs_normalized, cond.pass, cert.least_norm.max_w_norm());

    let opts = SolverOptions::default();
    let exact = internal::recover_internal(&p, &p.noiseless()?, RecoveryMode::Exact, &opts)?;
    println!("exact: error {:.3e} in {} iterations", exact.relative_error(&p), exact.report.iterations);

    for delta in [1e-2, 1e-3, 1e-4] {
        let rec = internal::recover_internal(&p, &p.noisy(delta, 1)?, RecoveryMode::Noisy { c: 1.0 }, &opts)?;
        println!("delta {delta:.0e}: error {:.3e}, σ₂/σ₁ {:.1e}", rec.relative_error(&p), rec.rank_ratio);
    }
    Ok(())
}
