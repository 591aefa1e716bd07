//! Boundary-data pipeline on the unit square: certificate table, then exact
//! recovery of the lifted stack.
use liftrec::acceptance::CALDERON_HATS;
use liftrec::calderon::{self, CalderonMode, CalderonProblem, CalderonSystem};
use liftrec::solvers::SolverOptions;

fn main() -> liftrec::Result<()> {
    let p = CalderonProblem::unit_square(17, 2, 4, &CALDERON_HATS)?;
    for row in calderon::precertificate_study(&p, &[1, 2, 3, 4])? {
        println!(
            "N = {}: w {:.4}, tangent residual {:.1e}, σ_min {:.3}",
            row.count, row.w_norm, row.tangent_residual, row.sigma_min
        );
    }
    let sys = CalderonSystem::new(&p)?;
    let rec = calderon::recover_calderon(&p, &sys, &p.measurements(None)?, CalderonMode::Exact, &SolverOptions::default())?;
    println!("exact recovery: relative error {:.3e}, residual {:.1e}", rec.relative_error(&p), rec.constraint_residual);
    Ok(())
}
