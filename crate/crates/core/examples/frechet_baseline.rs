//! Linearized forward map: finite-difference check of the Fréchet
//! derivative, then a Gauss–Newton reconstruction for comparison.
use liftrec::acceptance::{self, CALDERON_HATS};
use liftrec::calderon::{self, CalderonProblem};

fn main() -> liftrec::Result<()> {
    let p = CalderonProblem::unit_square(17, 2, 4, &CALDERON_HATS)?;
    let h = p.grid.sample(|x, y| (std::f64::consts::PI * x).sin() * (1.0 + y) - 0.3);
    let (steps, errs) = acceptance::frechet_fd_errors(&p, &h)?;
    for (t, e) in steps.iter().zip(&errs) {
        println!("t {t:.1e}: ‖FD − derivative‖ {e:.3e}");
    }
    println!("observed order {:.3}", acceptance::loglog_slope(&steps, &errs));

    let data = calderon::forward_fluxes(&p, &p.q_nodal)?;
    let init = p.q_coeffs.map(|v| v + 0.5);
    let hist = calderon::gauss_newton_baseline(&p, &init, &data, 20)?;
    for (k, m) in hist.misfits.iter().enumerate() {
        println!("Gauss–Newton {k}: misfit {m:.3e}");
    }
    Ok(())
}
