//! Phase retrieval by lifting: certificate, exact and noisy recovery.
use liftrec::lowrank::DEFAULT_MARGIN;
use liftrec::quadratic;
use liftrec::solvers::{PsdMode, SolverOptions};

fn main() -> liftrec::Result<()> {
    let opts = SolverOptions::default();
    for seed in [1, 2, 3] {
        let inst = quadratic::make_phase_retrieval(5, 20, seed)?;
        let x = inst.x_true.clone().expect("generated with truth");
        let cert = quadratic::certify_phaselift(&inst, DEFAULT_MARGIN)?;
        let rec = quadratic::recover_phaselift(&inst, &inst.z, PsdMode::Exact, &opts)?;
        println!(
            "seed {seed}: certificate w {:.3} (pass {}), exact error {:.2e}",
            cert.max_w_norm(),
            cert.ndsc_pass,
            rec.sign_aligned_error(&x)
        );
        if cert.ndsc_pass {
            for delta in [1e-2, 1e-3] {
                let r = quadratic::noisy_phaselift(&inst, delta, 1.0, seed, Some(&cert), &opts)?;
                let holds = r.bounds.map(|b| b.holds).unwrap_or(false);
                println!("  delta {delta:.0e}: lifted error {:.3e}, bounds hold {holds}", r.lifted_error);
            }
        }
    }
    Ok(())
}
