//! Singular value thresholding and its optimality conditions.
use liftrec::acceptance;
use liftrec::lowrank;
use nalgebra::DMatrix;

fn main() -> liftrec::Result<()> {
    let m = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * (i as f64));
    println!("singular values {:.4?}", lowrank::singular_values(&m)?.as_slice());
    for tau in [0.5, 2.0, 5.0] {
        let out = lowrank::svt_prox(&m, tau)?;
        let (eq, w) = acceptance::svt_kkt_defect(&m, &out, tau)?;
        let oracle = acceptance::factorized_prox_oracle(&m, tau, 1);
        println!(
            "tau {tau}: rank {}, KKT equality {eq:.1e}, ‖W‖ {w:.3}, distance to oracle {:.1e}",
            lowrank::numerical_rank(&out)?,
            (&out - oracle).norm()
        );
    }
    Ok(())
}
