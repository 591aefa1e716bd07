//! Scan the sufficient condition over the step height and locate where it
//! stops holding.
use liftrec::hilbert::Grid1D;
use liftrec::internal::{self, InternalSpaces};

fn main() -> liftrec::Result<()> {
    let spaces = InternalSpaces::new(&Grid1D::new(401, 0.0, 1.0)?)?;
    for k in 0..=12 {
        let q0 = -0.9 + 0.2 * k as f64;
        let r = internal::step_condition(&spaces, q0, 0.4, 0.6, 1.0)?;
        println!("q0 {q0:+.2}  lhs {:.4}  {}", r.lhs_normalized, if r.pass { "holds" } else { "fails" });
    }
    let lower = internal::locate_condition_threshold(&spaces, -0.99, 0.0, 0.4, 0.6, 1.0, 1e-6)?;
    let upper = internal::locate_condition_threshold(&spaces, 0.0, 4.0, 0.4, 0.6, 1.0, 1e-6)?;
    println!("lower threshold {lower:?}, upper threshold {upper:?}");
    Ok(())
}
