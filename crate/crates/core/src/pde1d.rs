//! One-dimensional Dirichlet solvers for `−u″ + qu = 0` and `u″ = g`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::hilbert::{second_derivative_matrix, Grid1D, InnerProduct};

/// Potential sampled on grid nodes, with cached summary values.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential1D {
    pub values: DVector<f64>,
    pub inf: f64,
    pub sup: f64,
    /// Trapezoid integral.
    pub integral: f64,
}

impl Potential1D {
    pub fn new(grid: &Grid1D, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return invalid(format!("potential has {} values on a grid of {}", values.len(), grid.n));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return invalid("potential has non-finite values");
        }
        Ok(Potential1D {
            inf: values.min(),
            sup: values.max(),
            integral: grid.integrate(&values),
            values,
        })
    }

    pub fn constant(grid: &Grid1D, c: f64) -> Result<Self> {
        Self::new(grid, DVector::from_element(grid.n, c))
    }

    /// `base + q0·𝟙_(a,b)`, the indicator taken on the open interval.
    pub fn step(grid: &Grid1D, base: f64, q0: f64, a: f64, b: f64) -> Result<Self> {
        let eps = 1e-12 * grid.length();
        let v = grid.nodes.map(|x| if x > a + eps && x < b - eps { base + q0 } else { base });
        Self::new(grid, v)
    }

    pub fn l2_norm(&self, grid: &Grid1D) -> f64 {
        grid.quad_weights.dot(&self.values.component_mul(&self.values)).sqrt()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.amax()
    }
}

/// Nodal state with its Dirichlet data.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField1D {
    pub values: DVector<f64>,
    pub f_a: f64,
    pub f_b: f64,
}

impl StateField1D {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.len() < 2 {
            return invalid("state needs at least two nodes");
        }
        let (f_a, f_b) = (values[0], values[values.len() - 1]);
        Ok(StateField1D { values, f_a, f_b })
    }
}

/// Tridiagonal solve with partial pivoting. `None` on an exactly or
/// numerically zero pivot.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    assert!(sub.len() + 1 == n && sup.len() + 1 == n && rhs.len() == n);
    let scale = diag
        .iter()
        .chain(sub)
        .chain(sup)
        .fold(0.0_f64, |a, &b| a.max(b.abs()));
    let tiny = 1e-14 * scale;
    let mut d = diag.to_vec();
    let mut dl = sub.to_vec();
    let mut du = sup.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut b = rhs.to_vec();
    if n == 1 {
        return if d[0].abs() > tiny { Some(vec![b[0] / d[0]]) } else { None };
    }
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i].abs() <= tiny {
                return None;
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            dl[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du2[i];
            }
            du[i] = temp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - fact * b[i + 1];
        }
    }
    if d[n - 1].abs() <= tiny {
        return None;
    }
    b[n - 1] /= d[n - 1];
    b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
    Some(b)
}

/// Solve `−D₂u + qu = 0` on interior nodes with `u(a) = f_a`, `u(b) = f_b`.
pub fn solve_schrodinger_1d(grid: &Grid1D, q: &Potential1D, f_a: f64, f_b: f64) -> Result<StateField1D> {
    if q.values.len() != grid.n {
        return invalid("potential does not match the grid");
    }
    let n = grid.n;
    let m = n - 2;
    let c = 1.0 / (grid.h * grid.h);
    let diag: Vec<f64> = (1..n - 1).map(|j| 2.0 * c + q.values[j]).collect();
    let off = vec![-c; m - 1];
    let mut rhs = vec![0.0; m];
    rhs[0] += c * f_a;
    rhs[m - 1] += c * f_b;
    let sol = solve_tridiagonal(&off, &diag, &off, &rhs)
        .ok_or_else(|| Error::EigenvalueHit(format!("zero pivot with n = {n}")))?;
    let mut u = DVector::zeros(n);
    u[0] = f_a;
    u[n - 1] = f_b;
    for (k, v) in sol.into_iter().enumerate() {
        u[k + 1] = v;
    }
    // a near-singular system shows up as a large residual
    let mut res: f64 = 0.0;
    let mut size: f64 = 0.0;
    for j in 1..n - 1 {
        let r = c * (-u[j - 1] + 2.0 * u[j] - u[j + 1]) + q.values[j] * u[j];
        res = res.max(r.abs());
        size = size.max(c * (u[j - 1].abs() + 2.0 * u[j].abs() + u[j + 1].abs()) + q.values[j].abs() * u[j].abs());
    }
    if !(res <= 1e-10 * size.max(f64::MIN_POSITIVE)) || u.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenvalueHit(format!("residual {res:e} relative to {size:e}")));
    }
    Ok(StateField1D { values: u, f_a, f_b })
}

/// Solve `D₂u = rhs` on interior nodes with Dirichlet data.
pub fn solve_poisson_dirichlet_1d(grid: &Grid1D, rhs: &DVector<f64>, f_a: f64, f_b: f64) -> Result<StateField1D> {
    if rhs.len() != grid.n {
        return invalid("right-hand side does not match the grid");
    }
    let n = grid.n;
    let m = n - 2;
    let c = 1.0 / (grid.h * grid.h);
    let diag = vec![-2.0 * c; m];
    let off = vec![c; m - 1];
    let mut b: Vec<f64> = (1..n - 1).map(|j| rhs[j]).collect();
    b[0] -= c * f_a;
    b[m - 1] -= c * f_b;
    let sol = solve_tridiagonal(&off, &diag, &off, &b).ok_or_else(|| Error::NumericFailure("Poisson solve failed".into()))?;
    let mut u = DVector::zeros(n);
    u[0] = f_a;
    u[n - 1] = f_b;
    for (k, v) in sol.into_iter().enumerate() {
        u[k + 1] = v;
    }
    Ok(StateField1D { values: u, f_a, f_b })
}

/// Affine interpolant of the boundary data.
pub fn harmonic_extension_1d(grid: &Grid1D, f_a: f64, f_b: f64) -> StateField1D {
    let l = grid.length();
    let values = grid.nodes.map(|x| {
        let t = (x - grid.a) / l;
        f_a * (1.0 - t) + f_b * t
    });
    StateField1D { values, f_a, f_b }
}

/// `q = D₂u / u` at every node (one-sided stencil at the ends).
pub fn direct_division_oracle(grid: &Grid1D, u: &StateField1D) -> Result<Potential1D> {
    if u.values.len() != grid.n {
        return invalid("state does not match the grid");
    }
    if let Some(j) = u.values.iter().position(|x| x.abs() < 1e-10) {
        return Err(Error::DegenerateInput(format!("state vanishes at node {j}")));
    }
    let lap = second_derivative_matrix(grid) * &u.values;
    Potential1D::new(grid, lap.component_div(&u.values))
}

/// Gaussian perturbation vanishing at both ends, rescaled to Gram norm `delta`.
pub fn h2_noise_vector(delta: f64, seed: u64, h2: &InnerProduct) -> Result<DVector<f64>> {
    if !(delta >= 0.0) {
        return invalid(format!("noise level must be nonnegative, got {delta}"));
    }
    let n = h2.dim();
    if n < 3 {
        return invalid("noise needs at least one interior node");
    }
    if delta == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    e[0] = 0.0;
    e[n - 1] = 0.0;
    let ne = h2.norm(&e);
    e *= delta / ne;
    Ok(e)
}

/// `u + e` with `e` from [`h2_noise_vector`].
pub fn inject_h2_noise(u: &StateField1D, delta: f64, seed: u64, h2: &InnerProduct) -> Result<StateField1D> {
    if h2.dim() != u.values.len() {
        return invalid("inner product does not match the state");
    }
    let e = h2_noise_vector(delta, seed, h2)?;
    Ok(StateField1D { values: &u.values + e, f_a: u.f_a, f_b: u.f_b })
}
