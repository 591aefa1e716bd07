//! Internal measurements in one dimension: recover `q` in `−u″ + qu = 0`
//! from the state `u` by lifting `F = u ⊗ q`.
//!
//! The lifted operator has two parts. The first restricts `F` to the
//! diagonal, measured in `L²` (for the truth this is `Δu = qu`). The second
//! integrates `F` in its second variable, measured in `H²` (for the truth
//! this is `[∫q]·u`). The x-variable carries the `H²` structure and the
//! y-variable the trapezoid `L²` structure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::{self, CertificateReport, TangentKind};
use crate::error::{invalid, Error, Result};
use crate::hilbert::{assemble_inner_product, second_derivative_matrix, BivariateField, Grid1D, GridRef, InnerProduct, Kind};
use crate::lowrank::{self, RankOneModel};
use crate::pde1d::{self, Potential1D, StateField1D};
use crate::solvers::{self, AffineOperator, SolveReport, SolverOptions};

/// Hilbert structures shared by every problem on one grid.
#[derive(Debug, Clone)]
pub struct InternalSpaces {
    pub grid: Grid1D,
    pub h2: Arc<InnerProduct>,
    pub l2: Arc<InnerProduct>,
}

impl InternalSpaces {
    pub fn new(grid: &Grid1D) -> Result<Self> {
        Ok(InternalSpaces {
            grid: grid.clone(),
            h2: Arc::new(assemble_inner_product(GridRef::One(grid), Kind::H2)?),
            l2: Arc::new(assemble_inner_product(GridRef::One(grid), Kind::L2)?),
        })
    }
}

/// Ground truth of an internal-measurement problem.
#[derive(Debug, Clone)]
pub struct InternalProblem {
    pub grid: Grid1D,
    /// Potential used for the forward solve.
    pub q_true: Potential1D,
    /// `D₂u†/u†` at every node: the discrete truth that the lifted problem
    /// sees (equal to `q_true` at interior nodes).
    pub q_ref: Potential1D,
    pub f_a: f64,
    pub f_b: f64,
    pub u_true: StateField1D,
    pub h2: Arc<InnerProduct>,
    pub l2: Arc<InnerProduct>,
    /// `∫q†`, assumed known.
    pub int_q: f64,
    pub f_tilde: StateField1D,
}

/// Lifted measurements in whitened coordinates, `z = (z₁, z₂)`.
#[derive(Debug, Clone)]
pub struct InternalMeasurements {
    /// Diagonal data `Δu^δ` at every node (unwhitened).
    pub z1: DVector<f64>,
    /// `[∫q†]·u^δ` (unwhitened).
    pub z2: DVector<f64>,
    /// Whitened stack `(√w ∘ z₁, L_{H²} z₂)`.
    pub z: DVector<f64>,
    pub delta: f64,
    pub seed: Option<u64>,
    pub u_obs: StateField1D,
    /// `‖z^δ − z‖` against the noiseless data.
    pub data_error: f64,
}

impl InternalProblem {
    pub fn new(spaces: &InternalSpaces, q: &Potential1D, f_a: f64, f_b: f64) -> Result<Self> {
        let grid = &spaces.grid;
        if q.values.len() != grid.n {
            return invalid("potential does not match the grid");
        }
        if !(q.inf > 0.0) {
            return invalid(format!("potential must be positive, inf q = {}", q.inf));
        }
        if !(f_a > 0.0 && f_b > 0.0) {
            return invalid("boundary data must be positive");
        }
        let u = pde1d::solve_schrodinger_1d(grid, q, f_a, f_b)?;
        if !(u.values.min() > 0.0) {
            return Err(Error::DegenerateInput("state is not positive".into()));
        }
        let q_ref = pde1d::direct_division_oracle(grid, &u)?;
        if !(q_ref.integral > 0.0) {
            return Err(Error::DegenerateInput("∫q must be positive".into()));
        }
        Ok(InternalProblem {
            grid: grid.clone(),
            q_true: q.clone(),
            int_q: q_ref.integral,
            q_ref,
            f_a,
            f_b,
            f_tilde: pde1d::harmonic_extension_1d(grid, f_a, f_b),
            u_true: u,
            h2: spaces.h2.clone(),
            l2: spaces.l2.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// `F† = u† ⊗ q†`.
    pub fn truth(&self) -> BivariateField {
        BivariateField::rank_one(self.h2.clone(), self.l2.clone(), &self.u_true.values, &self.q_ref.values)
            .expect("dimensions agree by construction")
    }

    /// `F†` as `(σ, û, v̂)` in whitened coordinates.
    pub fn model(&self) -> RankOneModel {
        let a = self.h2.whiten_vec(&self.u_true.values);
        let b = self.l2.whiten_vec(&self.q_ref.values);
        RankOneModel::from_factors(&a, &b).expect("state and potential are nonzero")
    }

    fn sqrt_w(&self) -> DVector<f64> {
        self.grid.quad_weights.map(f64::sqrt)
    }

    /// Measurements built from an observed state.
    pub fn measurements_from_state(&self, u_obs: &StateField1D) -> Result<InternalMeasurements> {
        if u_obs.values.len() != self.n() {
            return invalid("observed state does not match the grid");
        }
        let d2 = second_derivative_matrix(&self.grid);
        let z1 = &d2 * &u_obs.values;
        let z2 = &u_obs.values * self.int_q;
        let z = self.whiten_data(&z1, &z2);
        let clean = self.whiten_data(&(&d2 * &self.u_true.values), &(&self.u_true.values * self.int_q));
        Ok(InternalMeasurements {
            data_error: (&z - clean).norm(),
            z1,
            z2,
            z,
            delta: 0.0,
            seed: None,
            u_obs: u_obs.clone(),
        })
    }

    fn whiten_data(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&self.sqrt_w().component_mul(z1));
        z.rows_mut(n, n).copy_from(&self.h2.whiten_vec(z2));
        z
    }

    pub fn noiseless(&self) -> Result<InternalMeasurements> {
        self.measurements_from_state(&self.u_true)
    }

    /// Measurements from `u^δ = u† + e` with `‖e‖_{H²} = delta`.
    pub fn noisy(&self, delta: f64, seed: u64) -> Result<InternalMeasurements> {
        let u = pde1d::inject_h2_noise(&self.u_true, delta, seed, &self.h2)?;
        let mut m = self.measurements_from_state(&u)?;
        m.delta = delta;
        m.seed = Some(seed);
        Ok(m)
    }
}

/// Forward solve and measurement assembly in one call.
pub fn build_internal_problem(
    grid: &Grid1D,
    q: &Potential1D,
    f_a: f64,
    f_b: f64,
    noise: Option<(f64, u64)>,
) -> Result<(InternalProblem, InternalMeasurements)> {
    let spaces = InternalSpaces::new(grid)?;
    let p = InternalProblem::new(&spaces, q, f_a, f_b)?;
    let m = match noise {
        Some((delta, seed)) => p.noisy(delta, seed)?,
        None => p.noiseless()?,
    };
    Ok((p, m))
}

/// Whitened lifted operator on one `n × n` block.
///
/// With `F̂ = L_x V diag(√w)`, the diagonal part is `(L_x⁻¹F̂)_{kk}` and the
/// integral part is `F̂ √w`.
pub fn assemble_internal_operator(problem: &InternalProblem) -> Result<AffineOperator> {
    let n = problem.n();
    let linv = problem.h2.whitener_inverse();
    let sw = problem.sqrt_w();
    let mut a = DMatrix::zeros(2 * n, n * n);
    for k in 0..n {
        for x in 0..n {
            let col = k * n + x;
            a[(k, col)] = linv[(k, x)];
            a[(n + x, col)] = sw[k];
        }
    }
    AffineOperator::from_dense(vec![(n, n)], a)
}

/// `Φ*(d, c)` as a value matrix: `c ⊗ 1 + K·diag(d)` with `K = G_{H²}⁻¹`.
pub fn closed_form_adjoint(problem: &InternalProblem, d: &DVector<f64>, c: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = problem.n();
    if d.len() != n || c.len() != n {
        return invalid("adjoint arguments do not match the grid");
    }
    let mut h = &problem.h2.kernel * DMatrix::from_diagonal(d);
    for y in 0..n {
        let mut col = h.column_mut(y);
        col += c;
    }
    Ok(h)
}

/// Read `q` off the boundary rows: `(f_a F[0,:] + f_b F[n−1,:]) / (f_a² + f_b²)`.
pub fn extract_q_from_trace(values: &DMatrix<f64>, f_a: f64, f_b: f64, grid: &Grid1D) -> Result<Potential1D> {
    let n = grid.n;
    if values.shape() != (n, n) {
        return invalid("value matrix does not match the grid");
    }
    let den = f_a * f_a + f_b * f_b;
    if den == 0.0 {
        return invalid("boundary data vanish");
    }
    let q = (values.row(0) * f_a + values.row(n - 1) * f_b).transpose() / den;
    Potential1D::new(grid, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    Exact,
    /// `λ = c·δ`.
    Noisy { c: f64 },
}

#[derive(Debug, Clone)]
pub struct InternalRecovery {
    pub q_hat: Potential1D,
    pub f_hat: BivariateField,
    /// Whitened solution block.
    pub f_hat_whitened: DMatrix<f64>,
    pub report: SolveReport,
    /// `σ₂/σ₁` of the whitened solution.
    pub rank_ratio: f64,
    pub lambda: Option<f64>,
}

impl InternalRecovery {
    /// `‖q̂ − q_ref‖_{L²} / ‖q_ref‖_{L²}`.
    pub fn relative_error(&self, problem: &InternalProblem) -> f64 {
        let d = Potential1D::new(&problem.grid, &self.q_hat.values - &problem.q_ref.values).expect("same grid");
        d.l2_norm(&problem.grid) / problem.q_ref.l2_norm(&problem.grid)
    }
}

pub fn recover_internal(
    problem: &InternalProblem,
    meas: &InternalMeasurements,
    mode: RecoveryMode,
    opts: &SolverOptions,
) -> Result<InternalRecovery> {
    let op = assemble_internal_operator(problem)?;
    recover_with_operator(problem, &op, meas, mode, opts)
}

/// As [`recover_internal`] with a prebuilt operator.
pub fn recover_with_operator(
    problem: &InternalProblem,
    op: &AffineOperator,
    meas: &InternalMeasurements,
    mode: RecoveryMode,
    opts: &SolverOptions,
) -> Result<InternalRecovery> {
    let (mut blocks, report, lambda) = match mode {
        RecoveryMode::Exact => {
            if meas.delta != 0.0 {
                return invalid("exact recovery needs noiseless measurements");
            }
            let (b, r) = solvers::solve_equality_nnm(op, &meas.z, opts)?;
            (b, r, None)
        }
        RecoveryMode::Noisy { c } => {
            let lambda = c * meas.delta;
            let (b, r) = solvers::solve_regularized_nnm(op, &meas.z, lambda, opts)?;
            (b, r, Some(lambda))
        }
    };
    let fw = blocks.remove(0);
    let f_hat = BivariateField::unwhiten(&fw, problem.h2.clone(), problem.l2.clone())?;
    let q_hat = extract_q_from_trace(&f_hat.values, problem.f_a, problem.f_b, &problem.grid)?;
    Ok(InternalRecovery {
        rank_ratio: lowrank::rank_ratio(&fw)?,
        q_hat,
        f_hat,
        f_hat_whitened: fw,
        report,
        lambda,
    })
}

/// Normalized quantities `u = u†/‖u†‖_{H²}`, `q = q†/‖q†‖_{L²}`.
struct Normalized {
    u: DVector<f64>,
    q: DVector<f64>,
    u_norm: f64,
    q_norm: f64,
    int_q: f64,
    inf_u: f64,
}

fn normalized(problem: &InternalProblem) -> Normalized {
    let u_norm = problem.h2.norm(&problem.u_true.values);
    let q_norm = problem.q_ref.l2_norm(&problem.grid);
    let u = &problem.u_true.values / u_norm;
    let q = &problem.q_ref.values / q_norm;
    Normalized {
        inf_u: u.min(),
        int_q: problem.int_q / q_norm,
        u,
        q,
        u_norm,
        q_norm,
    }
}

/// Whitened member `Ĥ_α` of the closed-form pre-certificate family.
///
/// With `d = (q − α)/u` and `K = G_{H²}⁻¹`, the value matrix is
/// `H = (1/∫q)(u − K(w∘d∘q)) ⊗ 1 + K·diag(d)`.
pub fn closed_form_precertificate(problem: &InternalProblem, alpha: f64) -> Result<DMatrix<f64>> {
    let nz = normalized(problem);
    if !(nz.inf_u > 0.0) {
        return Err(Error::DegenerateInput("state is not positive".into()));
    }
    if nz.int_q == 0.0 {
        return Err(Error::DegenerateInput("∫q vanishes".into()));
    }
    let d = (&nz.q - DVector::from_element(nz.q.len(), alpha)).component_div(&nz.u);
    let wdq = problem.grid.quad_weights.component_mul(&d).component_mul(&nz.q);
    let c = (&nz.u - &problem.h2.kernel * wdq) / nz.int_q;
    let h = closed_form_adjoint(problem, &d, &c)?;
    let sw = problem.sqrt_w();
    Ok(&problem.h2.whitener * h * DMatrix::from_diagonal(&sw))
}

/// `‖P_T⊥(Ĥ_α)‖` and its majorant `(|Ω|/[∫q]²)·‖q−α‖_∞/inf u`.
pub fn certificate_norm(problem: &InternalProblem, alpha: f64) -> Result<(f64, f64)> {
    let h = closed_form_precertificate(problem, alpha)?;
    let exact = lowrank::operator_norm(&lowrank::project_tangent_complement(&h, &problem.model())?)?;
    let nz = normalized(problem);
    let qa = nz.q.iter().fold(0.0_f64, |m, &x| m.max((x - alpha).abs()));
    let bound = problem.grid.length() / (nz.int_q * nz.int_q) * qa / nz.inf_u;
    Ok((exact, bound))
}

/// `(inf q + sup q)/2` for the normalized potential.
pub fn optimal_alpha(problem: &InternalProblem) -> f64 {
    let nz = normalized(problem);
    0.5 * (nz.q.min() + nz.q.max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lhs_normalized: f64,
    pub lhs_unnormalized: f64,
    pub pass: bool,
}

/// `(|Ω|/(2 inf u))·(sup q − inf q)/[∫q]² < 1` in normalized form, and the
/// same expression in terms of `q†`, `u†` times `‖q†‖_{L²}‖u†‖_{H²}`.
pub fn sufficient_condition(problem: &InternalProblem) -> ConditionReport {
    let nz = normalized(problem);
    let len = problem.grid.length();
    let lhs_normalized = len / (2.0 * nz.inf_u) * (nz.q.max() - nz.q.min()) / (nz.int_q * nz.int_q);
    let (q, u) = (&problem.q_ref, &problem.u_true.values);
    let lhs_unnormalized =
        len / (2.0 * u.min()) * (q.sup - q.inf) / (problem.int_q * problem.int_q) * nz.q_norm * nz.u_norm;
    ConditionReport { lhs_normalized, lhs_unnormalized, pass: lhs_normalized < 1.0 }
}

/// `√2·max(‖u†‖_{H²}/inf u†, (‖q†‖_{L²} + ‖q†‖_∞‖u†‖_{H²}/inf u†)/∫q†)`.
pub fn apriori_constant(problem: &InternalProblem) -> f64 {
    let nz = normalized(problem);
    let inf_u = problem.u_true.values.min();
    let a = nz.u_norm / inf_u;
    let b = (nz.q_norm + problem.q_ref.sup_abs() * nz.u_norm / inf_u) / problem.int_q;
    std::f64::consts::SQRT_2 * a.max(b)
}

/// Pointwise solution of the joint linear system: `q̂ = z₁/u†`, `F̂ = u†⊗q̂`.
pub fn linear_system_oracle(problem: &InternalProblem, meas: &InternalMeasurements) -> Result<(Potential1D, BivariateField)> {
    let u = &problem.u_true.values;
    if u.iter().any(|x| x.abs() < 1e-10) {
        return Err(Error::DegenerateInput("state vanishes".into()));
    }
    let q = Potential1D::new(&problem.grid, meas.z1.component_div(u))?;
    let f = BivariateField::rank_one(problem.h2.clone(), problem.l2.clone(), u, &q.values)?;
    Ok((q, f))
}

/// Certificate study of one problem.
#[derive(Debug, Clone)]
pub struct InternalCertificate {
    pub least_norm: CertificateReport,
    pub alpha_star: f64,
    pub closed_form_w_norm: f64,
    pub closed_form_bound: f64,
    /// `(α, ‖P_T⊥(Ĥ_α)‖)` on the study grid.
    pub alpha_scan: Vec<(f64, f64)>,
    /// Frobenius distance between the least-norm certificate and `Ĥ_{α*}`.
    pub distance_to_closed_form: f64,
}

impl InternalCertificate {
    pub fn ndsc_pass(&self) -> bool {
        self.least_norm.ndsc_pass
    }
}

pub fn certify_internal(problem: &InternalProblem, margin: f64) -> Result<InternalCertificate> {
    let op = assemble_internal_operator(problem)?;
    let model = problem.model();
    let least_norm = certify::precertificate_with(&op, &[model], TangentKind::General, margin)?;
    let alpha_star = optimal_alpha(problem);
    let (w, b) = certificate_norm(problem, alpha_star)?;
    let nz = normalized(problem);
    let (lo, hi) = (nz.q.min() - 0.5, nz.q.max() + 0.5);
    let mut scan = Vec::with_capacity(41);
    for k in 0..41 {
        let a = lo + (hi - lo) * k as f64 / 40.0;
        scan.push((a, certificate_norm(problem, a)?.0));
    }
    let hstar = closed_form_precertificate(problem, alpha_star)?;
    Ok(InternalCertificate {
        distance_to_closed_form: (&least_norm.h[0] - hstar).norm(),
        least_norm,
        alpha_star,
        closed_form_w_norm: w,
        closed_form_bound: b,
        alpha_scan: scan,
    })
}

/// Normalized condition value for `q = base + q0·𝟙_(a,b)`.
pub fn step_condition(spaces: &InternalSpaces, q0: f64, a: f64, b: f64, f: f64) -> Result<ConditionReport> {
    let q = Potential1D::step(&spaces.grid, 1.0, q0, a, b)?;
    let p = InternalProblem::new(spaces, &q, f, f)?;
    Ok(sufficient_condition(&p))
}

/// Bisection for `lhs(q0) = 1` on `[lo, hi]`. `None` without a sign change.
pub fn locate_condition_threshold(
    spaces: &InternalSpaces,
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
    f: f64,
    tol: f64,
) -> Result<Option<f64>> {
    let g = |q0: f64| -> Result<f64> { Ok(step_condition(spaces, q0, a, b, f)?.lhs_normalized - 1.0) };
    let (mut lo, mut hi) = (lo, hi);
    let (mut glo, ghi) = (g(lo)?, g(hi)?);
    if glo == 0.0 {
        return Ok(Some(lo));
    }
    if ghi == 0.0 {
        return Ok(Some(hi));
    }
    if glo.signum() == ghi.signum() {
        return Ok(None);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok(Some(mid));
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}
