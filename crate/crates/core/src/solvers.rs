//! Convex solvers for lifted problems.
//!
//! Unknowns are lists of whitened matrices ("blocks"). They are stored
//! internally as one flat vector, each block vectorized column-major in
//! the order of [`AffineOperator::domain_shape`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lowrank;

/// Dense linear measurement map on a list of matrix blocks.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    blocks: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    matrix: DMatrix<f64>,
    opnorm: f64,
}

impl AffineOperator {
    /// Wrap an assembled matrix of size `codomain × Σ rows·cols`.
    pub fn from_dense(blocks: Vec<(usize, usize)>, matrix: DMatrix<f64>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for &(r, c) in &blocks {
            if r == 0 || c == 0 {
                return invalid("empty block");
            }
            total += r * c;
            offsets.push(total);
        }
        if matrix.ncols() != total {
            return invalid(format!("matrix has {} columns, blocks need {total}", matrix.ncols()));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return invalid("operator has non-finite entries");
        }
        let opnorm = lanczos_norm(&matrix);
        Ok(AffineOperator { blocks, offsets, matrix, opnorm })
    }

    /// Assemble by probing a linear map with unit blocks.
    pub fn from_fn(
        blocks: Vec<(usize, usize)>,
        codomain: usize,
        f: impl Fn(&[DMatrix<f64>]) -> DVector<f64>,
    ) -> Result<Self> {
        let total: usize = blocks.iter().map(|&(r, c)| r * c).sum();
        let mut m = DMatrix::zeros(codomain, total);
        let mut probe: Vec<DMatrix<f64>> = blocks.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect();
        let mut col = 0;
        for (b, &(r, c)) in blocks.iter().enumerate() {
            for k in 0..r * c {
                probe[b][k] = 1.0;
                let y = f(&probe);
                if y.len() != codomain {
                    return invalid("probe image has the wrong length");
                }
                m.set_column(col, &y);
                probe[b][k] = 0.0;
                col += 1;
            }
        }
        Self::from_dense(blocks, m)
    }

    pub fn domain_shape(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn codomain_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lanczos estimate of `‖Φ‖`.
    pub fn opnorm_estimate(&self) -> f64 {
        self.opnorm
    }

    /// Columns of the assembled matrix belonging to block `i`.
    pub fn block_columns(&self, i: usize) -> nalgebra::DMatrixView<'_, f64> {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.matrix.columns(a, b - a)
    }

    pub fn zeros(&self) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect()
    }

    pub fn flatten(&self, f: &[DMatrix<f64>]) -> Result<DVector<f64>> {
        if f.len() != self.blocks.len() {
            return invalid(format!("expected {} blocks, got {}", self.blocks.len(), f.len()));
        }
        let mut x = DVector::zeros(self.domain_dim());
        for (i, b) in f.iter().enumerate() {
            if b.shape() != self.blocks[i] {
                return invalid(format!("block {i} is {:?}, expected {:?}", b.shape(), self.blocks[i]));
            }
            x.rows_mut(self.offsets[i], b.len()).copy_from_slice(b.as_slice());
        }
        Ok(x)
    }

    pub fn unflatten(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| DMatrix::from_column_slice(r, c, &x.as_slice()[self.offsets[i]..self.offsets[i + 1]]))
            .collect()
    }

    pub fn apply(&self, f: &[DMatrix<f64>]) -> Result<DVector<f64>> {
        Ok(&self.matrix * self.flatten(f)?)
    }

    pub fn adjoint(&self, p: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        if p.len() != self.codomain_dim() {
            return invalid(format!("dual vector has length {}, expected {}", p.len(), self.codomain_dim()));
        }
        Ok(self.unflatten(&self.matrix.tr_mul(p)))
    }

    /// Largest relative mismatch of `⟨ΦF, p⟩ = ⟨F, Φ*p⟩` over random probes.
    pub fn adjoint_mismatch(&self, probes: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let f: Vec<DMatrix<f64>> = self
                .blocks
                .iter()
                .map(|&(r, c)| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            let p = DVector::from_fn(self.codomain_dim(), |_, _| StandardNormal.sample(&mut rng));
            let lhs = self.apply(&f).expect("shapes match").dot(&p);
            let hs = self.adjoint(&p).expect("shapes match");
            let rhs: f64 = f.iter().zip(&hs).map(|(a, b)| a.dot(b)).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
        worst
    }

    /// Restrict to a contiguous range of measurement rows.
    pub fn select_rows(&self, rows: std::ops::Range<usize>) -> Result<AffineOperator> {
        if rows.end > self.codomain_dim() || rows.is_empty() {
            return invalid("row range out of bounds");
        }
        Self::from_dense(self.blocks.clone(), self.matrix.rows(rows.start, rows.len()).into_owned())
    }
}

/// `‖A‖` by Lanczos with full reorthogonalization on the smaller of
/// `AAᵀ`, `AᵀA`. Returns the top Ritz value plus its residual bound, so the
/// estimate does not fall below `‖A‖` by more than round-off.
fn lanczos_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() || a.amax() == 0.0 {
        return 0.0;
    }
    let wide = a.nrows() <= a.ncols();
    let dim = if wide { a.nrows() } else { a.ncols() };
    let apply = |x: &DVector<f64>| -> DVector<f64> {
        if wide {
            a * a.tr_mul(x)
        } else {
            a.tr_mul(&(a * x))
        }
    };
    let steps = dim.min(80);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut est = 0.0;
    for k in 0..steps {
        let mut w = apply(&basis[k]);
        let ak = basis[k].dot(&w);
        alpha.push(ak);
        for _ in 0..2 {
            for v in &basis {
                let c = v.dot(&w);
                w.axpy(-c, v, 1.0);
            }
        }
        let bk = w.norm();
        let t = DMatrix::from_fn(k + 1, k + 1, |i, j| {
            if i == j {
                alpha[i]
            } else if i == j + 1 {
                beta[j]
            } else if j == i + 1 {
                beta[i]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let theta = eig.eigenvalues[top];
        let resid = (bk * eig.eigenvectors[(k, top)]).abs();
        est = theta + resid;
        if resid <= 1e-12 * theta || bk <= 1e-14 * theta.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(bk);
        basis.push(w / bk);
    }
    est.max(0.0).sqrt()
}

/// Projection onto `{x : Ax = z}` using a maximal independent row subset.
///
/// Rows are chosen by a scale-invariant pivoted Cholesky of `AAᵀ`, so
/// redundant constraints (exact linear combinations of others) are dropped.
#[derive(Debug, Clone)]
pub struct AffineProjector {
    rows: Vec<usize>,
    a_rows: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    codomain: usize,
}

const PIVOT_TOL: f64 = 1e-12;

impl AffineProjector {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        let g = a * a.transpose();
        let rows = pivoted_rows(&g, PIVOT_TOL);
        if rows.is_empty() {
            return Err(Error::DegenerateInput("operator is zero".into()));
        }
        let a_rows = a.select_rows(rows.iter());
        let grr = g.select_rows(rows.iter()).select_columns(rows.iter());
        let chol = grr
            .cholesky()
            .ok_or_else(|| Error::NumericFailure("selected constraint Gram is not positive definite".into()))?;
        Ok(AffineProjector { rows, a_rows, chol, codomain: m })
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Project `x`; also return the multiplier `μ` (full length) with
    /// `P(x) = x − Aᵀμ`.
    pub fn project(&self, x: &DVector<f64>, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let zr = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&i| z[i]));
        let mut xp = x.clone();
        let mut mu = DVector::zeros(self.rows.len());
        // one refinement sweep cleans up round-off from the Gram solve
        for _ in 0..2 {
            let r = &self.a_rows * &xp - &zr;
            let step = self.chol.solve(&r);
            xp -= self.a_rows.tr_mul(&step);
            mu += step;
        }
        let mut full = DVector::zeros(self.codomain);
        for (k, &i) in self.rows.iter().enumerate() {
            full[i] = mu[k];
        }
        (xp, full)
    }
}

/// Greedy pivoted Cholesky on a PSD matrix; a row is accepted while its
/// residual variance exceeds `tol` times its original diagonal.
fn pivoted_rows(g: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let m = g.nrows();
    let orig: Vec<f64> = (0..m).map(|j| g[(j, j)]).collect();
    let mut d = orig.clone();
    let mut taken = vec![false; m];
    // column j of `lt` holds row j of the Cholesky factor
    let cap = m;
    let mut lt = vec![0.0; m * cap];
    let mut rows = Vec::new();
    for k in 0..m {
        let mut best = None;
        let mut best_ratio = tol;
        for j in 0..m {
            if !taken[j] && orig[j] > 0.0 {
                let r = d[j] / orig[j];
                if r > best_ratio {
                    best_ratio = r;
                    best = Some(j);
                }
            }
        }
        let Some(p) = best else { break };
        taken[p] = true;
        rows.push(p);
        let lpp = d[p].sqrt();
        lt[p * cap + k] = lpp;
        let lp: Vec<f64> = lt[p * cap..p * cap + k].to_vec();
        let gp = g.column(p);
        lt.par_chunks_mut(cap)
            .zip(d.par_iter_mut())
            .enumerate()
            .for_each(|(j, (col, dj))| {
                if taken[j] {
                    return;
                }
                let s: f64 = col[..k].iter().zip(&lp).map(|(a, b)| a * b).sum();
                let v = (gp[j] - s) / lpp;
                col[k] = v;
                *dj -= v * v;
            });
    }
    rows.sort_unstable();
    rows
}

/// Penalty on each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// Nuclear norm.
    Nuclear,
    /// Trace plus the indicator of the PSD cone.
    PsdTrace,
}

impl Regularizer {
    fn prox(self, m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
        match self {
            Regularizer::Nuclear => lowrank::svt_prox(m, tau),
            Regularizer::PsdTrace => lowrank::psd_shrink(m, tau),
        }
    }

    fn value(self, m: &DMatrix<f64>) -> Result<f64> {
        match self {
            Regularizer::Nuclear => lowrank::nuclear_norm(m),
            Regularizer::PsdTrace => Ok(m.trace()),
        }
    }

    /// Smallest `s ≥ 0` with `H/s` dual feasible.
    fn dual_norm(self, h: &DMatrix<f64>) -> Result<f64> {
        match self {
            Regularizer::Nuclear => lowrank::operator_norm(h),
            Regularizer::PsdTrace => {
                let sym = (h + h.transpose()) * 0.5;
                Ok(sym.symmetric_eigenvalues().max().max(0.0))
            }
        }
    }
}

/// Solver knobs; serialized in the CLI config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Feasibility tolerance relative to `‖z‖`.
    pub tol_feas: f64,
    /// Duality-gap tolerance relative to `1 + objective`.
    pub tol_gap: f64,
    /// Fixed-point tolerance of the regularized solvers, relative to `λ`.
    pub tol_fixed_point: f64,
    /// Douglas–Rachford step; defaults to `‖z‖/‖Φ‖`.
    pub rho: Option<f64>,
    /// Nesterov momentum with adaptive restart in the regularized solver.
    pub momentum: bool,
    /// Iterations between convergence checks.
    pub check_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 50_000,
            tol_feas: 1e-8,
            tol_gap: 1e-6,
            tol_fixed_point: 1e-8,
            rho: None,
            momentum: true,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleSuspected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub objective: f64,
    /// `‖ΦF − z‖`.
    pub residual: f64,
    pub gap: f64,
    pub status: SolveStatus,
    /// Dual vector (equality solves only), scaled to be dual feasible.
    #[serde(skip)]
    pub dual: Option<DVector<f64>>,
    /// Objective recorded at each convergence check.
    pub objective_trace: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Duality diagnostics for a primal/dual pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    /// `Σ‖F_i‖_* − ⟨p, z⟩`.
    pub gap: f64,
    /// `⟨F_i, H_i⟩ − ‖F_i‖_*` per block.
    pub per_block: Vec<f64>,
    pub max_dual_norm: f64,
    pub dual_feasible: bool,
    pub residual: f64,
}

pub const DUAL_FEAS_TOL: f64 = 1e-6;

pub fn duality_gap(f: &[DMatrix<f64>], p: &DVector<f64>, op: &AffineOperator, z: &DVector<f64>) -> Result<GapReport> {
    gap_report(f, p, op, z, Regularizer::Nuclear)
}

fn gap_report(
    f: &[DMatrix<f64>],
    p: &DVector<f64>,
    op: &AffineOperator,
    z: &DVector<f64>,
    reg: Regularizer,
) -> Result<GapReport> {
    if z.len() != op.codomain_dim() {
        return invalid("measurement length differs from the codomain");
    }
    let h = op.adjoint(p)?;
    let mut total = 0.0;
    let mut per_block = Vec::with_capacity(f.len());
    let mut max_dual: f64 = 0.0;
    for (fi, hi) in f.iter().zip(&h) {
        let val = reg.value(fi)?;
        total += val;
        per_block.push(fi.dot(hi) - val);
        max_dual = max_dual.max(reg.dual_norm(hi)?);
    }
    let residual = (op.apply(f)? - z).norm();
    Ok(GapReport {
        gap: total - p.dot(z),
        per_block,
        max_dual_norm: max_dual,
        dual_feasible: max_dual <= 1.0 + DUAL_FEAS_TOL,
        residual,
    })
}

fn prox_blocks(reg: Regularizer, blocks: &[DMatrix<f64>], tau: f64) -> Result<Vec<DMatrix<f64>>> {
    blocks.par_iter().map(|b| reg.prox(b, tau)).collect()
}

/// `min Σ‖F_i‖_* s.t. ΦF = z` by Douglas–Rachford splitting.
pub fn solve_equality_nnm(
    op: &AffineOperator,
    z: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<(Vec<DMatrix<f64>>, SolveReport)> {
    let proj = AffineProjector::new(op.matrix())?;
    solve_equality_with(op, &proj, z, Regularizer::Nuclear, opts)
}

/// Douglas–Rachford with a precomputed projector (reusable across data).
pub fn solve_equality_with(
    op: &AffineOperator,
    proj: &AffineProjector,
    z: &DVector<f64>,
    reg: Regularizer,
    opts: &SolverOptions,
) -> Result<(Vec<DMatrix<f64>>, SolveReport)> {
    if z.len() != op.codomain_dim() {
        return invalid("measurement length differs from the codomain");
    }
    let zn = z.norm();
    let tol_feas = opts.tol_feas * zn.max(f64::MIN_POSITIVE);
    let a = op.matrix();

    let (x0, _) = proj.project(&DVector::zeros(op.domain_dim()), z);
    let res0 = (a * &x0 - z).norm();
    if zn == 0.0 {
        let f = op.zeros();
        let report = SolveReport {
            iterations: 0,
            objective: 0.0,
            residual: 0.0,
            gap: 0.0,
            status: SolveStatus::Converged,
            dual: Some(DVector::zeros(z.len())),
            objective_trace: vec![0.0],
        };
        return Ok((f, report));
    }
    if res0 > tol_feas {
        log::warn!("measurements are not in the range of the operator (residual {res0:e})");
        let report = SolveReport {
            iterations: 0,
            objective: f64::NAN,
            residual: res0,
            gap: f64::NAN,
            status: SolveStatus::InfeasibleSuspected,
            dual: None,
            objective_trace: Vec::new(),
        };
        return Ok((op.unflatten(&x0), report));
    }

    let norm = op.opnorm_estimate();
    let gamma = opts.rho.unwrap_or(zn / norm);
    if !(gamma > 0.0) || !gamma.is_finite() {
        return invalid(format!("invalid step {gamma}"));
    }

    let mut y = DVector::zeros(op.domain_dim());
    let mut trace = Vec::new();
    let mut last = None;
    for it in 1..=opts.max_iter {
        let (x, mu) = proj.project(&y, z);
        let reflected = &x * 2.0 - &y;
        let w_blocks = prox_blocks(reg, &op.unflatten(&reflected), gamma)?;
        let w = op.flatten(&w_blocks)?;
        y += &w - &x;

        if it % opts.check_every.max(1) == 0 || it == opts.max_iter {
            let residual = (a * &w - z).norm();
            // (x − y_old)/γ = −Aᵀμ/γ
            let p = -&mu / gamma;
            let h = op.adjoint(&p)?;
            let mut scale: f64 = 1.0;
            for hi in &h {
                scale = scale.max(reg.dual_norm(hi)?);
            }
            let p = p / scale;
            let mut objective = 0.0;
            let mut pair_err: f64 = 0.0;
            for (wi, hi) in w_blocks.iter().zip(&h) {
                let val = reg.value(wi)?;
                objective += val;
                pair_err = pair_err.max((wi.dot(hi) / scale - val).abs());
            }
            let gap = objective - p.dot(z);
            trace.push(objective);
            let ok = residual <= tol_feas && gap.abs() <= opts.tol_gap * (1.0 + objective.abs()) && pair_err <= opts.tol_gap;
            last = Some((w_blocks, objective, residual, gap, p));
            if ok {
                let (f, objective, residual, gap, p) = last.expect("just set");
                log::debug!("Douglas–Rachford converged after {it} iterations");
                return Ok((
                    f,
                    SolveReport {
                        iterations: it,
                        objective,
                        residual,
                        gap,
                        status: SolveStatus::Converged,
                        dual: Some(p),
                        objective_trace: trace,
                    },
                ));
            }
        }
    }
    let Some((f, objective, residual, gap, p)) = last else {
        return invalid("max_iter must be positive");
    };
    log::warn!("Douglas–Rachford hit max_iter (residual {residual:e}, gap {gap:e})");
    Ok((
        f,
        SolveReport {
            iterations: opts.max_iter,
            objective,
            residual,
            gap,
            status: SolveStatus::MaxIter,
            dual: Some(p),
            objective_trace: trace,
        },
    ))
}

/// `min ½‖ΦF − z‖² + λΣ‖F_i‖_*` by accelerated forward–backward splitting.
pub fn solve_regularized_nnm(
    op: &AffineOperator,
    z: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(Vec<DMatrix<f64>>, SolveReport)> {
    solve_regularized_with(op, z, lambda, Regularizer::Nuclear, opts)
}

pub fn solve_regularized_with(
    op: &AffineOperator,
    z: &DVector<f64>,
    lambda: f64,
    reg: Regularizer,
    opts: &SolverOptions,
) -> Result<(Vec<DMatrix<f64>>, SolveReport)> {
    if !(lambda > 0.0) {
        return invalid(format!("λ must be positive, got {lambda}"));
    }
    if z.len() != op.codomain_dim() {
        return invalid("measurement length differs from the codomain");
    }
    let a = op.matrix();
    let lip = (op.opnorm_estimate() * (1.0 + 1e-3)).powi(2);
    if !(lip > 0.0) || !lip.is_finite() {
        return Err(Error::NumericFailure(format!("step size from operator norm {}", op.opnorm_estimate())));
    }
    let objective_of = |x: &DVector<f64>, blocks: &[DMatrix<f64>]| -> Result<f64> {
        let mut v = 0.5 * (a * x - z).norm_squared();
        for b in blocks {
            v += lambda * reg.value(b)?;
        }
        Ok(v)
    };

    let mut x = DVector::zeros(op.domain_dim());
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut trace = Vec::new();
    let tol = opts.tol_fixed_point * lambda;
    for it in 1..=opts.max_iter {
        let grad = a.tr_mul(&(a * &y - z));
        let step = &y - grad / lip;
        let xb = prox_blocks(reg, &op.unflatten(&step), lambda / lip)?;
        let xn = op.flatten(&xb)?;
        let fp = (&y - &xn).norm() * lip;
        let done = fp <= tol;
        if it % opts.check_every.max(1) == 0 || done || it == opts.max_iter {
            trace.push(objective_of(&xn, &xb)?);
        }
        if done || it == opts.max_iter {
            let objective = objective_of(&xn, &xb)?;
            let residual = (a * &xn - z).norm();
            let status = if done { SolveStatus::Converged } else { SolveStatus::MaxIter };
            if !done {
                log::warn!("forward–backward hit max_iter (fixed-point residual {fp:e})");
            }
            return Ok((
                xb,
                SolveReport {
                    iterations: it,
                    objective,
                    residual,
                    gap: f64::NAN,
                    status,
                    dual: None,
                    objective_trace: trace,
                },
            ));
        }
        if opts.momentum {
            // gradient-based adaptive restart
            if (&y - &xn).dot(&(&xn - &x)) > 0.0 {
                t = 1.0;
                y = xn.clone();
            } else {
                let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = &xn + (&xn - &x) * ((t - 1.0) / tn);
                t = tn;
            }
        } else {
            y = xn.clone();
        }
        x = xn;
    }
    invalid("max_iter must be positive")
}

/// `min ½‖Φ_fit F − z_fit‖² + λΣ‖F_i‖_* s.t. Φ_eq F = z_eq`, by three-operator
/// (Davis–Yin) splitting: projection, gradient step, singular value shrinkage.
pub fn solve_constrained_regularized_nnm(
    fit: &AffineOperator,
    z_fit: &DVector<f64>,
    eq: &AffineOperator,
    z_eq: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(Vec<DMatrix<f64>>, SolveReport)> {
    if !(lambda > 0.0) {
        return invalid(format!("λ must be positive, got {lambda}"));
    }
    if fit.domain_shape() != eq.domain_shape() {
        return invalid("fidelity and constraint operators act on different blocks");
    }
    let proj = AffineProjector::new(eq.matrix())?;
    solve_constrained_regularized_with(fit, z_fit, &proj, z_eq, lambda, opts)
}

/// As [`solve_constrained_regularized_nnm`] with a precomputed projector
/// onto `{Φ_eq F = z_eq}`.
pub fn solve_constrained_regularized_with(
    fit: &AffineOperator,
    z_fit: &DVector<f64>,
    proj: &AffineProjector,
    z_eq: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(Vec<DMatrix<f64>>, SolveReport)> {
    if !(lambda > 0.0) {
        return invalid(format!("λ must be positive, got {lambda}"));
    }
    let a = fit.matrix();
    let lip = (fit.opnorm_estimate() * (1.0 + 1e-3)).powi(2);
    let gamma = 1.0 / lip;
    let tol = opts.tol_fixed_point * lambda;
    let mut y = DVector::zeros(fit.domain_dim());
    let mut trace = Vec::new();
    for it in 1..=opts.max_iter {
        let (xg, _) = proj.project(&y, z_eq);
        let grad = a.tr_mul(&(a * &xg - z_fit));
        let arg = &xg * 2.0 - &y - grad * gamma;
        let xb = prox_blocks(Regularizer::Nuclear, &fit.unflatten(&arg), gamma * lambda)?;
        let xf = fit.flatten(&xb)?;
        let diff = &xf - &xg;
        y += &diff;
        let fp = diff.norm() / gamma;
        let done = fp <= tol;
        if it % opts.check_every.max(1) == 0 || done || it == opts.max_iter {
            let mut obj = 0.5 * (a * &xf - z_fit).norm_squared();
            for b in &xb {
                obj += lambda * lowrank::nuclear_norm(b)?;
            }
            trace.push(obj);
            if done || it == opts.max_iter {
                // report the constraint-feasible iterate
                let xb = fit.unflatten(&xg);
                let residual = (a * &xg - z_fit).norm();
                return Ok((
                    xb,
                    SolveReport {
                        iterations: it,
                        objective: obj,
                        residual,
                        gap: f64::NAN,
                        status: if done { SolveStatus::Converged } else { SolveStatus::MaxIter },
                        dual: None,
                        objective_trace: trace,
                    },
                ));
            }
        }
    }
    invalid("max_iter must be positive")
}

/// Exact or Tikhonov-type PSD trace minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdMode {
    Exact,
    Regularized { lambda: f64 },
}

/// Operator `X ↦ (⟨V_k, X⟩)_k` on one `n × n` block.
pub fn symmetric_measurement_operator(vs: &[DMatrix<f64>]) -> Result<AffineOperator> {
    let first = vs.first().ok_or_else(|| Error::InvalidArgument("no measurement matrices".into()))?;
    let n = first.nrows();
    let mut m = DMatrix::zeros(vs.len(), n * n);
    for (k, v) in vs.iter().enumerate() {
        if v.shape() != (n, n) {
            return invalid("measurement matrices differ in size");
        }
        if (v - v.transpose()).amax() > 1e-12 * v.amax().max(1.0) {
            return invalid(format!("measurement matrix {k} is not symmetric"));
        }
        m.row_mut(k).copy_from_slice(v.as_slice());
    }
    AffineOperator::from_dense(vec![(n, n)], m)
}

/// `min tr X s.t. ⟨V_k, X⟩ = z_k, X ⪰ 0`, or its regularized variant.
pub fn solve_psd_trace_min(
    vs: &[DMatrix<f64>],
    z: &DVector<f64>,
    mode: PsdMode,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, SolveReport)> {
    let op = symmetric_measurement_operator(vs)?;
    if z.len() != vs.len() {
        return invalid("one measurement per matrix is required");
    }
    let (mut blocks, report) = match mode {
        PsdMode::Exact => {
            let proj = AffineProjector::new(op.matrix())?;
            solve_equality_with(&op, &proj, z, Regularizer::PsdTrace, opts)?
        }
        PsdMode::Regularized { lambda } => solve_regularized_with(&op, z, lambda, Regularizer::PsdTrace, opts)?,
    };
    let x = blocks.remove(0);
    Ok(((&x + x.transpose()) * 0.5, report))
}
