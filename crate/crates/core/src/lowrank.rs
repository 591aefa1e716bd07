//! Nuclear-norm toolbox on whitened matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance on the equality parts of subdifferential membership.
pub const EQ_TOL: f64 = 1e-8;
/// Default strictness margin for `‖W‖ < 1`.
pub const DEFAULT_MARGIN: f64 = 1e-3;
/// Relative threshold for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD with singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        invalid("matrix has non-finite entries")
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD, computed by `faer` (the nalgebra 0.35 routine loses accuracy
/// in the singular vectors of rank-deficient inputs).
pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    check_finite(m)?;
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok(Svd { u: DMatrix::zeros(r, 0), s: DVector::zeros(0), v_t: DMatrix::zeros(0, c) });
    }
    let d = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::NumericFailure(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (d.U(), d.S(), d.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Ok(Svd {
        u: DMatrix::from_fn(r, k, |i, l| u[(i, order[l])]),
        s: DVector::from_fn(k, |l, _| s[order[l]]),
        v_t: DMatrix::from_fn(k, c, |l, j| v[(j, order[l])]),
    })
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let mut s = to_faer(m)
        .singular_values()
        .map_err(|e| Error::NumericFailure(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(DVector::from_vec(s))
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.sum())
}

pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.iter().fold(0.0, |a: f64, &b| a.max(b)))
}

/// Numerical rank with the relative threshold `σ_k > 1e-10 σ_1`.
pub fn numerical_rank(m: &DMatrix<f64>) -> Result<usize> {
    let s = singular_values(m)?;
    let top = s.iter().fold(0.0, |a: f64, &b| a.max(b));
    Ok(s.iter().filter(|&&x| top > 0.0 && x > RANK_TOL * top).count())
}

/// `σ₂/σ₁`, zero for matrices of rank at most one.
pub fn rank_ratio(m: &DMatrix<f64>) -> Result<f64> {
    let s = singular_values(m)?;
    if s.len() < 2 || s[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(s[1] / s[0])
}

/// Singular value soft-thresholding, the prox of `τ‖·‖_*`.
pub fn svt_prox(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) {
        return invalid(format!("threshold must be positive, got {tau}"));
    }
    let d = svd(m)?;
    let keep = d.s.iter().take_while(|&&s| s > tau).count();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for k in 0..keep {
        let s = d.s[k] - tau;
        out += (d.u.column(k) * s) * d.v_t.row(k);
    }
    Ok(out)
}

/// Eigenvalue soft-thresholding clipped at zero: the prox of
/// `τ tr(X) + ι_{X ⪰ 0}` on symmetric matrices.
pub fn psd_shrink(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return invalid("PSD prox needs a square matrix");
    }
    check_finite(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let n = sym.nrows();
    let e = sym
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericFailure("symmetric eigensolver did not converge".into()))?;
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = e.eigenvalues[k] - tau;
        if l > 0.0 {
            let c = e.eigenvectors.column(k);
            out += (c * l) * c.transpose();
        }
    }
    Ok(out)
}

/// Ground-truth lifted unknown `σ u vᵀ` in whitened coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneModel {
    pub sigma: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl RankOneModel {
    pub fn new(sigma: f64, u: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return invalid(format!("scale must be positive, got {sigma}"));
        }
        for (name, x) in [("u", &u), ("v", &v)] {
            if (x.norm() - 1.0).abs() > 1e-12 {
                return invalid(format!("{name} is not a unit vector (norm {})", x.norm()));
            }
        }
        Ok(RankOneModel { sigma, u, v })
    }

    /// Normalize raw factors: `a bᵀ = σ u vᵀ`.
    pub fn from_factors(a: &DVector<f64>, b: &DVector<f64>) -> Result<Self> {
        let (na, nb) = (a.norm(), b.norm());
        if !(na > 0.0 && nb > 0.0) {
            return Err(Error::DegenerateInput("zero factor".into()));
        }
        Self::new(na * nb, a / na, b / nb)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.len(), self.v.len())
    }

    /// `u vᵀ`.
    pub fn direction(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.direction() * self.sigma
    }

    fn check(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.shape() != self.shape() {
            return invalid(format!("matrix is {:?}, model is {:?}", m.shape(), self.shape()));
        }
        Ok(())
    }
}

/// `ûûᵀM + Mv̂v̂ᵀ − ûûᵀMv̂v̂ᵀ`.
pub fn project_tangent(m: &DMatrix<f64>, model: &RankOneModel) -> Result<DMatrix<f64>> {
    model.check(m)?;
    let (u, v) = (&model.u, &model.v);
    let utm = u.transpose() * m; // 1 x c
    let mv = m * v; // r x 1
    let umv = utm.dot(&v.transpose());
    Ok(u * &utm + &mv * v.transpose() - (u * v.transpose()) * umv)
}

/// `(I − ûûᵀ) M (I − v̂v̂ᵀ)`.
pub fn project_tangent_complement(m: &DMatrix<f64>, model: &RankOneModel) -> Result<DMatrix<f64>> {
    model.check(m)?;
    let (u, v) = (&model.u, &model.v);
    let left = m - u * (u.transpose() * m);
    Ok(&left - (&left * v) * v.transpose())
}

/// Orthonormal basis of `x⊥` (columns), from a Householder reflector
/// mapping `e₁` to `±x/‖x‖`.
pub fn orthogonal_complement(x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.len();
    let nx = x.norm();
    if !(nx > 0.0) {
        return Err(Error::DegenerateInput("zero vector has no complement".into()));
    }
    let mut w = x / nx;
    let s = if w[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += s;
    let nw = w.norm();
    w /= nw;
    let mut q = DMatrix::identity(n, n) - (&w * w.transpose()) * 2.0;
    // first column is ∓x̂; the rest span its complement
    q = q.columns(1, n - 1).into_owned();
    Ok(q)
}

/// The four equivalent descriptions of `∂‖·‖_*` at `σuvᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubdiffForm {
    /// `‖H‖ ≤ 1` and `⟨H, uvᵀ⟩ = 1`.
    Dual,
    /// `P_T(H) = uvᵀ` and `‖P_T⊥(H)‖ ≤ 1`.
    Projection,
    /// `H = uvᵀ + W`, `Wv = 0`, `Wᵀu = 0`, `‖W‖ ≤ 1`.
    Decomposition,
    /// `Hv = u`, `Hᵀu = v` and `|bᵀHa| ≤ 1` for unit `a ⊥ v`, `b ⊥ u`.
    Action,
}

impl SubdiffForm {
    pub const ALL: [SubdiffForm; 4] = [
        SubdiffForm::Dual,
        SubdiffForm::Projection,
        SubdiffForm::Decomposition,
        SubdiffForm::Action,
    ];
}

/// Outcome of a membership test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubdiffReport {
    pub holds: bool,
    /// Size of the violated equality part (zero when exact).
    pub equality_residual: f64,
    /// The norm compared against one.
    pub w_norm: f64,
}

/// `H` split as `uvᵀ + W`.
#[derive(Debug, Clone)]
pub struct SubdiffCertificate {
    pub h: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub w_norm: f64,
}

impl SubdiffCertificate {
    pub fn new(h: DMatrix<f64>, model: &RankOneModel) -> Result<Self> {
        model.check(&h)?;
        let w = &h - model.direction();
        let w_norm = operator_norm(&project_tangent_complement(&h, model)?)?;
        Ok(SubdiffCertificate { h, w, w_norm })
    }
}

/// Membership of `H` in the subdifferential at `model`, evaluated through
/// the chosen form. `strict` replaces `≤ 1` by `< 1 − margin`.
pub fn subdiff_check(
    h: &DMatrix<f64>,
    model: &RankOneModel,
    form: SubdiffForm,
    strict: bool,
) -> Result<SubdiffReport> {
    subdiff_check_with(h, model, form, strict, EQ_TOL, DEFAULT_MARGIN)
}

pub fn subdiff_check_with(
    h: &DMatrix<f64>,
    model: &RankOneModel,
    form: SubdiffForm,
    strict: bool,
    tol: f64,
    margin: f64,
) -> Result<SubdiffReport> {
    model.check(h)?;
    let (u, v) = (&model.u, &model.v);
    let (eq, w_norm) = match form {
        SubdiffForm::Dual => {
            let s = singular_values(h)?;
            let pairing = u.dot(&(h * v));
            let top = s.get(0).copied().unwrap_or(0.0);
            // the norm bound is an inequality; only its excess counts
            let excess = (top - 1.0).max(0.0);
            let eq = if excess > tol { excess } else { (pairing - 1.0).abs() };
            let w = if strict { s.get(1).copied().unwrap_or(0.0) } else { top };
            (eq, w)
        }
        SubdiffForm::Projection => {
            let eq = (project_tangent(h, model)? - model.direction()).norm();
            (eq, operator_norm(&project_tangent_complement(h, model)?)?)
        }
        SubdiffForm::Decomposition => {
            let w = h - model.direction();
            let eq = (&w * v).norm().max((w.transpose() * u).norm());
            (eq, operator_norm(&w)?)
        }
        SubdiffForm::Action => {
            let eq = (h * v - u).norm().max((h.transpose() * u - v).norm());
            let bu = orthogonal_complement(u)?;
            let bv = orthogonal_complement(v)?;
            (eq, operator_norm(&(bu.transpose() * h * bv))?)
        }
    };
    let holds = eq <= tol && if strict { w_norm < 1.0 - margin } else { w_norm <= 1.0 + tol };
    Ok(SubdiffReport { holds, equality_residual: eq, w_norm })
}

/// `‖F‖_* − ‖F_ref‖_* − ⟨H, F − F_ref⟩`.
pub fn bregman_divergence(f: &DMatrix<f64>, f_ref: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    if f.shape() != f_ref.shape() || f.shape() != h.shape() {
        return invalid("Bregman divergence arguments differ in shape");
    }
    Ok(nuclear_norm(f)? - nuclear_norm(f_ref)? - h.dot(&(f - f_ref)))
}

/// Sum of blockwise Bregman divergences.
pub fn bregman_divergence_blocks(
    f: &[DMatrix<f64>],
    f_ref: &[DMatrix<f64>],
    h: &[DMatrix<f64>],
) -> Result<f64> {
    if f.len() != f_ref.len() || f.len() != h.len() {
        return invalid("block counts differ");
    }
    let mut d = 0.0;
    for i in 0..f.len() {
        d += bregman_divergence(&f[i], &f_ref[i], &h[i])?;
    }
    Ok(d)
}

/// Flip signs so that the first significant entry of `u` is positive.
pub(crate) fn canonical_sign(u: &mut DVector<f64>, v: &mut DVector<f64>) {
    let big = u.amax();
    if let Some(first) = u.iter().find(|x| x.abs() > 1e-6 * big) {
        if *first < 0.0 {
            u.neg_mut();
            v.neg_mut();
        }
    }
}

/// Top singular triple with a deterministic sign.
pub fn leading_rank_one(m: &DMatrix<f64>) -> Result<RankOneModel> {
    if m.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateInput("zero matrix has no leading triple".into()));
    }
    let d = svd(m)?;
    let mut u = d.u.column(0).into_owned();
    let mut v = d.v_t.row(0).transpose();
    u /= u.norm();
    v /= v.norm();
    canonical_sign(&mut u, &mut v);
    RankOneModel::new(d.s[0], u, v)
}
