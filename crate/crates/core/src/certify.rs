//! Dual certificates: pre-certificates, NDSC checks, injectivity on the
//! tangent space, and the noisy-recovery bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lowrank::{self, orthogonal_complement, RankOneModel, DEFAULT_MARGIN, EQ_TOL, RANK_TOL};
use crate::solvers::AffineOperator;

/// Which tangent space parameterization to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentKind {
    /// `{u aᵀ} ∪ {b vᵀ : b ⊥ u}`, dimension `rows + cols − 1`.
    General,
    /// `{u aᵀ + a uᵀ}` for square models with `u = v`, dimension `n`.
    /// Operators built from symmetric matrices vanish on the antisymmetric
    /// part of `T`, so only this half can be injective.
    Symmetric,
}

/// Orthonormal basis of the tangent space, one column per direction,
/// matrices vectorized column-major.
pub fn tangent_basis(model: &RankOneModel, kind: TangentKind) -> Result<DMatrix<f64>> {
    let (r, c) = model.shape();
    let (u, v) = (&model.u, &model.v);
    match kind {
        TangentKind::General => {
            let bu = orthogonal_complement(u)?;
            let mut e = DMatrix::zeros(r * c, r + c - 1);
            for k in 0..c {
                e.column_mut(k).rows_mut(k * r, r).copy_from(u);
            }
            for j in 0..r - 1 {
                let b = bu.column(j);
                let mut col = e.column_mut(c + j);
                for k in 0..c {
                    col.rows_mut(k * r, r).copy_from(&(b * v[k]));
                }
            }
            Ok(e)
        }
        TangentKind::Symmetric => {
            if r != c || (u - v).amax() > 1e-12 {
                return invalid("symmetric tangent basis needs u = v");
            }
            let n = r;
            let bu = orthogonal_complement(u)?;
            let mut e = DMatrix::zeros(n * n, n);
            let uu = u * u.transpose();
            e.column_mut(0).copy_from_slice(uu.as_slice());
            let s = std::f64::consts::FRAC_1_SQRT_2;
            for j in 0..n - 1 {
                let b = bu.column(j);
                let m = (u * b.transpose() + b * u.transpose()) * s;
                e.column_mut(j + 1).copy_from_slice(m.as_slice());
            }
            Ok(e)
        }
    }
}

fn check_models(op: &AffineOperator, models: &[RankOneModel]) -> Result<()> {
    if models.len() != op.domain_shape().len() {
        return invalid(format!("{} models for {} blocks", models.len(), op.domain_shape().len()));
    }
    for (i, (m, s)) in models.iter().zip(op.domain_shape()).enumerate() {
        if m.shape() != *s {
            return invalid(format!("model {i} is {:?}, block is {:?}", m.shape(), s));
        }
    }
    Ok(())
}

/// `Φ` restricted to `T = T₁ × … × T_N`, in orthonormal tangent coordinates.
/// Also returns the coordinates of the target `(u_i v_iᵀ)_i`.
pub fn tangent_matrix(
    op: &AffineOperator,
    models: &[RankOneModel],
    kind: TangentKind,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_models(op, models)?;
    let bases: Vec<DMatrix<f64>> = models.iter().map(|m| tangent_basis(m, kind)).collect::<Result<_>>()?;
    let dim: usize = bases.iter().map(|e| e.ncols()).sum();
    let mut b = DMatrix::zeros(op.codomain_dim(), dim);
    let mut t = DVector::zeros(dim);
    let mut col = 0;
    for (i, e) in bases.iter().enumerate() {
        let k = e.ncols();
        b.columns_mut(col, k).copy_from(&(op.block_columns(i) * e));
        let target = models[i].direction();
        t.rows_mut(col, k).copy_from(&e.tr_mul(&DVector::from_column_slice(target.as_slice())));
        col += k;
    }
    Ok((b, t))
}

fn singular_extremes(b: &DMatrix<f64>) -> Result<(f64, f64)> {
    if b.ncols() == 0 {
        return Ok((0.0, 0.0));
    }
    if b.nrows() < b.ncols() {
        // more unknowns than measurements: not injective
        let s = lowrank::singular_values(b)?;
        return Ok((s.max(), 0.0));
    }
    if b.nrows() * b.ncols() <= 4_000_000 {
        let s = lowrank::singular_values(b)?;
        Ok((s.max(), s.min()))
    } else {
        let n = b.tr_mul(b);
        let l = n
            .try_symmetric_eigen(f64::EPSILON, 0)
            .ok_or_else(|| Error::NumericFailure("eigensolver did not converge".into()))?
            .eigenvalues;
        Ok((l.max().max(0.0).sqrt(), l.min().max(0.0).sqrt()))
    }
}

/// Smallest singular value of `Φ|_T`.
pub fn tangent_injectivity(op: &AffineOperator, models: &[RankOneModel], kind: TangentKind) -> Result<f64> {
    let (b, _) = tangent_matrix(op, models, kind)?;
    Ok(singular_extremes(&b)?.1)
}

/// Whether `α ↦ Φ(α_i u_i v_iᵀ)` has full column rank.
pub fn cone_injectivity(op: &AffineOperator, models: &[RankOneModel]) -> Result<bool> {
    check_models(op, models)?;
    let n = models.len();
    let mut m = DMatrix::zeros(op.codomain_dim(), n);
    for (i, md) in models.iter().enumerate() {
        let d = md.direction();
        m.set_column(i, &(op.block_columns(i) * DVector::from_column_slice(d.as_slice())));
    }
    if op.codomain_dim() < n {
        return Ok(false);
    }
    let s = lowrank::singular_values(&m)?;
    let top = s.max();
    Ok(top > 0.0 && s.min() > RANK_TOL * top)
}

/// Certificate data for a list of blocks.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub p: Option<DVector<f64>>,
    pub h: Vec<DMatrix<f64>>,
    pub tangent_residuals: Vec<f64>,
    pub w_norms: Vec<f64>,
    pub ndsc_pass: bool,
    pub margin: f64,
    pub sigma_min: Option<f64>,
}

/// Serializable digest of a [`CertificateReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub ndsc_pass: bool,
    pub margin: f64,
    pub w_norms: Vec<f64>,
    pub tangent_residuals: Vec<f64>,
    pub sigma_min: Option<f64>,
    pub p_norm: Option<f64>,
}

impl CertificateReport {
    pub fn max_w_norm(&self) -> f64 {
        self.w_norms.iter().fold(0.0, |a: f64, &b| a.max(b))
    }

    pub fn max_tangent_residual(&self) -> f64 {
        self.tangent_residuals.iter().fold(0.0, |a: f64, &b| a.max(b))
    }

    pub fn p_norm(&self) -> Option<f64> {
        self.p.as_ref().map(|p| p.norm())
    }

    pub fn summary(&self) -> CertificateSummary {
        CertificateSummary {
            ndsc_pass: self.ndsc_pass,
            margin: self.margin,
            w_norms: self.w_norms.clone(),
            tangent_residuals: self.tangent_residuals.clone(),
            sigma_min: self.sigma_min,
            p_norm: self.p_norm(),
        }
    }
}

/// Tangent residuals and `‖P_T⊥ H_i‖` per block; passes with a strict margin.
pub fn ndsc_verify(h: &[DMatrix<f64>], models: &[RankOneModel], margin: f64) -> Result<CertificateReport> {
    if h.len() != models.len() {
        return invalid("block and model counts differ");
    }
    let mut res = Vec::with_capacity(h.len());
    let mut wn = Vec::with_capacity(h.len());
    for (hi, m) in h.iter().zip(models) {
        res.push((lowrank::project_tangent(hi, m)? - m.direction()).norm());
        wn.push(lowrank::operator_norm(&lowrank::project_tangent_complement(hi, m)?)?);
    }
    let ndsc_pass = res.iter().all(|&r| r <= EQ_TOL) && wn.iter().all(|&w| w < 1.0 - margin);
    Ok(CertificateReport {
        p: None,
        h: h.to_vec(),
        tangent_residuals: res,
        w_norms: wn,
        ndsc_pass,
        margin,
        sigma_min: None,
    })
}

/// Least-norm `p` with `P_T(Φ*p) = (u_i v_iᵀ)_i`.
pub fn precertificate(op: &AffineOperator, models: &[RankOneModel]) -> Result<CertificateReport> {
    precertificate_with(op, models, TangentKind::General, DEFAULT_MARGIN)
}

pub fn precertificate_with(
    op: &AffineOperator,
    models: &[RankOneModel],
    kind: TangentKind,
    margin: f64,
) -> Result<CertificateReport> {
    let (b, t) = tangent_matrix(op, models, kind)?;
    let (smax, smin) = singular_extremes(&b)?;
    if !(smax > 0.0) || smin <= 1e-8 * smax {
        return Err(Error::DegenerateCertificate { sigma_min: smin });
    }
    // p = B (BᵀB)⁻¹ t, refined against the residual of Bᵀp = t
    let gram = b.tr_mul(&b);
    let chol = gram
        .cholesky()
        .ok_or(Error::DegenerateCertificate { sigma_min: smin })?;
    let mut coef = chol.solve(&t);
    for _ in 0..2 {
        let r = &t - b.tr_mul(&(&b * &coef));
        coef += chol.solve(&r);
    }
    let p = &b * coef;
    let h = op.adjoint(&p)?;
    let mut rep = ndsc_verify(&h, models, margin)?;
    rep.p = Some(p);
    rep.sigma_min = Some(smin);
    Ok(rep)
}

/// Measured quantities and bounds of the noisy-recovery estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub c: f64,
    pub p_norm: f64,
    /// `D_H(F^δ, F†)`.
    pub bregman: f64,
    pub bregman_bound: f64,
    /// `‖ΦF^δ − ΦF†‖`.
    pub prediction: f64,
    pub prediction_bound: f64,
    /// `Σ‖P_{T_i⊥}(F^δ − F†)_i‖_*`.
    pub complement_mass: f64,
    pub complement_bound: f64,
    pub holds: bool,
}

pub const BOUND_SLACK: f64 = 1e-9;

/// Evaluate `D_H ≤ (1+c‖p‖)²δ/(2c)`, `‖Φ(F^δ−F†)‖ ≤ 2(1+c‖p‖)δ` and
/// `Σ‖P_T⊥(F^δ−F†)‖ ≤ D_H/(1 − max‖W_i‖)`.
///
/// `delta` must bound the data error `‖z^δ − z‖` and the solve must use
/// `λ = c·delta`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_bounds(
    op: &AffineOperator,
    f_delta: &[DMatrix<f64>],
    models: &[RankOneModel],
    h: &[DMatrix<f64>],
    p: &DVector<f64>,
    c: f64,
    delta: f64,
) -> Result<BoundReport> {
    if f_delta.len() != models.len() || h.len() != models.len() {
        return invalid("block counts differ");
    }
    if !(delta >= 0.0) || !(c > 0.0) {
        return invalid("need delta ≥ 0 and c > 0");
    }
    let f_ref: Vec<DMatrix<f64>> = models.iter().map(|m| m.matrix()).collect();
    let bregman = lowrank::bregman_divergence_blocks(f_delta, &f_ref, h)?;
    let diff: Vec<DMatrix<f64>> = f_delta.iter().zip(&f_ref).map(|(a, b)| a - b).collect();
    let prediction = op.apply(&diff)?.norm();
    let pn = p.norm();
    let bregman_bound = (1.0 + c * pn).powi(2) * delta / (2.0 * c);
    let prediction_bound = 2.0 * (1.0 + c * pn) * delta;
    let mut complement_mass = 0.0;
    let mut wmax: f64 = 0.0;
    for ((d, m), hi) in diff.iter().zip(models).zip(h) {
        complement_mass += lowrank::nuclear_norm(&lowrank::project_tangent_complement(d, m)?)?;
        wmax = wmax.max(lowrank::operator_norm(&lowrank::project_tangent_complement(hi, m)?)?);
    }
    let complement_bound = if wmax < 1.0 { bregman.max(0.0) / (1.0 - wmax) } else { f64::INFINITY };
    let holds = bregman <= bregman_bound + BOUND_SLACK
        && prediction <= prediction_bound + BOUND_SLACK
        && complement_mass <= complement_bound + BOUND_SLACK;
    Ok(BoundReport {
        delta,
        c,
        p_norm: pn,
        bregman,
        bregman_bound,
        prediction,
        prediction_bound,
        complement_mass,
        complement_bound,
        holds,
    })
}
