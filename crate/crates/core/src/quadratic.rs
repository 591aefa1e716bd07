//! Finite-dimensional quadratic inverse problems `z_k = ⟨V_k x, x⟩` and
//! real phase retrieval, solved through the lift `X = xxᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::certify::{self, BoundReport, CertificateReport, TangentKind};
use crate::error::{invalid, Error, Result};
use crate::lowrank::{self, RankOneModel};
use crate::solvers::{self, AffineOperator, PsdMode, SolveReport, SolverOptions};

/// `xxᵀ`.
pub fn lift(x: &DVector<f64>) -> DMatrix<f64> {
    x * x.transpose()
}

#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    pub n: usize,
    pub measurements: Vec<DMatrix<f64>>,
    /// Sensing vectors when `V_k = v_k v_kᵀ`.
    pub sensing: Option<Vec<DVector<f64>>>,
    pub z: DVector<f64>,
    pub x_true: Option<DVector<f64>>,
}

impl QuadraticInstance {
    pub fn new(measurements: Vec<DMatrix<f64>>, z: DVector<f64>, x_true: Option<DVector<f64>>) -> Result<Self> {
        let n = match measurements.first() {
            Some(v) => v.nrows(),
            None => return invalid("at least one measurement is required"),
        };
        if z.len() != measurements.len() {
            return invalid("one value per measurement is required");
        }
        for (k, v) in measurements.iter().enumerate() {
            if v.shape() != (n, n) {
                return invalid("measurement matrices differ in size");
            }
            if (v - v.transpose()).amax() > 1e-12 * v.amax().max(1.0) {
                return invalid(format!("V_{k} is not symmetric"));
            }
        }
        if let Some(x) = &x_true {
            if x.len() != n {
                return invalid("ground truth has the wrong length");
            }
            for (k, v) in measurements.iter().enumerate() {
                let zk = x.dot(&(v * x));
                if (zk - z[k]).abs() > 1e-12 * zk.abs().max(1.0) {
                    return invalid(format!("z_{k} is inconsistent with the ground truth"));
                }
            }
        }
        Ok(QuadraticInstance { n, measurements, sensing: None, z, x_true })
    }

    /// `z_k = ⟨v_k, x⟩²`.
    pub fn from_sensing(sensing: Vec<DVector<f64>>, x_true: &DVector<f64>) -> Result<Self> {
        let vs: Vec<DMatrix<f64>> = sensing.iter().map(lift).collect();
        let z = DVector::from_iterator(sensing.len(), sensing.iter().map(|v| v.dot(x_true).powi(2)));
        let mut inst = Self::new(vs, z, Some(x_true.clone()))?;
        inst.sensing = Some(sensing);
        Ok(inst)
    }

    pub fn m(&self) -> usize {
        self.measurements.len()
    }

    pub fn operator(&self) -> Result<AffineOperator> {
        solvers::symmetric_measurement_operator(&self.measurements)
    }

    fn truth(&self) -> Result<&DVector<f64>> {
        self.x_true.as_ref().ok_or_else(|| Error::InvalidArgument("instance has no ground truth".into()))
    }

    /// `X† = x†x†ᵀ` as `(‖x†‖², x̂, x̂)`.
    pub fn model(&self) -> Result<RankOneModel> {
        let x = self.truth()?;
        RankOneModel::from_factors(x, x)
    }

    /// `z + δe/‖e‖` with Gaussian `e`.
    pub fn noisy_data(&self, delta: f64, seed: u64) -> Result<DVector<f64>> {
        if !(delta >= 0.0) {
            return invalid("delta must be nonnegative");
        }
        if delta == 0.0 {
            return Ok(self.z.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e: DVector<f64> = DVector::from_fn(self.m(), |_, _| StandardNormal.sample(&mut rng));
        let s = delta / e.norm();
        Ok(&self.z + e * s)
    }
}

/// Gaussian sensing vectors and a unit-norm Gaussian `x†`.
pub fn make_phase_retrieval(n: usize, m: usize, seed: u64) -> Result<QuadraticInstance> {
    if n == 0 || m == 0 {
        return invalid("n and m must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |k: usize| DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
    let mut x: DVector<f64> = gauss(n);
    while x.norm() == 0.0 {
        x = gauss(n);
    }
    x /= x.norm();
    let sensing = (0..m).map(|_| gauss(n)).collect();
    QuadraticInstance::from_sensing(sensing, &x)
}

#[derive(Debug, Clone)]
pub struct PhaseLiftRecovery {
    /// `√λ₁` times the leading eigenvector, largest-magnitude entry positive.
    pub x_hat: DVector<f64>,
    pub x_mat: DMatrix<f64>,
    pub report: SolveReport,
    /// `σ₂/σ₁` of the lifted solution.
    pub rank_ratio: f64,
}

impl PhaseLiftRecovery {
    /// `min(‖x̂ − x‖, ‖x̂ + x‖)`.
    pub fn sign_aligned_error(&self, x: &DVector<f64>) -> f64 {
        (&self.x_hat - x).norm().min((&self.x_hat + x).norm())
    }
}

/// PSD trace minimization on data `z`; `mode` selects the exact or the
/// regularized problem.
pub fn recover_phaselift(
    inst: &QuadraticInstance,
    z: &DVector<f64>,
    mode: PsdMode,
    opts: &SolverOptions,
) -> Result<PhaseLiftRecovery> {
    let (x, report) = solvers::solve_psd_trace_min(&inst.measurements, z, mode, opts)?;
    let eig = x.clone().symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let lam = eig.eigenvalues[k].max(0.0);
    let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
    let j = v.iamax();
    if v[j] < 0.0 {
        v = -v;
    }
    Ok(PhaseLiftRecovery {
        x_hat: v * lam.sqrt(),
        rank_ratio: lowrank::rank_ratio(&x)?,
        x_mat: x,
        report,
    })
}

/// Least-norm certificate over the symmetric tangent space at `x†x†ᵀ`.
pub fn certify_phaselift(inst: &QuadraticInstance, margin: f64) -> Result<CertificateReport> {
    let op = inst.operator()?;
    certify::precertificate_with(&op, &[inst.model()?], TangentKind::Symmetric, margin)
}

/// One noisy PhaseLift solve with its robustness bounds.
#[derive(Debug, Clone)]
pub struct NoisyPhaseLift {
    pub delta: f64,
    pub lifted_error: f64,
    pub recovery: PhaseLiftRecovery,
    pub bounds: Option<BoundReport>,
}

/// Regularized solve with `λ = cδ` on `z^δ = z + δe/‖e‖`; bounds are
/// evaluated when a certificate is supplied.
pub fn noisy_phaselift(
    inst: &QuadraticInstance,
    delta: f64,
    c: f64,
    seed: u64,
    cert: Option<&CertificateReport>,
    opts: &SolverOptions,
) -> Result<NoisyPhaseLift> {
    if !(delta > 0.0 && c > 0.0) {
        return invalid("need delta > 0 and c > 0");
    }
    let zd = inst.noisy_data(delta, seed)?;
    let rec = recover_phaselift(inst, &zd, PsdMode::Regularized { lambda: c * delta }, opts)?;
    let model = inst.model()?;
    let lifted_error = (&rec.x_mat - model.matrix()).norm();
    let bounds = match cert {
        Some(cr) => {
            let p = cr.p.as_ref().ok_or_else(|| Error::InvalidArgument("certificate has no dual vector".into()))?;
            let op = inst.operator()?;
            let measured = (&zd - &inst.z).norm();
            Some(certify::robustness_bounds(
                &op,
                std::slice::from_ref(&rec.x_mat),
                &[model],
                &cr.h,
                p,
                c * delta / measured,
                measured,
            )?)
        }
        None => None,
    };
    Ok(NoisyPhaseLift { delta, lifted_error, recovery: rec, bounds })
}
