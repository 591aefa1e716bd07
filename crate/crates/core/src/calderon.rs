//! Boundary measurements on a 2-D grid: recover `q` in `−Δu + qu = 0` from
//! Dirichlet-to-Neumann data for finitely many boundary functions `f_i`.
//!
//! Each measurement is lifted to `F_i = u_i ⊗ q ∈ H¹(Ω; 𝒲)` with `𝒲` a
//! finite-dimensional space of continuous functions. A field is stored as a
//! coefficient matrix `C_i` (grid nodes × `m`), `F_i(x, ·) = Σ_k C_i[x,k] ω_k`.
//!
//! The discretization is finite-volume: `K` is the grid stiffness matrix and
//! `A` the nodal areas. A state satisfies `(K + QA)u = 0` at interior nodes.
//! Its flux at a boundary node `b` is `[(Ku)_b + q_b A_b u_b] / w_b`, with
//! `w_b` the boundary weight, so that `Σ_b w_b g_b φ_b = φᵀ(K + QA)u` for
//! every grid function `φ` (the discrete Green identity).

use std::ops::Range;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{self, CertificateReport, TangentKind};
use crate::error::{invalid, Error, Result};
use crate::hilbert::{assemble_inner_product, BivariateField, Grid2D, GridRef, InnerProduct, Kind};
use crate::lowrank::{self, RankOneModel, DEFAULT_MARGIN};
use crate::solvers::{self, AffineOperator, AffineProjector, Regularizer, SolveReport, SolverOptions};

/// L²-orthonormal basis of `𝒲`, sampled at the grid nodes.
#[derive(Debug, Clone)]
pub struct BasisW {
    pub m: usize,
    /// One column per basis function.
    pub omega: DMatrix<f64>,
    /// `∫ω_k`.
    pub integrals: DVector<f64>,
}

impl BasisW {
    /// Orthonormalize nodal samples (one column per function) in the
    /// quadrature `L²` product.
    pub fn from_samples(grid: &Grid2D, raw: &DMatrix<f64>) -> Result<Self> {
        if raw.nrows() != grid.len() || raw.ncols() == 0 {
            return invalid("samples must have one row per node and at least one column");
        }
        let a = &grid.interior_weights;
        let g = raw.tr_mul(&DMatrix::from_diagonal(a)) * raw;
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::DegenerateInput("basis samples are linearly dependent".into()))?;
        // omega = raw L⁻ᵀ
        let linv_t = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(raw.ncols(), raw.ncols()))
            .ok_or_else(|| Error::NumericFailure("triangular solve failed".into()))?
            .transpose();
        let omega = raw * linv_t;
        let integrals = omega.tr_mul(a);
        Ok(BasisW { m: raw.ncols(), omega, integrals })
    }

    /// Tensor-product hats on a uniform `per_side × per_side` coarse mesh
    /// whose corners are those of the domain. `per_side ≥ 2`; the span
    /// contains the constants.
    pub fn bilinear_hats(grid: &Grid2D, per_side: usize) -> Result<Self> {
        Self::from_samples(grid, &hat_samples(grid, per_side)?)
    }

    pub fn gram(&self, grid: &Grid2D) -> DMatrix<f64> {
        self.omega.tr_mul(&DMatrix::from_diagonal(&grid.interior_weights)) * &self.omega
    }

    /// Nodal values of `Σ c_k ω_k`.
    pub fn evaluate(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.omega * coeffs
    }

    /// `L²` projection coefficients of nodal values.
    pub fn project(&self, grid: &Grid2D, values: &DVector<f64>) -> DVector<f64> {
        self.omega.tr_mul(&grid.interior_weights.component_mul(values))
    }
}

/// Raw hat samples, one column per coarse node (row-major in the coarse mesh).
pub fn hat_samples(grid: &Grid2D, per_side: usize) -> Result<DMatrix<f64>> {
    if per_side < 2 {
        return invalid("need at least two hats per side");
    }
    let lx = (grid.nx - 1) as f64 * grid.hx;
    let ly = (grid.ny - 1) as f64 * grid.hy;
    let cells = (per_side - 1) as f64;
    let hat = |t: f64, c: f64| (1.0 - (t * cells - c).abs()).max(0.0);
    let mut raw = DMatrix::zeros(grid.len(), per_side * per_side);
    for j in 0..per_side {
        for i in 0..per_side {
            let col = j * per_side + i;
            for k in 0..grid.len() {
                let (x, y) = grid.coords(k);
                raw[(k, col)] = hat((x - grid.x0) / lx, i as f64) * hat((y - grid.y0) / ly, j as f64);
            }
        }
    }
    Ok(raw)
}

/// Dirichlet data `f_i` on the boundary nodes, orthonormal in the
/// boundary-weighted `ℓ²` product.
#[derive(Debug, Clone)]
pub struct BoundaryBasis {
    pub count: usize,
    /// Boundary nodes × `count`.
    pub f: DMatrix<f64>,
    /// `min |f₁|`.
    pub f1_floor: f64,
}

impl BoundaryBasis {
    /// Gram–Schmidt in the weighted product, in column order.
    pub fn from_values(grid: &Grid2D, raw: &DMatrix<f64>) -> Result<Self> {
        let nb = grid.boundary_index.len();
        if raw.nrows() != nb || raw.ncols() == 0 {
            return invalid("boundary data must have one row per boundary node");
        }
        let w = &grid.boundary_weights;
        let ip = |a: &DVector<f64>, b: &DVector<f64>| a.component_mul(w).dot(b);
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(raw.ncols());
        for j in 0..raw.ncols() {
            let mut v: DVector<f64> = raw.column(j).into_owned();
            let n0 = ip(&v, &v).sqrt();
            for _ in 0..2 {
                for c in &cols {
                    let s = ip(c, &v);
                    v -= c * s;
                }
            }
            let n = ip(&v, &v).sqrt();
            if !(n > 1e-10 * n0) {
                return Err(Error::DegenerateInput(format!("boundary function {j} is dependent on the previous ones")));
            }
            cols.push(v / n);
        }
        let f = DMatrix::from_columns(&cols);
        let f1_floor = f.column(0).iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        if !(f1_floor > 0.0) {
            return Err(Error::DegenerateInput("f₁ must be bounded away from zero".into()));
        }
        Ok(BoundaryBasis { count: f.ncols(), f, f1_floor })
    }

    /// `1, cos(2πs/P), sin(2πs/P), cos(4πs/P), …` in arc length `s`.
    pub fn trigonometric(grid: &Grid2D, count: usize) -> Result<Self> {
        let nb = grid.boundary_index.len();
        if count == 0 || count > nb {
            return invalid(format!("need 1 ≤ count ≤ {nb}"));
        }
        let p = grid.perimeter();
        let raw = DMatrix::from_fn(nb, count, |b, j| {
            let s = grid.boundary_arclength[b];
            let k = j.div_ceil(2) as f64;
            match j {
                0 => 1.0,
                _ if j % 2 == 1 => (2.0 * std::f64::consts::PI * k * s / p).cos(),
                _ => (2.0 * std::f64::consts::PI * k * s / p).sin(),
            }
        });
        Self::from_values(grid, &raw)
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.f.column(i).into_owned()
    }

    /// The first `n` functions.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.count {
            return invalid(format!("cannot keep {n} of {} boundary functions", self.count));
        }
        Ok(BoundaryBasis { count: n, f: self.f.columns(0, n).into_owned(), f1_floor: self.f1_floor })
    }
}

/// Factored interior system `(K + QA)_II` for one potential.
#[derive(Debug, Clone)]
pub struct SchrodingerSolver2D {
    grid: Grid2D,
    k: Arc<DMatrix<f64>>,
    q: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl SchrodingerSolver2D {
    pub fn new(grid: &Grid2D, q: &DVector<f64>) -> Result<Self> {
        Self::with_stiffness(grid, Arc::new(grid.stiffness()), q)
    }

    pub fn with_stiffness(grid: &Grid2D, k: Arc<DMatrix<f64>>, q: &DVector<f64>) -> Result<Self> {
        if q.len() != grid.len() {
            return invalid("potential must have one value per node");
        }
        if q.iter().any(|x| !x.is_finite()) {
            return invalid("potential is not finite");
        }
        let ii = &grid.interior_index;
        let a = &grid.interior_weights;
        let mut m = k.select_rows(ii.iter()).select_columns(ii.iter());
        for (r, &node) in ii.iter().enumerate() {
            m[(r, r)] += q[node] * a[node];
        }
        let ev = m.clone().symmetric_eigenvalues();
        let top = ev.amax();
        let low = ev.iter().fold(f64::INFINITY, |s, x| s.min(x.abs()));
        if !(low > 1e-10 * top) {
            return Err(Error::EigenvalueHit(format!(
                "0 is (numerically) a Dirichlet eigenvalue of −Δ+q: |λ|min = {low:e}"
            )));
        }
        Ok(SchrodingerSolver2D { grid: grid.clone(), k, q: q.clone(), lu: m.lu() })
    }

    fn interior_solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::EigenvalueHit("singular interior system".into()))
    }

    /// State with Dirichlet data `f` (boundary order).
    pub fn solve(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        let g = &self.grid;
        if f.len() != g.boundary_index.len() {
            return invalid("boundary data length differs from the boundary");
        }
        let mut u = DVector::zeros(g.len());
        for (b, &node) in g.boundary_index.iter().enumerate() {
            u[node] = f[b];
        }
        let ku = &*self.k * &u;
        let rhs = DVector::from_iterator(g.interior_index.len(), g.interior_index.iter().map(|&i| -ku[i]));
        let ui = self.interior_solve(&rhs)?;
        for (r, &node) in g.interior_index.iter().enumerate() {
            u[node] = ui[r];
        }
        Ok(u)
    }

    /// Zero-boundary solution of `(K + QA)v = −A s` at interior nodes,
    /// i.e. `−Δv + qv = −s`.
    pub fn solve_source(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let g = &self.grid;
        let a = &g.interior_weights;
        let rhs = DVector::from_iterator(g.interior_index.len(), g.interior_index.iter().map(|&i| -a[i] * s[i]));
        let vi = self.interior_solve(&rhs)?;
        let mut v = DVector::zeros(g.len());
        for (r, &node) in g.interior_index.iter().enumerate() {
            v[node] = vi[r];
        }
        Ok(v)
    }

    /// `[(K u)_b + q_b A_b u_b + A_b s_b] / w_b`; `s` is the source term
    /// of the equation `u` solves (zero for states).
    pub fn flux(&self, u: &DVector<f64>, s: Option<&DVector<f64>>) -> DVector<f64> {
        let g = &self.grid;
        let ku = &*self.k * u;
        DVector::from_iterator(
            g.boundary_index.len(),
            g.boundary_index.iter().enumerate().map(|(b, &node)| {
                let a = g.interior_weights[node];
                let src = s.map_or(0.0, |s| s[node]);
                (ku[node] + self.q[node] * a * u[node] + a * src) / g.boundary_weights[b]
            }),
        )
    }
}

pub fn solve_schrodinger_2d(grid: &Grid2D, q: &DVector<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    SchrodingerSolver2D::new(grid, q)?.solve(f)
}

/// Discrete Dirichlet-to-Neumann map applied to `f`.
pub fn dtn_flux(grid: &Grid2D, q: &DVector<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let s = SchrodingerSolver2D::new(grid, q)?;
    Ok(s.flux(&s.solve(f)?, None))
}

/// Ground truth and forward data of a boundary-measurement problem.
#[derive(Debug, Clone)]
pub struct CalderonProblem {
    pub grid: Grid2D,
    pub w: BasisW,
    pub bdry: BoundaryBasis,
    pub q_coeffs: DVector<f64>,
    pub q_nodal: DVector<f64>,
    pub int_q: f64,
    /// `u_i†` at every node.
    pub states: Vec<DVector<f64>>,
    /// `Λ_{q†} f_i`.
    pub fluxes: Vec<DVector<f64>>,
    /// Harmonic extensions `f̃_i`.
    pub harmonic: Vec<DVector<f64>>,
    /// `Λ_0 f_i`.
    pub harmonic_fluxes: Vec<DVector<f64>>,
    pub h1: Arc<InnerProduct>,
    pub wspace: Arc<InnerProduct>,
    pub stiffness: Arc<DMatrix<f64>>,
}

/// Codomain layout of the lifted operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalderonLayout {
    pub phi1: Range<usize>,
    pub phi2: Range<usize>,
    pub phi3: Range<usize>,
    /// `(i, j)` with `i < j`, in the order of the `Φ₃` rows.
    pub pairs: Vec<(usize, usize)>,
}

impl CalderonProblem {
    pub fn new(grid: &Grid2D, w: BasisW, bdry: BoundaryBasis, q_coeffs: DVector<f64>) -> Result<Self> {
        if q_coeffs.len() != w.m {
            return invalid("q coefficients must match dim 𝒲");
        }
        if w.omega.nrows() != grid.len() || bdry.f.nrows() != grid.boundary_index.len() {
            return invalid("bases do not match the grid");
        }
        let stiffness = Arc::new(grid.stiffness());
        let q_nodal = w.evaluate(&q_coeffs);
        let solver = SchrodingerSolver2D::with_stiffness(grid, stiffness.clone(), &q_nodal)?;
        let laplace = SchrodingerSolver2D::with_stiffness(grid, stiffness.clone(), &DVector::zeros(grid.len()))?;
        let per: Vec<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> = (0..bdry.count)
            .into_par_iter()
            .map(|i| {
                let f = bdry.column(i);
                let u = solver.solve(&f)?;
                let g = solver.flux(&u, None);
                let h = laplace.solve(&f)?;
                let gh = laplace.flux(&h, None);
                Ok((u, g, h, gh))
            })
            .collect::<Result<_>>()?;
        let mut states = Vec::new();
        let mut fluxes = Vec::new();
        let mut harmonic = Vec::new();
        let mut harmonic_fluxes = Vec::new();
        for (u, g, h, gh) in per {
            states.push(u);
            fluxes.push(g);
            harmonic.push(h);
            harmonic_fluxes.push(gh);
        }
        Ok(CalderonProblem {
            grid: grid.clone(),
            int_q: q_coeffs.dot(&w.integrals),
            h1: Arc::new(assemble_inner_product(GridRef::Two(grid), Kind::H1)?),
            wspace: Arc::new(InnerProduct::identity(w.m, None)?),
            w,
            bdry,
            q_coeffs,
            q_nodal,
            states,
            fluxes,
            harmonic,
            harmonic_fluxes,
            stiffness,
        })
    }

    /// Unit square with `n × n` nodes, `per_side²` hats and `count`
    /// trigonometric boundary functions; `q†` given by its hat values.
    pub fn unit_square(n: usize, per_side: usize, count: usize, hat_values: &[f64]) -> Result<Self> {
        let grid = Grid2D::unit_square(n)?;
        let raw = hat_samples(&grid, per_side)?;
        if hat_values.len() != raw.ncols() {
            return invalid(format!("need {} hat values", raw.ncols()));
        }
        let w = BasisW::from_samples(&grid, &raw)?;
        let nodal = raw * DVector::from_column_slice(hat_values);
        let q = w.project(&grid, &nodal);
        let bdry = BoundaryBasis::trigonometric(&grid, count)?;
        Self::new(&grid, w, bdry, q)
    }

    /// Same potential with only the first `count` measurements.
    pub fn with_measurement_count(&self, count: usize) -> Result<Self> {
        let mut p = self.clone();
        p.bdry = self.bdry.truncate(count)?;
        p.states.truncate(count);
        p.fluxes.truncate(count);
        p.harmonic.truncate(count);
        p.harmonic_fluxes.truncate(count);
        Ok(p)
    }

    pub fn count(&self) -> usize {
        self.bdry.count
    }

    pub fn nb(&self) -> usize {
        self.grid.boundary_index.len()
    }

    pub fn layout(&self) -> CalderonLayout {
        let (n, nb, nodes, m) = (self.count(), self.nb(), self.grid.len(), self.w.m);
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
        let p1 = n * nb;
        let p2 = p1 + n * nodes;
        let p3 = p2 + pairs.len() * nb * m;
        CalderonLayout { phi1: 0..p1, phi2: p1..p2, phi3: p2..p3, pairs }
    }

    /// `C_i† = u_i† ⊗ q†` as fields in `H¹ ⊗ 𝒲`.
    pub fn truth_stack(&self) -> Vec<BivariateField> {
        self.states
            .iter()
            .map(|u| {
                BivariateField::rank_one(self.h1.clone(), self.wspace.clone(), u, &self.q_coeffs)
                    .expect("shapes agree by construction")
            })
            .collect()
    }

    pub fn models(&self) -> Result<Vec<RankOneModel>> {
        self.states
            .iter()
            .map(|u| RankOneModel::from_factors(&self.h1.whiten_vec(u), &self.q_coeffs))
            .collect()
    }

    fn sqrt_bw(&self) -> DVector<f64> {
        self.grid.boundary_weights.map(f64::sqrt)
    }

    /// Noiseless data with `Φ₁` perturbed by `δe/‖e‖` when `noise` is given.
    pub fn measurements(&self, noise: Option<(f64, u64)>) -> Result<CalderonMeasurements> {
        let lay = self.layout();
        let nb = self.nb();
        let nodes = self.grid.len();
        let sw = self.sqrt_bw();
        let mut z = DVector::zeros(lay.phi3.end);
        for i in 0..self.count() {
            let d = (&self.fluxes[i] - &self.harmonic_fluxes[i]).component_mul(&sw);
            z.rows_mut(i * nb, nb).copy_from(&d);
            let z2 = self.h1.whiten_vec(&(&self.harmonic[i] * self.int_q));
            z.rows_mut(lay.phi2.start + i * nodes, nodes).copy_from(&z2);
        }
        let (delta, seed) = noise.unwrap_or((0.0, 0));
        if !(delta >= 0.0) {
            return invalid("delta must be nonnegative");
        }
        let mut data_error = 0.0;
        if delta > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: DVector<f64> = DVector::from_fn(lay.phi1.len(), |_, _| StandardNormal.sample(&mut rng));
            let e = &e * (delta / e.norm());
            data_error = e.norm();
            let mut head = z.rows_mut(0, lay.phi1.len());
            head += e;
        }
        Ok(CalderonMeasurements { z, delta, seed: noise.map(|n| n.1), data_error, layout: lay })
    }

    /// The flux part of `Φ` in whitened coordinates, for fields given as
    /// coefficient matrices.
    pub fn apply_values(&self, op: &AffineOperator, stack: &[BivariateField]) -> Result<DVector<f64>> {
        let w: Vec<DMatrix<f64>> = stack.iter().map(|f| f.whiten()).collect();
        op.apply(&w)
    }
}

#[derive(Debug, Clone)]
pub struct CalderonMeasurements {
    /// Whitened `(z₁, z₂, z₃)`.
    pub z: DVector<f64>,
    pub delta: f64,
    pub seed: Option<u64>,
    /// `‖z₁^δ − z₁‖`.
    pub data_error: f64,
    pub layout: CalderonLayout,
}

/// `√w_b (f_j(b) C_i[b,:] − f_i(b) C_j[b,:])` over boundary nodes, stacked
/// node-major.
pub fn phi3_pair(grid: &Grid2D, c_i: &DMatrix<f64>, c_j: &DMatrix<f64>, f_i: &DVector<f64>, f_j: &DVector<f64>) -> DVector<f64> {
    let m = c_i.ncols();
    let nb = grid.boundary_index.len();
    let mut out = DVector::zeros(nb * m);
    for (b, &node) in grid.boundary_index.iter().enumerate() {
        let s = grid.boundary_weights[b].sqrt();
        for k in 0..m {
            out[b * m + k] = s * (f_j[b] * c_i[(node, k)] - f_i[b] * c_j[(node, k)]);
        }
    }
    out
}

/// Dense whitened operator `(Φ₁, Φ₂, Φ₃)` on `N` blocks of shape
/// `nodes × m`.
pub fn assemble_calderon_operator(problem: &CalderonProblem) -> Result<AffineOperator> {
    let g = &problem.grid;
    let (nodes, m, nb, n) = (g.len(), problem.w.m, problem.nb(), problem.count());
    let lay = problem.layout();
    let linv = problem.h1.whitener_inverse();
    let a = &g.interior_weights;
    let k = &*problem.stiffness;

    // v = S d solves K_II v_I = −(A d)_I with zero boundary values
    let ii = &g.interior_index;
    let kii = k.select_rows(ii.iter()).select_columns(ii.iter());
    let chol = kii
        .cholesky()
        .ok_or_else(|| Error::NumericFailure("interior stiffness is not positive definite".into()))?;
    let mut rhs = DMatrix::zeros(ii.len(), nodes);
    for (r, &node) in ii.iter().enumerate() {
        rhs[(r, node)] = -a[node];
    }
    let si = chol.solve(&rhs);
    let mut s = DMatrix::zeros(nodes, nodes);
    for (r, &node) in ii.iter().enumerate() {
        s.row_mut(node).copy_from(&si.row(r));
    }
    // whitened flux of v plus the source term
    let ks = k * &s;
    let mut fl = DMatrix::zeros(nb, nodes);
    for (b, &node) in g.boundary_index.iter().enumerate() {
        let mut row = ks.row(node).into_owned();
        row[node] += a[node];
        fl.row_mut(b).copy_from(&(row / g.boundary_weights[b].sqrt()));
    }
    // d = D F̂ with D = [diag(ω_k) L⁻¹]_k
    let mut d = DMatrix::zeros(nodes, nodes * m);
    for kk in 0..m {
        let om = problem.w.omega.column(kk);
        let mut blk = d.columns_mut(kk * nodes, nodes);
        blk.copy_from(&linv);
        for r in 0..nodes {
            let mut row = blk.row_mut(r);
            row *= om[r];
        }
    }
    let phi1 = &fl * &d;
    let mut phi2 = &problem.h1.whitener * (&s * &d) * (-problem.int_q);
    for kk in 0..m {
        let ik = problem.w.integrals[kk];
        for r in 0..nodes {
            phi2[(r, kk * nodes + r)] += ik;
        }
    }

    let bd = nodes * m;
    let mut mat = DMatrix::zeros(lay.phi3.end, n * bd);
    for i in 0..n {
        mat.view_mut((i * nb, i * bd), (nb, bd)).copy_from(&phi1);
        mat.view_mut((lay.phi2.start + i * nodes, i * bd), (nodes, bd)).copy_from(&phi2);
    }
    let sw = problem.sqrt_bw();
    for (pi, &(i, j)) in lay.pairs.iter().enumerate() {
        let (fi, fj) = (problem.bdry.column(i), problem.bdry.column(j));
        let r0 = lay.phi3.start + pi * nb * m;
        for (b, &node) in g.boundary_index.iter().enumerate() {
            let lrow = linv.row(node);
            for kk in 0..m {
                let r = r0 + b * m + kk;
                for x in 0..nodes {
                    let l = lrow[x] * sw[b];
                    if l != 0.0 {
                        mat[(r, i * bd + kk * nodes + x)] = fj[b] * l;
                        mat[(r, j * bd + kk * nodes + x)] = -fi[b] * l;
                    }
                }
            }
        }
    }
    AffineOperator::from_dense(vec![(nodes, m); n], mat)
}

/// Boundary-weighted average of the boundary rows of `C_i` against `f_i`.
pub fn extract_q_calderon(grid: &Grid2D, c: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    if c.nrows() != grid.len() || f.len() != grid.boundary_index.len() {
        return invalid("shapes do not match the grid");
    }
    let w = &grid.boundary_weights;
    let den = f.component_mul(w).dot(f);
    if !(den > 0.0) {
        return invalid("∫|f|² must be positive");
    }
    let mut q = DVector::zeros(c.ncols());
    for (b, &node) in grid.boundary_index.iter().enumerate() {
        q += c.row(node).transpose() * (w[b] * f[b]);
    }
    Ok(q / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalderonMode {
    Exact,
    /// `λ = c·δ`, fidelity on the fluxes, the other blocks exact.
    Noisy { c: f64 },
}

#[derive(Debug, Clone)]
pub struct CalderonRecovery {
    /// Average of the per-block estimates, in `𝒲` coordinates.
    pub q_hat: DVector<f64>,
    pub q_per_block: Vec<DVector<f64>>,
    pub stack: Vec<BivariateField>,
    pub report: SolveReport,
    pub rank_ratios: Vec<f64>,
    /// `‖ΦF̂ − z‖` over all blocks of the operator.
    pub constraint_residual: f64,
}

impl CalderonRecovery {
    pub fn relative_error(&self, problem: &CalderonProblem) -> f64 {
        (&self.q_hat - &problem.q_coeffs).norm() / problem.q_coeffs.norm()
    }
}

/// Assembled operator with lazily built projectors, reusable across data.
#[derive(Debug)]
pub struct CalderonSystem {
    pub op: AffineOperator,
    pub layout: CalderonLayout,
    full: OnceLock<AffineProjector>,
    constraints: OnceLock<(AffineOperator, AffineOperator, AffineProjector)>,
}

impl CalderonSystem {
    pub fn new(problem: &CalderonProblem) -> Result<Self> {
        Ok(CalderonSystem {
            op: assemble_calderon_operator(problem)?,
            layout: problem.layout(),
            full: OnceLock::new(),
            constraints: OnceLock::new(),
        })
    }

    fn full_projector(&self) -> Result<&AffineProjector> {
        if self.full.get().is_none() {
            let _ = self.full.set(AffineProjector::new(self.op.matrix())?);
        }
        Ok(self.full.get().expect("just set"))
    }

    fn split(&self) -> Result<&(AffineOperator, AffineOperator, AffineProjector)> {
        if self.constraints.get().is_none() {
            let lay = &self.layout;
            let fit = self.op.select_rows(lay.phi1.clone())?;
            let eq = self.op.select_rows(lay.phi2.start..lay.phi3.end)?;
            let proj = AffineProjector::new(eq.matrix())?;
            let _ = self.constraints.set((fit, eq, proj));
        }
        Ok(self.constraints.get().expect("just set"))
    }
}

pub fn recover_calderon(
    problem: &CalderonProblem,
    sys: &CalderonSystem,
    meas: &CalderonMeasurements,
    mode: CalderonMode,
    opts: &SolverOptions,
) -> Result<CalderonRecovery> {
    let op = &sys.op;
    if meas.z.len() != op.codomain_dim() || meas.layout != problem.layout() || sys.layout != meas.layout {
        return invalid("measurements do not match the operator");
    }
    let (blocks, report) = match mode {
        CalderonMode::Exact => {
            if meas.delta != 0.0 {
                return invalid("exact recovery needs noiseless measurements");
            }
            solvers::solve_equality_with(op, sys.full_projector()?, &meas.z, Regularizer::Nuclear, opts)?
        }
        CalderonMode::Noisy { c } => {
            let lay = &meas.layout;
            let (fit, _, proj) = sys.split()?;
            let zf = meas.z.rows(0, lay.phi1.len()).into_owned();
            let ze = meas.z.rows(lay.phi2.start, lay.phi3.end - lay.phi2.start).into_owned();
            solvers::solve_constrained_regularized_with(fit, &zf, proj, &ze, c * meas.delta, opts)?
        }
    };
    let constraint_residual = (op.apply(&blocks)? - &meas.z).norm();
    let mut stack = Vec::with_capacity(blocks.len());
    let mut qs = Vec::with_capacity(blocks.len());
    let mut ratios = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let f = BivariateField::unwhiten(b, problem.h1.clone(), problem.wspace.clone())?;
        qs.push(extract_q_calderon(&problem.grid, &f.values, &problem.bdry.column(i))?);
        ratios.push(lowrank::rank_ratio(b)?);
        stack.push(f);
    }
    let q_hat = qs.iter().fold(DVector::zeros(problem.w.m), |acc, q| acc + q) / qs.len() as f64;
    Ok(CalderonRecovery { q_hat, q_per_block: qs, stack, report, rank_ratios: ratios, constraint_residual })
}

/// `Λ_q f_i` for every boundary function, one row per function.
pub fn forward_fluxes(problem: &CalderonProblem, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let s = SchrodingerSolver2D::with_stiffness(&problem.grid, problem.stiffness.clone(), q)?;
    let rows: Vec<DVector<f64>> = (0..problem.count())
        .into_par_iter()
        .map(|i| Ok(s.flux(&s.solve(&problem.bdry.column(i))?, None)))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), problem.nb(), |i, b| rows[i][b]))
}

/// Derivative of `q ↦ Λ_q` in direction `h`, applied to each boundary
/// function: row `i` is the flux of `v` with `−Δv + qv = −h u_i`, `v = 0`
/// on the boundary.
pub fn frechet_derivative(problem: &CalderonProblem, q: &DVector<f64>, h: &DVector<f64>) -> Result<DMatrix<f64>> {
    frechet_on(problem, &problem.bdry, q, h)
}

fn frechet_on(problem: &CalderonProblem, bdry: &BoundaryBasis, q: &DVector<f64>, h: &DVector<f64>) -> Result<DMatrix<f64>> {
    if h.len() != problem.grid.len() {
        return invalid("direction must have one value per node");
    }
    let s = SchrodingerSolver2D::with_stiffness(&problem.grid, problem.stiffness.clone(), q)?;
    let rows: Vec<DVector<f64>> = (0..bdry.count)
        .into_par_iter()
        .map(|i| {
            let u = s.solve(&bdry.column(i))?;
            let src = h.component_mul(&u);
            let v = s.solve_source(&src)?;
            Ok(s.flux(&v, Some(&src)))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), problem.nb(), |i, b| rows[i][b]))
}

/// `⟨Ψ′[q](h) f_i, f_j⟩` in the boundary-weighted product.
pub fn derivative_bilinear(problem: &CalderonProblem, dmat: &DMatrix<f64>) -> DMatrix<f64> {
    dmat * DMatrix::from_diagonal(&problem.grid.boundary_weights) * &problem.bdry.f
}

/// Singular values (descending) of the derivative on the first `modes`
/// trigonometric boundary functions.
pub fn compactness_diagnostic(problem: &CalderonProblem, q: &DVector<f64>, h: &DVector<f64>, modes: usize) -> Result<DVector<f64>> {
    let bdry = BoundaryBasis::trigonometric(&problem.grid, modes)?;
    let d = frechet_on(problem, &bdry, q, h)?;
    let gram = d * DMatrix::from_diagonal(&problem.grid.boundary_weights) * &bdry.f;
    lowrank::singular_values(&gram)
}

/// One row of the certificate study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub count: usize,
    pub w_norm: f64,
    pub tangent_residual: f64,
    pub sigma_min: f64,
    pub ndsc_pass: bool,
    pub degenerate: bool,
}

/// Least-norm pre-certificate for `N = 1, …, max_count` measurements.
pub fn precertificate_study(problem: &CalderonProblem, counts: &[usize]) -> Result<Vec<StudyRow>> {
    let mut out = Vec::with_capacity(counts.len());
    for &n in counts {
        let p = problem.with_measurement_count(n)?;
        let (_, row) = certify_calderon(&p, DEFAULT_MARGIN)?;
        out.push(row);
    }
    Ok(out)
}

/// Least-norm pre-certificate for the problem as given. The report is
/// `None` when the tangent system is degenerate.
pub fn certify_calderon(problem: &CalderonProblem, margin: f64) -> Result<(Option<CertificateReport>, StudyRow)> {
    let op = assemble_calderon_operator(problem)?;
    certify_with_operator(problem, &op, margin)
}

pub fn certify_with_operator(
    problem: &CalderonProblem,
    op: &AffineOperator,
    margin: f64,
) -> Result<(Option<CertificateReport>, StudyRow)> {
    let models = problem.models()?;
    match certify::precertificate_with(op, &models, TangentKind::General, margin) {
        Ok(rep) => {
            let row = StudyRow {
                count: problem.count(),
                w_norm: rep.max_w_norm(),
                tangent_residual: rep.max_tangent_residual(),
                sigma_min: rep.sigma_min.unwrap_or(f64::NAN),
                ndsc_pass: rep.ndsc_pass,
                degenerate: false,
            };
            Ok((Some(rep), row))
        }
        Err(Error::DegenerateCertificate { sigma_min }) => Ok((
            None,
            StudyRow {
                count: problem.count(),
                w_norm: f64::NAN,
                tangent_residual: f64::NAN,
                sigma_min,
                ndsc_pass: false,
                degenerate: true,
            },
        )),
        Err(e) => Err(e),
    }
}

/// Iterates and misfits of the Gauss–Newton baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussNewtonHistory {
    /// `q` coefficients in `𝒲`, starting with the initial guess.
    pub iterates: Vec<Vec<f64>>,
    /// `½Σ_i‖Λ_q f_i − g_i‖²` per iterate.
    pub misfits: Vec<f64>,
    pub converged: bool,
    /// Set when a step could not reduce the misfit or the forward solve failed.
    pub stalled: bool,
}

fn weighted_residual(problem: &CalderonProblem, q: &DVector<f64>, data: &DMatrix<f64>) -> Result<DVector<f64>> {
    let g = forward_fluxes(problem, &problem.w.evaluate(q))?;
    let sw = problem.sqrt_bw();
    let (n, nb) = (g.nrows(), g.ncols());
    Ok(DVector::from_fn(n * nb, |r, _| (g[(r / nb, r % nb)] - data[(r / nb, r % nb)]) * sw[r % nb]))
}

/// Levenberg–Marquardt damped Gauss–Newton on the `𝒲` coefficients of `q`,
/// fitting the fluxes `data` (one row per boundary function).
pub fn gauss_newton_baseline(
    problem: &CalderonProblem,
    q_init: &DVector<f64>,
    data: &DMatrix<f64>,
    iters: usize,
) -> Result<GaussNewtonHistory> {
    if q_init.len() != problem.w.m || data.shape() != (problem.count(), problem.nb()) {
        return invalid("initial guess or data has the wrong shape");
    }
    let scale = 1.0 + data.norm_squared();
    let tol = 1e-24 * scale;
    let mut q = q_init.clone();
    let mut r = weighted_residual(problem, &q, data)?;
    let mut hist = GaussNewtonHistory {
        iterates: vec![q.as_slice().to_vec()],
        misfits: vec![0.5 * r.norm_squared()],
        converged: false,
        stalled: false,
    };
    let sw = problem.sqrt_bw();
    let mut mu = 1e-6;
    for _ in 0..iters {
        let misfit = 0.5 * r.norm_squared();
        if misfit <= tol {
            hist.converged = true;
            return Ok(hist);
        }
        let qn = problem.w.evaluate(&q);
        let cols: Vec<DVector<f64>> = (0..problem.w.m)
            .map(|k| {
                let d = frechet_derivative(problem, &qn, &problem.w.omega.column(k).into_owned())?;
                let nb = d.ncols();
                Ok(DVector::from_fn(d.nrows() * nb, |r, _| d[(r / nb, r % nb)] * sw[r % nb]))
            })
            .collect::<Result<_>>()?;
        let j = DMatrix::from_columns(&cols);
        let jtj = j.tr_mul(&j);
        let jtr = j.tr_mul(&r);
        let damp = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        for _ in 0..12 {
            let mut sys = jtj.clone();
            for d in 0..sys.nrows() {
                sys[(d, d)] += mu * damp;
            }
            let Some(step) = sys.cholesky().map(|c| c.solve(&(-&jtr))) else {
                mu *= 10.0;
                continue;
            };
            let trial = &q + &step;
            match weighted_residual(problem, &trial, data) {
                Ok(rt) if 0.5 * rt.norm_squared() < misfit => {
                    q = trial;
                    r = rt;
                    mu = (mu / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !accepted {
            hist.stalled = true;
            log::info!("Gauss–Newton stalled at misfit {misfit:e}");
            return Ok(hist);
        }
        hist.iterates.push(q.as_slice().to_vec());
        hist.misfits.push(0.5 * r.norm_squared());
    }
    hist.converged = 0.5 * r.norm_squared() <= tol;
    Ok(hist)
}
