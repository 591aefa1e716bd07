//! Grids, discrete Hilbert structures and bivariate fields.
//!
//! A bivariate field stores values `F[j, k] ≈ F(x_j, y_k)`: rows follow the
//! first variable, columns the second. Whitening by the Cholesky factors of
//! the two Gram matrices turns the weighted Hilbert–Schmidt geometry into the
//! plain Euclidean one, so every SVD downstream runs on whitened matrices.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform grid on `[a, b]` with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub nodes: DVector<f64>,
    pub quad_weights: DVector<f64>,
}

impl Grid1D {
    pub fn new(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 3 {
            return invalid(format!("grid needs at least 3 nodes, got {n}"));
        }
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return invalid(format!("empty interval [{a}, {b}]"));
        }
        let h = (b - a) / (n - 1) as f64;
        let nodes = DVector::from_fn(n, |j, _| if j == n - 1 { b } else { a + h * j as f64 });
        let quad_weights =
            DVector::from_fn(n, |j, _| if j == 0 || j == n - 1 { 0.5 * h } else { h });
        Ok(Grid1D { n, a, b, h, nodes, quad_weights })
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Trapezoid integral of nodal values.
    pub fn integrate(&self, f: &DVector<f64>) -> f64 {
        self.quad_weights.dot(f)
    }

    /// Indices `1..n-1`.
    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.n - 1
    }
}

/// Build a uniform 1-D grid.
pub fn build_grid_1d(n: usize, a: f64, b: f64) -> Result<Grid1D> {
    Grid1D::new(n, a, b)
}

/// Tensor grid on a rectangle. Node `k = iy * nx + ix`.
#[derive(Debug, Clone)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
    pub interior_index: Vec<usize>,
    /// Boundary nodes, counter-clockwise from the lower-left corner.
    pub boundary_index: Vec<usize>,
    pub boundary_normals: Vec<[f64; 2]>,
    /// Arc-length weights, one per boundary node.
    pub boundary_weights: DVector<f64>,
    /// Arc-length coordinate of each boundary node.
    pub boundary_arclength: DVector<f64>,
    /// Area weights for every node (interior and boundary).
    pub interior_weights: DVector<f64>,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return invalid(format!("2-D grid needs at least 3x3 nodes, got {nx}x{ny}"));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return invalid("rectangle sides must be positive");
        }
        let hx = lx / (nx - 1) as f64;
        let hy = ly / (ny - 1) as f64;
        let idx = |ix: usize, iy: usize| iy * nx + ix;

        let mut interior_index = Vec::new();
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                interior_index.push(idx(ix, iy));
            }
        }

        // walk the boundary counter-clockwise
        let mut walk: Vec<(usize, usize)> = Vec::new();
        for ix in 0..nx {
            walk.push((ix, 0));
        }
        for iy in 1..ny {
            walk.push((nx - 1, iy));
        }
        for ix in (0..nx - 1).rev() {
            walk.push((ix, ny - 1));
        }
        for iy in (1..ny - 1).rev() {
            walk.push((0, iy));
        }

        let mut boundary_index = Vec::with_capacity(walk.len());
        let mut boundary_normals = Vec::with_capacity(walk.len());
        let mut bw = Vec::with_capacity(walk.len());
        let mut arc = Vec::with_capacity(walk.len());
        let mut s = 0.0;
        for (pos, &(ix, iy)) in walk.iter().enumerate() {
            boundary_index.push(idx(ix, iy));
            let mut nrm = [0.0_f64, 0.0];
            let mut w = 0.0;
            if ix == 0 {
                nrm[0] -= 1.0;
                w += 0.5 * hy;
            }
            if ix == nx - 1 {
                nrm[0] += 1.0;
                w += 0.5 * hy;
            }
            if iy == 0 {
                nrm[1] -= 1.0;
                w += 0.5 * hx;
            }
            if iy == ny - 1 {
                nrm[1] += 1.0;
                w += 0.5 * hx;
            }
            // non-corner nodes see the same side twice
            let corner = (ix == 0 || ix == nx - 1) && (iy == 0 || iy == ny - 1);
            if !corner {
                w *= 2.0;
            }
            let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt();
            boundary_normals.push([nrm[0] / len, nrm[1] / len]);
            bw.push(w);
            if pos > 0 {
                let (px, py) = walk[pos - 1];
                s += hx * px.abs_diff(ix) as f64 + hy * py.abs_diff(iy) as f64;
            }
            arc.push(s);
        }

        let mut area = DVector::zeros(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let fx = if ix == 0 || ix == nx - 1 { 0.5 } else { 1.0 };
                let fy = if iy == 0 || iy == ny - 1 { 0.5 } else { 1.0 };
                area[idx(ix, iy)] = fx * fy * hx * hy;
            }
        }

        Ok(Grid2D {
            nx,
            ny,
            x0: 0.0,
            y0: 0.0,
            hx,
            hy,
            interior_index,
            boundary_index,
            boundary_normals,
            boundary_weights: DVector::from_vec(bw),
            boundary_arclength: DVector::from_vec(arc),
            interior_weights: area,
        })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, k: usize) -> (f64, f64) {
        let ix = k % self.nx;
        let iy = k / self.nx;
        (self.x0 + ix as f64 * self.hx, self.y0 + iy as f64 * self.hy)
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.nx - 1) as f64 * self.hx + (self.ny - 1) as f64 * self.hy)
    }

    pub fn area(&self) -> f64 {
        (self.nx - 1) as f64 * self.hx * (self.ny - 1) as f64 * self.hy
    }

    /// Sample a function at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_fn(self.len(), |k, _| {
            let (x, y) = self.coords(k);
            f(x, y)
        })
    }

    /// Restrict nodal values to the boundary, in boundary order.
    pub fn boundary_values(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.boundary_index.len(), self.boundary_index.iter().map(|&k| u[k]))
    }

    /// Finite-volume stiffness matrix: the discrete Dirichlet form
    /// `uᵀKu ≈ ∫|∇u|²`, with half-length faces along the boundary.
    pub fn stiffness(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut k = DMatrix::zeros(n, n);
        let mut couple = |a: usize, b: usize, c: f64| {
            k[(a, a)] += c;
            k[(b, b)] += c;
            k[(a, b)] -= c;
            k[(b, a)] -= c;
        };
        for iy in 0..self.ny {
            let face = if iy == 0 || iy == self.ny - 1 { 0.5 * self.hy } else { self.hy };
            for ix in 0..self.nx - 1 {
                couple(self.index(ix, iy), self.index(ix + 1, iy), face / self.hx);
            }
        }
        for ix in 0..self.nx {
            let face = if ix == 0 || ix == self.nx - 1 { 0.5 * self.hx } else { self.hx };
            for iy in 0..self.ny - 1 {
                couple(self.index(ix, iy), self.index(ix, iy + 1), face / self.hy);
            }
        }
        k
    }
}

/// Which discrete norm a Gram matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    L2,
    H1,
    H2,
    LaplacianSeminorm,
}

/// Either kind of grid, for [`assemble_inner_product`].
#[derive(Debug, Clone, Copy)]
pub enum GridRef<'a> {
    One(&'a Grid1D),
    Two(&'a Grid2D),
}

/// SPD Gram matrix with its Cholesky whitener and inverse.
#[derive(Debug, Clone)]
pub struct InnerProduct {
    pub kind: Kind,
    pub gram: DMatrix<f64>,
    /// Upper-triangular `L` with `LᵀL = G`.
    pub whitener: DMatrix<f64>,
    /// Any `R` with `RᵀR = G`; norms are evaluated as `‖Ra‖`.
    pub factor: DMatrix<f64>,
    /// `G⁻¹`; column `x` is the representer of evaluation at node `x`.
    pub kernel: DMatrix<f64>,
    /// Integration functional (quadrature weights or basis integrals).
    pub weights: Option<DVector<f64>>,
}

impl InnerProduct {
    /// Factor a Gram matrix. Fails if it is not symmetric positive definite.
    pub fn from_gram(kind: Kind, gram: DMatrix<f64>, weights: Option<DVector<f64>>) -> Result<Self> {
        if !gram.is_square() || gram.nrows() == 0 {
            return invalid("Gram matrix must be square and non-empty");
        }
        if let Some(w) = &weights {
            if w.len() != gram.nrows() {
                return invalid("weight vector length differs from Gram size");
            }
        }
        let scale = gram.amax();
        let asym = (&gram - gram.transpose()).amax();
        if !(asym <= 1e-12 * scale) {
            return Err(Error::NumericFailure(format!("Gram matrix not symmetric (asymmetry {asym:e})")));
        }
        let chol = gram.clone().cholesky().ok_or_else(|| {
            let dmin = gram.diagonal().min();
            Error::NumericFailure(format!(
                "Cholesky failed for {kind:?} Gram of size {} (min diagonal {dmin:e})",
                gram.nrows()
            ))
        })?;
        let kernel = chol.inverse();
        let whitener = chol.l().transpose();
        Ok(InnerProduct { kind, gram, factor: whitener.clone(), whitener, kernel, weights })
    }

    /// Build from a factor `R` with `G = RᵀR`. The whitener comes from a QR
    /// factorization of `R`, which avoids squaring the condition number.
    pub fn from_factor(kind: Kind, r: DMatrix<f64>, weights: Option<DVector<f64>>) -> Result<Self> {
        let n = r.ncols();
        if n == 0 || r.nrows() < n {
            return invalid("factor must have at least as many rows as columns");
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return invalid("weight vector length differs from Gram size");
            }
        }
        let mut l = r.clone().qr().r();
        for i in 0..n {
            let d = l[(i, i)];
            if !(d.abs() > 0.0) || !d.is_finite() {
                return Err(Error::NumericFailure(format!("{kind:?} factor is rank deficient at column {i}")));
            }
            if d < 0.0 {
                l.row_mut(i).neg_mut();
            }
        }
        let gram = symmetrize(r.tr_mul(&r));
        let r = r.clone();
        let linv = l
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::NumericFailure("singular whitener".into()))?;
        let kernel = symmetrize(&linv * linv.transpose());
        Ok(InnerProduct { kind, gram, whitener: l, factor: r, kernel, weights })
    }

    /// Euclidean structure with optional integration weights.
    pub fn identity(dim: usize, weights: Option<DVector<f64>>) -> Result<Self> {
        Self::from_gram(Kind::L2, DMatrix::identity(dim, dim), weights)
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (&self.factor * a).dot(&(&self.factor * b))
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        (&self.factor * a).norm()
    }

    pub fn whiten_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.whitener * a
    }

    pub fn unwhiten_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        self.whitener
            .solve_upper_triangular(a)
            .expect("whitener has a positive diagonal")
    }

    /// `L⁻¹`, used to map whitened coordinates back to nodal values.
    pub fn whitener_inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.whitener
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .expect("whitener has a positive diagonal")
    }
}

/// First-derivative matrix: central differences inside, second-order
/// one-sided differences at both ends.
pub fn first_derivative_matrix(grid: &Grid1D) -> DMatrix<f64> {
    let n = grid.n;
    let c = 0.5 / grid.h;
    let mut d = DMatrix::zeros(n, n);
    d[(0, 0)] = -3.0 * c;
    d[(0, 1)] = 4.0 * c;
    d[(0, 2)] = -c;
    for j in 1..n - 1 {
        d[(j, j - 1)] = -c;
        d[(j, j + 1)] = c;
    }
    d[(n - 1, n - 1)] = 3.0 * c;
    d[(n - 1, n - 2)] = -4.0 * c;
    d[(n - 1, n - 3)] = c;
    d
}

/// Second-derivative matrix: three-point stencil inside, four-point
/// one-sided stencil at the ends (three-point when `n = 3`).
pub fn second_derivative_matrix(grid: &Grid1D) -> DMatrix<f64> {
    let n = grid.n;
    let c = 1.0 / (grid.h * grid.h);
    let mut d = DMatrix::zeros(n, n);
    for j in 1..n - 1 {
        d[(j, j - 1)] = c;
        d[(j, j)] = -2.0 * c;
        d[(j, j + 1)] = c;
    }
    if n >= 4 {
        for (k, s) in [2.0, -5.0, 4.0, -1.0].into_iter().enumerate() {
            d[(0, k)] = s * c;
            d[(n - 1, n - 1 - k)] = s * c;
        }
    } else {
        for (k, s) in [1.0, -2.0, 1.0].into_iter().enumerate() {
            d[(0, k)] = s * c;
            d[(n - 1, n - 1 - k)] = s * c;
        }
    }
    d
}

/// Factor `R` with `G = RᵀR`: rows `√w·f`, `√w·D₁f`, `√w·D₂f` as needed.
fn factor_1d(grid: &Grid1D, kind: Kind) -> DMatrix<f64> {
    let sw = DMatrix::from_diagonal(&grid.quad_weights.map(f64::sqrt));
    match kind {
        Kind::L2 => sw,
        Kind::H1 | Kind::H2 => {
            let n = grid.n;
            let parts = if kind == Kind::H2 { 3 } else { 2 };
            let mut r = DMatrix::zeros(parts * n, n);
            r.rows_mut(0, n).copy_from(&sw);
            r.rows_mut(n, n).copy_from(&(&sw * first_derivative_matrix(grid)));
            if kind == Kind::H2 {
                r.rows_mut(2 * n, n).copy_from(&(&sw * second_derivative_matrix(grid)));
            }
            r
        }
        Kind::LaplacianSeminorm => {
            // zero-boundary functions: unknowns are the n-2 interior values
            let m = grid.n - 2;
            let c = grid.h.sqrt() / (grid.h * grid.h);
            let mut t = DMatrix::zeros(m, m);
            for j in 0..m {
                t[(j, j)] = -2.0 * c;
                if j > 0 {
                    t[(j, j - 1)] = c;
                }
                if j + 1 < m {
                    t[(j, j + 1)] = c;
                }
            }
            t
        }
    }
}

fn symmetrize(g: DMatrix<f64>) -> DMatrix<f64> {
    (&g + g.transpose()) * 0.5
}

/// Assemble the Gram matrix of the requested kind on a grid and factor it.
///
/// `laplacian_seminorm` lives on zero-boundary functions and has dimension
/// `n - 2`; it is only available in 1-D. The 2-D `h1` form uses the
/// finite-volume stiffness matrix as the gradient term.
pub fn assemble_inner_product(grid: GridRef<'_>, kind: Kind) -> Result<InnerProduct> {
    match grid {
        GridRef::One(g) => {
            let weights = match kind {
                Kind::LaplacianSeminorm => None,
                _ => Some(g.quad_weights.clone()),
            };
            InnerProduct::from_factor(kind, factor_1d(g, kind), weights)
        }
        GridRef::Two(g) => {
            let area = DMatrix::from_diagonal(&g.interior_weights);
            let gram = match kind {
                Kind::L2 => area,
                Kind::H1 => area + g.stiffness(),
                _ => return invalid(format!("{kind:?} is not available on 2-D grids")),
            };
            InnerProduct::from_gram(kind, gram, Some(g.interior_weights.clone()))
        }
    }
}

/// Value matrix of a function of two variables.
#[derive(Debug, Clone)]
pub struct BivariateField {
    pub x_space: Arc<InnerProduct>,
    pub y_space: Arc<InnerProduct>,
    pub values: DMatrix<f64>,
}

impl BivariateField {
    pub fn new(x_space: Arc<InnerProduct>, y_space: Arc<InnerProduct>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != x_space.dim() || values.ncols() != y_space.dim() {
            return invalid(format!(
                "values are {}x{}, spaces have dimensions {} and {}",
                values.nrows(),
                values.ncols(),
                x_space.dim(),
                y_space.dim()
            ));
        }
        Ok(BivariateField { x_space, y_space, values })
    }

    /// `u ⊗ v`.
    pub fn rank_one(
        x_space: Arc<InnerProduct>,
        y_space: Arc<InnerProduct>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<Self> {
        Self::new(x_space, y_space, u * v.transpose())
    }

    /// `L_x · values · L_yᵀ`.
    pub fn whiten(&self) -> DMatrix<f64> {
        &self.x_space.whitener * &self.values * self.y_space.whitener.transpose()
    }

    pub fn unwhiten(m: &DMatrix<f64>, x_space: Arc<InnerProduct>, y_space: Arc<InnerProduct>) -> Result<Self> {
        if m.nrows() != x_space.dim() || m.ncols() != y_space.dim() {
            return invalid("whitened matrix does not match the spaces");
        }
        let left = x_space
            .whitener
            .solve_upper_triangular(m)
            .ok_or_else(|| Error::NumericFailure("singular x whitener".into()))?;
        let vt = y_space
            .whitener
            .solve_upper_triangular(&left.transpose())
            .ok_or_else(|| Error::NumericFailure("singular y whitener".into()))?;
        Self::new(x_space, y_space, vt.transpose())
    }

    /// Hilbert–Schmidt norm, i.e. Frobenius norm of the whitened matrix.
    pub fn norm(&self) -> f64 {
        self.whiten().norm()
    }

    /// `F(x_j, x_j)`.
    pub fn diag_restrict(&self) -> Result<DVector<f64>> {
        if !self.values.is_square() {
            return invalid("diagonal restriction needs a square value matrix");
        }
        Ok(self.values.diagonal())
    }

    /// `∫ F(·, y) dy` using the y-space integration functional.
    pub fn integrate_second_variable(&self) -> Result<DVector<f64>> {
        match &self.y_space.weights {
            Some(w) => Ok(&self.values * w),
            None => invalid("second-variable space carries no integration weights"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_grid() {
        let g = Grid1D::new(3, 0.0, 1.0).unwrap();
        assert_eq!(g.nodes.as_slice(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.quad_weights.as_slice(), &[0.25, 0.5, 0.25]);
        assert!(Grid1D::new(2, 0.0, 1.0).is_err());
        assert!(Grid1D::new(5, 1.0, 1.0).is_err());
        let g = Grid1D::new(101, 0.0, 1.0).unwrap();
        assert!((g.quad_weights.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn l2_gram_is_diagonal() {
        let g = Grid1D::new(3, 0.0, 1.0).unwrap();
        let ip = assemble_inner_product(GridRef::One(&g), Kind::L2).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.5, 0.25]));
        assert!((&ip.gram - expect).amax() < 1e-15);
    }

    #[test]
    fn h2_norm_of_constant_and_sine() {
        let g = Grid1D::new(401, 0.0, 1.0).unwrap();
        let ip = assemble_inner_product(GridRef::One(&g), Kind::H2).unwrap();
        let c = DVector::from_element(g.n, -3.0);
        assert!((ip.norm(&c) - 3.0).abs() < 1e-12);
        let pi = std::f64::consts::PI;
        let s = g.nodes.map(|x| (pi * x).sin());
        let exact = ((1.0 + pi * pi + pi.powi(4)) / 2.0).sqrt();
        assert!((ip.norm(&s) - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn grid2d_weights() {
        let g = Grid2D::new(9, 5, 2.0, 1.0).unwrap();
        assert!((g.interior_weights.sum() - 2.0).abs() < 1e-13);
        assert!((g.boundary_weights.sum() - 6.0).abs() < 1e-13);
        assert_eq!(g.boundary_index.len() + g.interior_index.len(), g.len());
        let mut all: Vec<usize> = g.boundary_index.iter().chain(&g.interior_index).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), g.len());
        // constants are in the kernel of the stiffness matrix
        let k = g.stiffness();
        assert!((k * DVector::from_element(g.len(), 1.0)).amax() < 1e-12);
        // ∫|∇(x)|² = |Ω| exactly
        let x = g.sample(|x, _| x);
        assert!((x.dot(&(g.stiffness() * &x)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn whitening_round_trip() {
        let g = Grid1D::new(11, 0.0, 1.0).unwrap();
        let x = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::H2).unwrap());
        let y = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::L2).unwrap());
        let vals = DMatrix::from_fn(11, 11, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let f = BivariateField::new(x.clone(), y.clone(), vals.clone()).unwrap();
        let back = BivariateField::unwhiten(&f.whiten(), x, y).unwrap();
        assert!((back.values - &vals).norm() <= 1e-12 * vals.norm());
    }

    #[test]
    fn integrate_linear_in_y() {
        let g = Grid1D::new(21, 0.0, 1.0).unwrap();
        let x = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::H2).unwrap());
        let y = Arc::new(assemble_inner_product(GridRef::One(&g), Kind::L2).unwrap());
        let vals = DMatrix::from_fn(21, 21, |_, k| g.nodes[k]);
        let f = BivariateField::new(x, y, vals).unwrap();
        let r = f.integrate_second_variable().unwrap();
        assert!(r.iter().all(|v| (v - 0.5).abs() <= g.h * g.h));
        let d = f.diag_restrict().unwrap();
        assert!((d - &g.nodes).amax() == 0.0);
    }

    #[test]
    fn laplacian_seminorm_dimension() {
        let g = Grid1D::new(9, 0.0, 1.0).unwrap();
        let ip = assemble_inner_product(GridRef::One(&g), Kind::LaplacianSeminorm).unwrap();
        assert_eq!(ip.dim(), 7);
        // x(1-x) has Laplacian -2, so its seminorm is 2 up to the trapezoid end weights
        let v = DVector::from_fn(7, |j, _| {
            let x = g.nodes[j + 1];
            x * (1.0 - x)
        });
        assert!((ip.norm(&v) - 2.0 * (1.0 - g.h).sqrt()).abs() < 1e-12);
        let g2 = Grid2D::unit_square(5).unwrap();
        assert!(assemble_inner_product(GridRef::Two(&g2), Kind::H2).is_err());
    }
}
