//! Discrete resolvents `(I + tL)^{-m}` and the operators built from them:
//! the vertical family `sqrt(t) grad (I + tL)^{-m}` and the horizontal family
//! `tL (I + tL)^{-m}`.
//!
//! A kernel matrix `T` acts by `(T f)(x) = sum_y T(x, y) f(y) mu_y`. Columns
//! are computed independently by sparse Cholesky solves.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::mesh::ManifoldMesh;
use crate::parallel;
use crate::solver::{ArrowCholesky, SymSparse};
use crate::specfun::gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Resolvent,
    Vertical,
    Horizontal,
    Heat,
    Remainder,
}

/// Dense kernel with attached vertex measures.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
    measures: Vec<f64>,
    pub kind: KernelKind,
    /// Time parameter `t` (or `1/k^2` for kernels built from `k`).
    pub t: f64,
    pub m: u32,
}

impl KernelMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>, measures: Vec<f64>, kind: KernelKind, t: f64, m: u32) -> Self {
        let n = measures.len();
        let mut data = vec![0.0; n * n];
        for (y, col) in columns.iter().enumerate() {
            for (x, v) in col.iter().enumerate() {
                data[x * n + y] = *v;
            }
        }
        KernelMatrix { n, data, measures, kind, t, m }
    }

    pub fn from_fn(measures: Vec<f64>, kind: KernelKind, t: f64, m: u32, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = measures.len();
        let mut data = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                data.push(f(x, y));
            }
        }
        KernelMatrix { n, data, measures, kind, t, m }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = f.iter().zip(&self.measures).map(|(a, m)| a * m).collect();
        (0..self.n).map(|x| self.row(x).iter().zip(&g).map(|(t, v)| t * v).sum()).collect()
    }

    /// Action of the adjoint with respect to `mu`: kernel `T(y, x)`.
    pub fn apply_adjoint(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for x in 0..self.n {
            let w = f[x] * self.measures[x];
            for (o, t) in out.iter_mut().zip(self.row(x)) {
                *o += t * w;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &KernelMatrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.n {
            for y in 0..x {
                worst = worst.max((self.get(x, y) - self.get(y, x)).abs());
            }
        }
        worst
    }

    pub fn map(&self, kind: KernelKind, f: impl Fn(usize, usize, f64) -> f64) -> KernelMatrix {
        KernelMatrix::from_fn(self.measures.clone(), kind, self.t, self.m, |x, y| f(x, y, self.get(x, y)))
    }

    /// Writes `(x, y, value)` rows for the given source columns.
    pub fn write_slice_csv<W: Write>(&self, w: W, columns: &[usize]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y", "value"])?;
        for &y in columns {
            for x in 0..self.n {
                wtr.write_record([x.to_string(), y.to_string(), format!("{:.12e}", self.get(x, y))])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `(alpha + beta L)^{-1}` via one factorization.
#[derive(Debug, Clone)]
pub struct ShiftedInverse {
    chol: ArrowCholesky,
    matrix: SymSparse,
    measures: Vec<f64>,
}

impl ShiftedInverse {
    pub fn new(mesh: &ManifoldMesh, alpha: f64, beta: f64) -> Result<Self> {
        let matrix = mesh.shifted_stiffness(alpha, beta);
        Ok(ShiftedInverse { chol: mesh.factor_shifted(alpha, beta)?, matrix, measures: mesh.measures() })
    }

    /// One solve followed by one step of iterative refinement.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let b: Vec<f64> = f.iter().zip(&self.measures).map(|(a, m)| a * m).collect();
        let mut u = self.chol.solve(&b);
        let au = self.matrix.matvec(&u);
        let r: Vec<f64> = b.iter().zip(&au).map(|(x, y)| x - y).collect();
        for (ui, di) in u.iter_mut().zip(self.chol.solve(&r)) {
            *ui += di;
        }
        u
    }

    pub fn apply_pow(&self, f: &[f64], m: u32) -> Vec<f64> {
        let mut u = f.to_vec();
        for _ in 0..m {
            u = self.apply(&u);
        }
        u
    }
}

/// The resolvent family at one `(t, m)`.
#[derive(Debug, Clone)]
pub struct ResolventOperator<'a> {
    mesh: &'a ManifoldMesh,
    pub t: f64,
    pub m: u32,
    inverse: Option<ShiftedInverse>,
}

impl<'a> ResolventOperator<'a> {
    pub fn new(mesh: &'a ManifoldMesh, t: f64, m: u32) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return domain(format!("t must be finite and >= 0, got {t}"));
        }
        if m < 1 {
            return domain("resolvent order m must be >= 1");
        }
        let inverse = if t == 0.0 { None } else { Some(ShiftedInverse::new(mesh, 1.0, t)?) };
        Ok(ResolventOperator { mesh, t, m, inverse })
    }

    pub fn mesh(&self) -> &ManifoldMesh {
        self.mesh
    }

    /// `(I + tL)^{-j} f`.
    pub fn apply_pow(&self, f: &[f64], j: u32) -> Vec<f64> {
        match &self.inverse {
            None => f.to_vec(),
            Some(inv) => inv.apply_pow(f, j),
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.apply_pow(f, self.m)
    }

    /// `sqrt(t) |grad (I + tL)^{-m} f|`.
    pub fn vertical(&self, f: &[f64]) -> Vec<f64> {
        let s = self.t.sqrt();
        let g = self.mesh.gradient_magnitude(&self.apply(f));
        g.0.into_iter().map(|v| s * v).collect()
    }

    /// `tL (I + tL)^{-m} f = (I + tL)^{-(m-1)} f - (I + tL)^{-m} f`.
    pub fn horizontal(&self, f: &[f64]) -> Vec<f64> {
        let prev = self.apply_pow(f, self.m - 1);
        let cur = self.apply_pow(&prev, 1);
        prev.iter().zip(&cur).map(|(a, b)| a - b).collect()
    }
}

fn delta(n: usize, y: usize, mu: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[y] = 1.0 / mu;
    e
}

fn columns_of(mesh: &ManifoldMesh, col: impl Fn(Vec<f64>) -> Vec<f64> + Sync + Send) -> Vec<Vec<f64>> {
    let n = mesh.len();
    parallel::map_range(n, |y| col(delta(n, y, mesh.vertex(y).measure)))
}

/// Kernel of `(I + tL)^{-m}`: column `y` solves `(I + tL)^m u = delta_y / mu_y`.
pub fn resolvent_matrix(mesh: &ManifoldMesh, t: f64, m: u32) -> Result<KernelMatrix> {
    let op = ResolventOperator::new(mesh, t, m)?;
    let cols = columns_of(mesh, |d| op.apply(&d));
    Ok(KernelMatrix::from_columns(cols, mesh.measures(), KernelKind::Resolvent, t, m))
}

/// Positive kernel `V(x, y) = sqrt(t) |grad_x T_m(., y)|(x)`; it dominates the
/// vertical operator pointwise on `|f|`. Exact application to signed `f` goes
/// through [`ResolventOperator::vertical`].
pub fn vertical_matrix(mesh: &ManifoldMesh, t: f64, m: u32) -> Result<KernelMatrix> {
    if !(t > 0.0) {
        return domain(format!("vertical operator needs t > 0, got {t}"));
    }
    let op = ResolventOperator::new(mesh, t, m)?;
    let s = t.sqrt();
    let cols = columns_of(mesh, |d| {
        mesh.gradient_magnitude(&op.apply(&d)).0.into_iter().map(|v| s * v).collect()
    });
    Ok(KernelMatrix::from_columns(cols, mesh.measures(), KernelKind::Vertical, t, m))
}

/// Kernel of `tL (I + tL)^{-m}` via the resolvent difference.
pub fn horizontal_matrix(mesh: &ManifoldMesh, t: f64, m: u32) -> Result<KernelMatrix> {
    let op = ResolventOperator::new(mesh, t, m)?;
    let cols = columns_of(mesh, |d| op.horizontal(&d));
    Ok(KernelMatrix::from_columns(cols, mesh.measures(), KernelKind::Horizontal, t, m))
}

/// Kernel of `(L + k^2)^{-m}`.
pub fn shifted_resolvent_matrix(mesh: &ManifoldMesh, k: f64, m: u32) -> Result<KernelMatrix> {
    if !(k > 0.0) {
        return domain(format!("k must be > 0, got {k}"));
    }
    let inv = ShiftedInverse::new(mesh, k * k, 1.0)?;
    let cols = columns_of(mesh, |d| inv.apply_pow(&d, m));
    Ok(KernelMatrix::from_columns(cols, mesh.measures(), KernelKind::Resolvent, 1.0 / (k * k), m))
}

/// `L = sum_j lambda_j phi_j <phi_j, .>_mu` with `mu`-orthonormal eigenfunctions.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `phi_j(x)` stored as `vectors[(x, j)]`.
    pub vectors: DMatrix<f64>,
    measures: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn new(mesh: &ManifoldMesh) -> Self {
        let n = mesh.len();
        let measures = mesh.measures();
        let k = mesh.shifted_stiffness(0.0, 1.0);
        let mut s = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            s[(x, x)] = k.diag[x] / measures[x];
            for &(y, v) in &k.off[x] {
                s[(x, y)] = v / (measures[x] * measures[y]).sqrt();
            }
        }
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let mut vectors = DMatrix::<f64>::zeros(n, n);
        for (jj, &j) in order.iter().enumerate() {
            for x in 0..n {
                vectors[(x, jj)] = eig.eigenvectors[(x, j)] / measures[x].sqrt();
            }
        }
        SpectralDecomposition { eigenvalues, vectors, measures }
    }

    /// Kernel of `g(L)`.
    pub fn kernel(&self, kind: KernelKind, t: f64, m: u32, g: impl Fn(f64) -> f64) -> KernelMatrix {
        let n = self.eigenvalues.len();
        let gl: Vec<f64> = self.eigenvalues.iter().map(|&l| g(l)).collect();
        let scaled = DMatrix::from_fn(n, n, |x, j| self.vectors[(x, j)] * gl[j]);
        let prod = &scaled * self.vectors.transpose();
        KernelMatrix::from_fn(self.measures.clone(), kind, t, m, |x, y| prod[(x, y)])
    }

    /// Coefficients `<f, phi_j>_mu`.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let n = self.eigenvalues.len();
        (0..n)
            .map(|j| (0..n).map(|x| f[x] * self.measures[x] * self.vectors[(x, j)]).sum())
            .collect()
    }

    /// `g(L) f` from precomputed coefficients.
    pub fn synthesize(&self, coeffs: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.eigenvalues.len();
        let w: Vec<f64> = coeffs.iter().zip(&self.eigenvalues).map(|(c, &l)| c * g(l)).collect();
        (0..n).map(|x| (0..n).map(|j| self.vectors[(x, j)] * w[j]).sum()).collect()
    }

    /// `(g(L) f)(x)` at one vertex.
    pub fn synthesize_at(&self, coeffs: &[f64], x: usize, g: impl Fn(f64) -> f64) -> f64 {
        coeffs
            .iter()
            .zip(&self.eigenvalues)
            .enumerate()
            .map(|(j, (c, &l))| self.vectors[(x, j)] * c * g(l))
            .sum()
    }

    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j).iter().copied().collect()
    }
}

/// Generalized Gauss–Laguerre rule for the weight `s^alpha e^{-s}` on `(0, inf)`
/// (Golub–Welsch).
pub fn gauss_laguerre(points: usize, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if points == 0 || !(alpha > -1.0) {
        return domain("Gauss–Laguerre needs points >= 1 and alpha > -1");
    }
    let mut j = DMatrix::<f64>::zeros(points, points);
    for i in 0..points {
        j[(i, i)] = 2.0 * i as f64 + alpha + 1.0;
        if i + 1 < points {
            let b = ((i + 1) as f64 * (i as f64 + 1.0 + alpha)).sqrt();
            j[(i, i + 1)] = b;
            j[(i + 1, i)] = b;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mu0 = gamma(alpha + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// `Gamma(m)^{-1} int_0^inf e^{-s} s^{m-1} e^{-s t lambda} ds` by Gauss–Laguerre.
///
/// The variable is rescaled by `max(1, t lambda)` so that the remaining
/// factor of the integrand decays no faster than the rule's weight.
pub fn laguerre_resolvent_symbol(nodes: &[f64], weights: &[f64], m: u32, t_lambda: f64) -> f64 {
    let beta = t_lambda.max(1.0);
    let a = (1.0 + t_lambda) / beta - 1.0;
    let sum: f64 = nodes.iter().zip(weights).map(|(s, w)| w * (-a * s).exp()).sum();
    sum / (gamma(m as f64) * beta.powi(m as i32))
}

/// Compares the solved kernel of `(I + tL)^{-m}` with the Gamma-integral of
/// the spectral heat semigroup; returns `max |Q - T| / max |T|`.
pub fn semigroup_representation_check(mesh: &ManifoldMesh, t: f64, m: u32, quad_points: usize) -> Result<f64> {
    if quad_points < 32 {
        return domain(format!("semigroup check needs >= 32 quadrature points, got {quad_points}"));
    }
    let solved = resolvent_matrix(mesh, t, m)?;
    let spec = SpectralDecomposition::new(mesh);
    let (nodes, weights) = gauss_laguerre(quad_points, m as f64 - 1.0)?;
    let quad = spec.kernel(KernelKind::Resolvent, t, m, |l| {
        laguerre_resolvent_symbol(&nodes, &weights, m, t * l.max(0.0))
    });
    Ok(quad.max_abs_diff(&solved) / solved.max_abs())
}

/// Max entry deviation between `(I+tL)^{-1} tL (I+tL)^{-(m-1)}` and
/// `(I+tL)^{-(m-1)} - (I+tL)^{-m}`, relative to the largest entry of the two
/// resolvent kernels.
pub fn horizontal_identity_check(mesh: &ManifoldMesh, t: f64, m: u32) -> Result<f64> {
    let op = ResolventOperator::new(mesh, t, m)?;
    let n = mesh.len();
    let per_col = parallel::map_range(n, |y| {
        let d = delta(n, y, mesh.vertex(y).measure);
        let prev = op.apply_pow(&d, m - 1);
        let cur = op.apply_pow(&prev, 1);
        // (I + tL)^{-1} commutes with L; applying L first keeps the
        // high-frequency roundoff damped by the final solve.
        let tl_prev: Vec<f64> = mesh.laplacian(&prev).into_iter().map(|v| t * v).collect();
        let lhs = op.apply_pow(&tl_prev, 1);
        let scale = prev.iter().chain(&cur).fold(0.0f64, |a, v| a.max(v.abs()));
        let dev = lhs
            .iter()
            .zip(prev.iter().zip(&cur))
            .fold(0.0f64, |a, (l, (p, c))| a.max((l - (p - c)).abs()));
        (dev, scale)
    });
    let scale = per_col.iter().fold(0.0f64, |a, c| a.max(c.1));
    let dev = per_col.iter().fold(0.0f64, |a, c| a.max(c.0));
    if scale == 0.0 {
        return Err(Error::Solver("degenerate resolvent kernel".into()));
    }
    Ok(dev / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EndSpec;

    fn small_mesh() -> ManifoldMesh {
        ManifoldMesh::build(&[EndSpec::new(3, 30.0, 31), EndSpec::new(4, 30.0, 30)], 1).unwrap()
    }

    #[test]
    fn identity_at_t_zero() {
        let mesh = small_mesh();
        let t = resolvent_matrix(&mesh, 0.0, 2).unwrap();
        for x in 0..mesh.len() {
            for y in 0..mesh.len() {
                let e = if x == y { 1.0 / mesh.vertex(y).measure } else { 0.0 };
                assert_eq!(t.get(x, y), e);
            }
        }
    }

    #[test]
    fn mass_conservation_and_symmetry() {
        let mesh = small_mesh();
        for &(t, m) in &[(0.5, 1), (10.0, 2), (300.0, 3)] {
            let k = resolvent_matrix(&mesh, t, m).unwrap();
            let ones = vec![1.0; mesh.len()];
            for v in k.apply(&ones) {
                assert!((v - 1.0).abs() < 1e-10);
            }
            assert!(k.asymmetry() < 1e-12 * k.max_abs());
            assert!((0..mesh.len()).all(|x| k.row(x).iter().all(|v| *v >= 0.0)));
        }
    }

    #[test]
    fn spectral_oracle_matches_solves() {
        let mesh = small_mesh();
        assert_eq!(mesh.len(), 64);
        let spec = SpectralDecomposition::new(&mesh);
        assert!(spec.eigenvalues[0].abs() < 1e-10);
        assert!(spec.eigenvalues.iter().all(|l| *l > -1e-10));
        for &(t, m) in &[(1.0, 1), (10.0, 3)] {
            let solved = resolvent_matrix(&mesh, t, m).unwrap();
            let exact = spec.kernel(KernelKind::Resolvent, t, m, |l| (1.0 + t * l).powi(-(m as i32)));
            assert!(exact.max_abs_diff(&solved) / solved.max_abs() < 1e-9);
        }
    }

    #[test]
    fn laguerre_scalar_model() {
        let (x, w) = gauss_laguerre(64, 0.0).unwrap();
        for &tl in &[0.0, 0.3, 1.0, 7.0, 1e3, 1e8] {
            let q = laguerre_resolvent_symbol(&x, &w, 1, tl);
            assert!((q * (1.0 + tl) - 1.0).abs() < 1e-10, "tl={tl}");
        }
    }

    #[test]
    fn laguerre_error_shrinks_with_points() {
        let errs: Vec<f64> = [4usize, 8, 16]
            .iter()
            .map(|&p| {
                let (x, w) = gauss_laguerre(p, 2.0).unwrap();
                (laguerre_resolvent_symbol(&x, &w, 3, 1.0) * 8.0 - 1.0).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
    }

    #[test]
    fn semigroup_representation_small_mesh() {
        let mesh = small_mesh();
        assert!(semigroup_representation_check(&mesh, 10.0, 3, 64).unwrap() < 1e-8);
        assert!(semigroup_representation_check(&mesh, 0.0, 1, 64).unwrap() < 1e-12);
        assert!(semigroup_representation_check(&mesh, 1.0, 1, 16).is_err());
    }

    #[test]
    fn horizontal_identity() {
        let mesh = small_mesh();
        assert!(horizontal_identity_check(&mesh, 5.0, 1).unwrap() < 1e-12);
        assert!(horizontal_identity_check(&mesh, 100.0, 3).unwrap() < 1e-12);
        let (t, l): (f64, f64) = (1.0, 2.0);
        let lhs = t * l / (1.0 + t * l).powi(2);
        let rhs = 1.0 / (1.0 + t * l) - 1.0 / (1.0 + t * l).powi(2);
        assert!((lhs - 2.0 / 9.0).abs() < 1e-15 && (rhs - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn vertical_kills_constants() {
        let mesh = small_mesh();
        let op = ResolventOperator::new(&mesh, 4.0, 2).unwrap();
        let v = op.vertical(&vec![1.0; mesh.len()]);
        assert!(v.iter().all(|x| x.abs() < 1e-12));
        assert!(vertical_matrix(&mesh, 0.0, 1).is_err());
    }
}
