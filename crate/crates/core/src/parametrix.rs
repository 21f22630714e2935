//! Parametrix ingredients for `(L + k^2)^{-m}` on a manifold with ends:
//! cutoffs `phi_i`, the Key-Lemma correctors `u_i`, the weight profiles
//! `omega_a`, the explicit terms `G_1`, `G_3`, and the envelope test for the
//! remainder left after subtracting `G_1`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::fit::{linear_fit, loglog_fit};
use crate::mesh::{GradientField, ManifoldMesh, Region};
use crate::parallel;
use crate::resolvent::{shifted_resolvent_matrix, KernelKind, KernelMatrix, ShiftedInverse};
use crate::specfun::{gamma, radial_resolvent_kernel};

/// Smooth ramp `0` for `r <= a`, `1` for `r >= b`, quintic (C^2) in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffProfile {
    pub a: f64,
    pub b: f64,
}

impl Default for CutoffProfile {
    fn default() -> Self {
        CutoffProfile { a: 2.0, b: 4.0 }
    }
}

impl CutoffProfile {
    pub fn value(&self, r: f64) -> f64 {
        if r <= self.a {
            0.0
        } else if r >= self.b {
            1.0
        } else {
            let s = (r - self.a) / (self.b - self.a);
            s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
        }
    }

    /// `phi_i` on the mesh: the ramp on end `i`, zero elsewhere.
    pub fn on_end(&self, mesh: &ManifoldMesh, end: usize) -> Vec<f64> {
        mesh.vertices()
            .iter()
            .map(|v| match v.region {
                Region::End(e) if e == end => self.value(v.r),
                _ => 0.0,
            })
            .collect()
    }
}

/// `<x> = (1 + x^2)^{1/2}`.
pub fn japanese_bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Weight profile `omega_a(., k)` with decay constant `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightProfile {
    pub a: u32,
    pub c: f64,
}

impl WeightProfile {
    pub fn new(a: u32, c: f64) -> Result<Self> {
        if a != 1 && a != 2 {
            return domain(format!("weight index a must be 1 or 2, got {a}"));
        }
        if !(c > 0.0 && c <= 1.0) {
            return domain(format!("decay constant c must lie in (0, 1], got {c}"));
        }
        Ok(WeightProfile { a, c })
    }

    /// `<d>^{-(n - a)} exp(-c k d)` at anchor distance `d` on an end of dimension `n`.
    pub fn end_value(&self, n: u32, d: f64, k: f64) -> f64 {
        japanese_bracket(d).powf(-(n as f64 - self.a as f64)) * (-self.c * k * d).exp()
    }

    pub fn evaluate(&self, mesh: &ManifoldMesh, k: f64) -> Result<Vec<f64>> {
        if !(k > 0.0 && k <= 1.0) {
            return domain(format!("k must lie in (0, 1], got {k}"));
        }
        Ok((0..mesh.len())
            .map(|x| match mesh.vertex(x).region {
                Region::Center => 1.0,
                Region::End(i) => self.end_value(mesh.ends()[i].n, mesh.anchor_distance(x), k),
            })
            .collect())
    }
}

/// `omega_a(x, k)` over all vertices with the default decay constant.
pub fn omega(mesh: &ManifoldMesh, a: u32, k: f64, c: f64) -> Result<Vec<f64>> {
    WeightProfile::new(a, c)?.evaluate(mesh, k)
}

#[derive(Debug, Clone)]
pub struct KeyLemmaSolution {
    pub end: usize,
    pub k: f64,
    pub u: Vec<f64>,
    pub grad: GradientField,
    /// `||(L + k^2) u - v||_inf / ||v||_inf`.
    pub residual: f64,
}

/// Exponents fitted from a Key-Lemma solution on its own end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub value_slope: f64,
    pub gradient_slope: f64,
    /// Slope of `log |u|` against `d` (exponential rate).
    pub exponential_rate: f64,
}

/// Solves `(L + k^2) u_i = v_i` with `v_i = -L phi_i`.
pub fn key_lemma_solve(mesh: &ManifoldMesh, end: usize, k: f64) -> Result<KeyLemmaSolution> {
    key_lemma_solve_with(mesh, end, k, &CutoffProfile::default())
}

pub fn key_lemma_solve_with(mesh: &ManifoldMesh, end: usize, k: f64, cutoff: &CutoffProfile) -> Result<KeyLemmaSolution> {
    if !(k > 0.0 && k <= 1.0) {
        return domain(format!("k must lie in (0, 1], got {k}"));
    }
    if end >= mesh.ends().len() {
        return domain(format!("no end with index {end}"));
    }
    let phi = cutoff.on_end(mesh, end);
    let v: Vec<f64> = mesh.laplacian(&phi).into_iter().map(|x| -x).collect();
    let inv = ShiftedInverse::new(mesh, k * k, 1.0)?;
    let u = inv.apply(&v);
    let lu = mesh.laplacian(&u);
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let residual = lu
        .iter()
        .zip(&u)
        .zip(&v)
        .fold(0.0f64, |m, ((l, u), v)| m.max((l + k * k * u - v).abs()))
        / vmax;
    if !(residual <= 1e-10) {
        return Err(Error::Solver(format!("Key-Lemma residual {residual:e} exceeds 1e-10")));
    }
    let grad = mesh.gradient_magnitude(&u);
    Ok(KeyLemmaSolution { end, k, u, grad, residual })
}

impl KeyLemmaSolution {
    /// Fits on end `self.end` over radii in `[lo, hi]`: power-law slopes of
    /// `|u|` and `|grad u|` against `<r>`, and the exponential rate of
    /// `log |u|` against `r`.
    pub fn decay_fit(&self, mesh: &ManifoldMesh, lo: f64, hi: f64) -> Result<DecayFit> {
        let xs = mesh.radial_vertices(self.end, lo, hi);
        if xs.len() < 5 {
            return domain("decay fit needs at least 5 vertices in range");
        }
        let r: Vec<f64> = xs.iter().map(|&x| mesh.vertex(x).r).collect();
        let br: Vec<f64> = r.iter().map(|&r| japanese_bracket(r)).collect();
        let uv: Vec<f64> = xs.iter().map(|&x| self.u[x].abs()).collect();
        let gv: Vec<f64> = xs.iter().map(|&x| self.grad.0[x]).collect();
        let logu: Vec<f64> = uv.iter().map(|u| u.ln()).collect();
        Ok(DecayFit {
            value_slope: loglog_fit(&br, &uv)?.slope,
            gradient_slope: loglog_fit(&br, &gv)?.slope,
            exponential_rate: linear_fit(&r, &logu)?.slope,
        })
    }
}

/// Stencil points and weights for `d^order/dx^order` at `x` (central binomial
/// differences with one Richardson step), so vector-valued functions can be
/// differentiated entrywise.
fn derivative_stencil(x: f64, order: usize, h: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (step, weight) in [(h, -1.0 / 3.0), (h / 2.0, 4.0 / 3.0)] {
        let mut binom = 1.0;
        for i in 0..=order {
            let offset = (order as f64 / 2.0 - i as f64) * step;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            out.push((x + offset, weight * sign * binom / step.powi(order as i32)));
            binom = binom * (order - i) as f64 / (i + 1) as f64;
        }
    }
    out
}

/// Discrete companion of `G_1`: the single-end probe resolvent on the same
/// radial grid, masked by `phi_i(x) phi_i(y)`.
pub fn companion_g1(mesh: &ManifoldMesh, k: f64, m: u32, cutoff: &CutoffProfile) -> Result<KernelMatrix> {
    check_k(k)?;
    let n = mesh.len();
    let mut data = vec![0.0; n * n];
    for (i, end) in mesh.ends().iter().enumerate() {
        let probe = ManifoldMesh::probe(end)?;
        let t = shifted_resolvent_matrix(&probe, k, m)?;
        let range = mesh.end_range(i);
        let phi = cutoff.on_end(mesh, i);
        for x in range.clone() {
            if phi[x] == 0.0 {
                continue;
            }
            for y in range.clone() {
                data[x * n + y] = phi[x] * phi[y] * t.get(x - range.start, y - range.start);
            }
        }
    }
    Ok(KernelMatrix::from_fn(mesh.measures(), KernelKind::Remainder, 1.0 / (k * k), m, |x, y| data[x * n + y]))
}

/// Largest relative deviation between the closed-form radial kernel and the
/// discrete single-end resolvent over vertex pairs with radii in `[lo, hi]`.
pub fn single_end_control(end: &crate::mesh::EndSpec, k: f64, m: u32, lo: f64, hi: f64) -> Result<f64> {
    check_k(k)?;
    let probe = ManifoldMesh::probe(end)?;
    let discrete = shifted_resolvent_matrix(&probe, k, m)?;
    let xs = probe.radial_vertices(0, lo, hi);
    if xs.is_empty() {
        return domain(format!("no vertices with radius in [{lo}, {hi}]"));
    }
    let rows = parallel::map(&xs, |&x| -> Result<f64> {
        let mut worst = 0.0f64;
        for &y in &xs {
            let g = radial_resolvent_kernel(end.n, m, k, probe.vertex(x).r, probe.vertex(y).r)?;
            let t = discrete.get(x, y);
            worst = worst.max((g - t).abs() / t.abs());
        }
        Ok(worst)
    });
    rows.into_iter().try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

#[derive(Debug, Clone)]
pub struct ParametrixTerms {
    pub g1: KernelMatrix,
    pub g3: KernelMatrix,
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k <= 1.0) {
        return domain(format!("k must lie in (0, 1], got {k}"));
    }
    Ok(())
}

/// `G_1` block for order `m`: radial Euclidean kernels masked by `phi_i(x) phi_i(y)`.
pub fn assemble_g1(mesh: &ManifoldMesh, k: f64, m: u32, cutoff: &CutoffProfile) -> Result<KernelMatrix> {
    check_k(k)?;
    let n = mesh.len();
    let phi: Vec<f64> = mesh.vertices().iter().map(|v| cutoff.value(v.r)).collect();
    let rows = parallel::map_range(n, |x| -> Result<Vec<f64>> {
        let vx = mesh.vertex(x);
        let mut row = vec![0.0; n];
        if let Region::End(i) = vx.region {
            if phi[x] > 0.0 {
                let dim = mesh.ends()[i].n;
                for y in mesh.end_range(i) {
                    let vy = mesh.vertex(y);
                    if phi[y] > 0.0 && vy.mode == vx.mode {
                        let modes = mesh.ends()[i].cross_modes as f64;
                        row[y] = modes * radial_resolvent_kernel(dim, m, k, vx.r, vy.r)? * phi[x] * phi[y];
                    }
                }
            }
        }
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(KernelMatrix::from_fn(mesh.measures(), KernelKind::Remainder, 1.0 / (k * k), m, |x, y| rows[x][y]))
}

/// `G_1` and `G_3` for order `m`. `G_3(x, y) = G(x_i°, y) u_i(x, k) phi_i(y)`,
/// differentiated `m - 1` times in `k^2` by finite differences.
pub fn assemble_g1_g3(mesh: &ManifoldMesh, k: f64, m: u32) -> Result<ParametrixTerms> {
    check_k(k)?;
    if m < 1 {
        return domain("resolvent order m must be >= 1");
    }
    let cutoff = CutoffProfile::default();
    let g1 = assemble_g1(mesh, k, m, &cutoff)?;
    let n = mesh.len();
    let kappa = k * k;
    let order = (m - 1) as usize;
    let stencil = if order == 0 { vec![(kappa, 1.0)] } else { derivative_stencil(kappa, order, 0.08 * kappa) };
    let scale = if order % 2 == 0 { 1.0 } else { -1.0 } / gamma(m as f64);

    let mut g3 = vec![0.0; n * n];
    for (i, end) in mesh.ends().iter().enumerate() {
        let phi = cutoff.on_end(mesh, i);
        let r0 = end.r_min;
        let v: Vec<f64> = mesh.laplacian(&phi).into_iter().map(|x| -x).collect();
        for &(kap, w) in &stencil {
            let kk = kap.sqrt();
            let u = ShiftedInverse::new(mesh, kap, 1.0)?.apply(&v);
            for y in mesh.end_range(i) {
                if phi[y] == 0.0 {
                    continue;
                }
                let gy = radial_resolvent_kernel(end.n, 1, kk, r0, mesh.vertex(y).r)? * phi[y];
                for x in 0..n {
                    g3[x * n + y] += scale * w * gy * u[x];
                }
            }
        }
    }
    let g3 = KernelMatrix::from_fn(mesh.measures(), KernelKind::Remainder, 1.0 / kappa, m, |x, y| g3[x * n + y]);
    Ok(ParametrixTerms { g1, g3 })
}

/// Ratio of the second to the first singular value of the end-`i` column block of `g3`.
pub fn block_rank_ratio(mesh: &ManifoldMesh, g3: &KernelMatrix, end: usize) -> f64 {
    let cols: Vec<usize> = mesh.end_range(end).collect();
    let n = mesh.len();
    let m = DMatrix::from_fn(n, cols.len(), |x, j| g3.get(x, cols[j]));
    let sv = m.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] == 0.0 {
        return 0.0;
    }
    s.get(1).copied().unwrap_or(0.0) / s[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderRow {
    pub k: f64,
    pub sup_ratio: f64,
    pub grad_sup_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderReport {
    pub m: u32,
    pub c: f64,
    pub rows: Vec<RemainderRow>,
    /// `max / min` of `sup_ratio` over the k grid.
    pub variation: f64,
    pub grad_variation: f64,
}

impl RemainderReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "sup_ratio", "grad_sup_ratio"])?;
        for r in &self.rows {
            wtr.write_record([format!("{:.6e}", r.k), format!("{:.12e}", r.sup_ratio), format!("{:.12e}", r.grad_sup_ratio)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn variation(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::MIN, f64::max);
    let min = v.fold(f64::MAX, f64::min);
    max / min
}

/// Envelope ratios for `H_rem(k) = (L + k^2)^{-m} - G_1^{(m)}(k)` at one `k`,
/// for every decay constant in `cs`, with the discrete companion standing in
/// for `G_1`. The sup runs over vertices with radius at most `r_cap`.
fn remainder_ratios(mesh: &ManifoldMesh, k: f64, m: u32, cs: &[f64], r_cap: f64) -> Result<Vec<(f64, f64)>> {
    let exact = shifted_resolvent_matrix(mesh, k, m)?;
    let g1 = companion_g1(mesh, k, m, &CutoffProfile::default())?;
    let n = mesh.len();
    let inside: Vec<usize> = (0..n).filter(|&x| mesh.vertex(x).r <= r_cap).collect();
    let pre = k.powi(-2 * (m as i32 - 1));
    let cols = parallel::map(&inside, |&y| {
        let col: Vec<f64> = (0..n).map(|x| exact.get(x, y) - g1.get(x, y)).collect();
        let grad = mesh.gradient_magnitude(&col).0;
        (y, col, grad)
    });
    cs.iter()
        .map(|&c| {
            let w1 = omega(mesh, 1, k, c)?;
            let w2 = omega(mesh, 2, k, c)?;
            let mut sup = 0.0f64;
            let mut gsup = 0.0f64;
            for (y, col, grad) in &cols {
                for &x in &inside {
                    sup = sup.max(col[x].abs() / (pre * w2[x] * w2[*y]));
                    gsup = gsup.max(grad[x] / (pre * w1[x] * w2[*y]));
                }
            }
            Ok((sup, gsup))
        })
        .collect()
}

/// Candidate decay constants, tried in order; the first whose ratios vary by
/// at most `max_variation` over the k grid is reported.
pub const DECAY_CANDIDATES: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

pub fn remainder_bound_check(mesh: &ManifoldMesh, k_grid: &[f64], m: u32, max_variation: f64) -> Result<RemainderReport> {
    if k_grid.is_empty() {
        return domain("empty k grid");
    }
    for &k in k_grid {
        check_k(k)?;
    }
    let r_cap = mesh.ends().iter().map(|e| e.r_max).fold(f64::INFINITY, f64::min) / 4.0;
    let per_k = k_grid
        .iter()
        .map(|&k| remainder_ratios(mesh, k, m, &DECAY_CANDIDATES, r_cap))
        .collect::<Result<Vec<_>>>()?;
    let build = |ci: usize| {
        let rows: Vec<RemainderRow> = k_grid
            .iter()
            .zip(&per_k)
            .map(|(&k, r)| RemainderRow { k, sup_ratio: r[ci].0, grad_sup_ratio: r[ci].1 })
            .collect();
        RemainderReport {
            m,
            c: DECAY_CANDIDATES[ci],
            variation: variation(rows.iter().map(|r| r.sup_ratio)),
            grad_variation: variation(rows.iter().map(|r| r.grad_sup_ratio)),
            rows,
        }
    };
    let mut best = build(0);
    for ci in 0..DECAY_CANDIDATES.len() {
        let rep = build(ci);
        if rep.variation <= max_variation && rep.grad_variation <= max_variation {
            return Ok(rep);
        }
        if rep.variation.max(rep.grad_variation) < best.variation.max(best.grad_variation) {
            best = rep;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EndSpec;

    fn mesh() -> ManifoldMesh {
        ManifoldMesh::build(&[EndSpec::new(3, 200.0, 60), EndSpec::new(4, 200.0, 60)], 1).unwrap()
    }

    #[test]
    fn cutoff_profile_shape() {
        let c = CutoffProfile::default();
        assert_eq!(c.value(1.0), 0.0);
        assert_eq!(c.value(2.0), 0.0);
        assert_eq!(c.value(4.0), 1.0);
        assert!((c.value(3.0) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=100 {
            let v = c.value(2.0 + 0.02 * i as f64);
            assert!((0.0..=1.0).contains(&v) && v >= prev);
            prev = v;
        }
    }

    #[test]
    fn omega_examples() {
        let w2 = WeightProfile::new(2, 1.0).unwrap();
        assert!((w2.end_value(3, 10.0, 1e-14) - 101f64.powf(-0.5)).abs() < 1e-9);
        assert!((w2.end_value(3, 10.0, 1e-14) - 0.0995037).abs() < 1e-7);
        let w1 = WeightProfile::new(1, 1.0).unwrap();
        assert!((w1.end_value(3, 10.0, 0.1) - (-1.0f64).exp() / 101.0).abs() < 1e-15);
        assert!((w1.end_value(3, 10.0, 0.1) - 0.0036420).abs() < 1e-6);
        assert!(WeightProfile::new(3, 0.5).is_err());
        let m = mesh();
        let o = omega(&m, 2, 0.1, 0.5).unwrap();
        for x in m.center() {
            assert_eq!(o[x], 1.0);
        }
        assert!(omega(&m, 1, 0.0, 0.5).is_err());
    }

    #[test]
    fn omega_ordering() {
        let m = mesh();
        for &k in &[1.0, 0.3, 0.01] {
            let o1 = omega(&m, 1, k, 0.5).unwrap();
            let o2 = omega(&m, 2, k, 0.5).unwrap();
            for (a, b) in o1.iter().zip(&o2) {
                assert!(*a <= *b && *b <= 1.0 && *a > 0.0);
            }
        }
    }

    #[test]
    fn key_lemma_residual_and_decay() {
        let m = mesh();
        let sol = key_lemma_solve(&m, 0, 1.0).unwrap();
        assert!(sol.residual <= 1e-10);
        let fit = sol.decay_fit(&m, 8.0, 50.0).unwrap();
        assert!(fit.exponential_rate <= -0.5, "{fit:?}");
        assert!(key_lemma_solve(&m, 0, 0.0).is_err());
        assert!(key_lemma_solve(&m, 5, 0.5).is_err());
    }

    #[test]
    fn g1_vanishes_across_ends() {
        let m = mesh();
        let terms = assemble_g1_g3(&m, 0.2, 1).unwrap();
        for x in m.end_range(0) {
            for y in m.end_range(1) {
                assert_eq!(terms.g1.get(x, y), 0.0);
                assert_eq!(terms.g1.get(y, x), 0.0);
            }
        }
        for i in 0..2 {
            assert!(block_rank_ratio(&m, &terms.g3, i) < 1e-8);
        }
    }

    #[test]
    fn companion_removes_discretization_error() {
        let m = mesh();
        let rep = remainder_bound_check(&m, &[0.4, 0.2, 0.1], 1, 5.0).unwrap();
        assert_eq!(rep.c, 0.5);
        assert!(rep.variation <= 5.0 && rep.grad_variation <= 5.0, "{rep:?}");
        let g = companion_g1(&m, 0.2, 1, &CutoffProfile::default()).unwrap();
        assert_eq!(g.get(m.end_range(0).start + 30, m.end_range(1).start + 30), 0.0);
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("k,sup_ratio,grad_sup_ratio\n"));
    }

    #[test]
    fn closed_form_matches_single_end() {
        let spec = EndSpec::new(3, 200.0, 120);
        assert!(single_end_control(&spec, 0.1, 1, 8.0, 50.0).unwrap() < 0.05);
        assert!(single_end_control(&spec, 0.1, 2, 8.0, 50.0).unwrap() < 0.05);
    }

    #[test]
    fn derivative_stencil_matches_polynomial() {
        let f = |x: f64| x.powi(4);
        let st = derivative_stencil(1.5, 2, 0.1);
        let d2: f64 = st.iter().map(|(x, w)| w * f(*x)).sum();
        assert!((d2 - 12.0 * 1.5 * 1.5).abs() < 1e-9);
    }
}
