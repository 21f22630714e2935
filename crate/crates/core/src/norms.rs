//! Operator norms on `L^p(mu)`: Schur mixed norms, interpolation upper
//! bounds, nonlinear power-iteration lower bounds, the explicit extremal
//! family for the vertical resolvent, the exponent case calculus, and
//! scaling-exponent fits in `log sqrt(t)`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::fit::loglog_fit;
use crate::mesh::{lp_norm, ManifoldMesh, Region};
use crate::parametrix::japanese_bracket;
use crate::resolvent::{resolvent_matrix, KernelMatrix, ResolventOperator};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedMode {
    /// `sup_y sum_x |T(x, y)| mu_x`, the `1 -> 1` norm.
    L1xLinfY,
    /// `sup_x sum_y |T(x, y)| mu_y`, the `inf -> inf` norm.
    LinfxL1y,
}

pub fn mixed_norm(t: &KernelMatrix, mode: MixedMode) -> f64 {
    let n = t.dim();
    let mu = t.measures();
    match mode {
        MixedMode::L1xLinfY => {
            let mut cols = vec![0.0; n];
            for x in 0..n {
                for (c, v) in cols.iter_mut().zip(t.row(x)) {
                    *c += v.abs() * mu[x];
                }
            }
            cols.into_iter().fold(0.0, f64::max)
        }
        MixedMode::LinfxL1y => (0..n)
            .map(|x| t.row(x).iter().zip(mu).map(|(v, m)| v.abs() * m).sum::<f64>())
            .fold(0.0, f64::max),
    }
}

/// `sup_y ||T(., y)||_{L^q(mu)}`, the `1 -> q` norm of a kernel operator.
pub fn mixed_lq_norm(t: &KernelMatrix, q: f64) -> Result<f64> {
    let n = t.dim();
    let mut best = 0.0f64;
    for y in 0..n {
        let col: Vec<f64> = (0..n).map(|x| t.get(x, y)).collect();
        best = best.max(lp_norm(t.measures(), &col, q)?);
    }
    Ok(best)
}

/// `1/p + 1/p' = 1`.
pub fn dual_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return domain(format!("p must lie in [1, inf], got {p}"));
    }
    Ok(())
}

/// Riesz-Thorin interpolant of the `(1, 1)` and `(inf, inf)` endpoint norms.
pub fn interpolation_upper(n11: f64, ninf: f64, p: f64) -> f64 {
    if p.is_infinite() {
        ninf
    } else {
        n11.powf(1.0 / p) * ninf.powf(1.0 - 1.0 / p)
    }
}

/// A (possibly sublinear) operator on vertex functions with a linearization
/// whose `mu`-adjoint can be applied.
pub trait PNormOperator: Sync {
    fn measures(&self) -> &[f64];
    fn apply(&self, f: &[f64]) -> Vec<f64>;
    /// Adjoint of the linearization of `apply` at `f`, applied to `h`.
    fn linearized_adjoint(&self, f: &[f64], h: &[f64]) -> Vec<f64>;
}

impl PNormOperator for KernelMatrix {
    fn measures(&self) -> &[f64] {
        KernelMatrix::measures(self)
    }
    fn apply(&self, f: &[f64]) -> Vec<f64> {
        KernelMatrix::apply(self, f)
    }
    fn linearized_adjoint(&self, _f: &[f64], h: &[f64]) -> Vec<f64> {
        self.apply_adjoint(h)
    }
}

/// `f -> sqrt(t) |grad (I + tL)^{-m} f|`, the true vertical operator.
pub struct VerticalOperator<'a> {
    op: ResolventOperator<'a>,
    measures: Vec<f64>,
}

impl<'a> VerticalOperator<'a> {
    pub fn new(mesh: &'a ManifoldMesh, t: f64, m: u32) -> Result<Self> {
        if !(t > 0.0) {
            return domain(format!("vertical operator needs t > 0, got {t}"));
        }
        Ok(VerticalOperator { op: ResolventOperator::new(mesh, t, m)?, measures: mesh.measures() })
    }
}

impl PNormOperator for VerticalOperator<'_> {
    fn measures(&self) -> &[f64] {
        &self.measures
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.op.vertical(f)
    }

    fn linearized_adjoint(&self, f: &[f64], h: &[f64]) -> Vec<f64> {
        let mesh = self.op.mesh();
        let s = self.op.t.sqrt();
        let g = self.op.apply(f);
        let mut q = vec![0.0; mesh.len()];
        for x in 0..mesh.len() {
            let edges = mesh.edges(x);
            let weights = mesh.grad_weights(x);
            let comps: Vec<f64> = edges
                .iter()
                .zip(weights)
                .map(|(e, w)| w.sqrt() * (g[e.to] - g[x]) / e.length)
                .collect();
            let norm = comps.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let scale = self.measures[x] * h[x] * s / norm;
            for ((e, w), c) in edges.iter().zip(weights).zip(&comps) {
                let a = scale * c * w.sqrt() / e.length;
                q[e.to] += a;
                q[x] -= a;
            }
        }
        for (v, m) in q.iter_mut().zip(&self.measures) {
            *v /= m;
        }
        self.op.apply(&q)
    }
}

/// Settings for the nonlinear power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerIteration {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration { restarts: 5, max_iter: 400, tol: 1e-8, seed: 0 }
    }
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

fn ratio<O: PNormOperator + ?Sized>(op: &O, f: &[f64], p: f64) -> Result<f64> {
    let den = lp_norm(op.measures(), f, p)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(lp_norm(op.measures(), &op.apply(f), p)? / den)
}

/// Boyd-type iteration `f <- psi_{p'}(A*_f psi_p(A f))` from one start;
/// returns the largest ratio `||A f||_p / ||f||_p` encountered.
pub fn power_iteration<O: PNormOperator + ?Sized>(op: &O, p: f64, start: &[f64], cfg: &PowerIteration) -> Result<f64> {
    check_p(p)?;
    if !(p > 1.0 && p.is_finite()) {
        return domain("power iteration needs 1 < p < inf");
    }
    let pd = dual_exponent(p);
    let mu = op.measures();
    let mut f = start.to_vec();
    let norm = lp_norm(mu, &f, p)?;
    if norm == 0.0 {
        return Ok(0.0);
    }
    f.iter_mut().for_each(|v| *v /= norm);
    let mut best = 0.0f64;
    let mut prev = 0.0f64;
    for _ in 0..cfg.max_iter {
        let af = op.apply(&f);
        let r = lp_norm(mu, &af, p)?;
        best = best.max(r);
        if r == 0.0 || (r - prev).abs() <= cfg.tol * r {
            break;
        }
        prev = r;
        let h: Vec<f64> = af.iter().map(|v| signed_pow(v / r, p - 1.0)).collect();
        let z = op.linearized_adjoint(&f, &h);
        let next: Vec<f64> = z.iter().map(|v| signed_pow(*v, pd - 1.0)).collect();
        let norm = lp_norm(mu, &next, p)?;
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        f = next.into_iter().map(|v| v / norm).collect();
    }
    Ok(best)
}

/// Random starts drawn from the stream keyed by `(seed, t, p, restart)`.
fn random_start(n: usize, cfg: &PowerIteration, key: &[u64], restart: usize) -> Vec<f64> {
    let mut parts = key.to_vec();
    parts.push(restart as u64);
    let mut r = rng::stream(cfg.seed, &parts);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Best lower bound from `cfg.restarts` seeded random starts plus `extra` starts.
pub fn lower_bound<O: PNormOperator + ?Sized>(
    op: &O,
    p: f64,
    extra: &[Vec<f64>],
    key: &[u64],
    cfg: &PowerIteration,
) -> Result<f64> {
    let n = op.measures().len();
    let mut best = 0.0f64;
    for s in extra {
        best = best.max(ratio(op, s, p)?);
        best = best.max(power_iteration(op, p, s, cfg)?);
    }
    for i in 0..cfg.restarts {
        let s = random_start(n, cfg, key, i);
        best = best.max(ratio(op, &s, p)?);
        best = best.max(power_iteration(op, p, &s, cfg)?);
    }
    Ok(best)
}

/// Exact `||T||_{2 -> 2}`: largest singular value of `M^{1/2} T M^{1/2}`.
pub fn l2_norm(t: &KernelMatrix) -> f64 {
    let mu = t.measures();
    let a = DMatrix::from_fn(t.dim(), t.dim(), |x, y| mu[x].sqrt() * t.get(x, y) * mu[y].sqrt());
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `(lower, upper)` bounds for `||T||_{p -> p}` of a linear kernel operator.
/// The values at `p = 1, 2, inf` are exact.
pub fn pnorm_bounds(t: &KernelMatrix, p: f64, cfg: &PowerIteration) -> Result<(f64, f64)> {
    check_p(p)?;
    let n11 = mixed_norm(t, MixedMode::L1xLinfY);
    let ninf = mixed_norm(t, MixedMode::LinfxL1y);
    if p == 1.0 {
        return Ok((n11, n11));
    }
    if p.is_infinite() {
        return Ok((ninf, ninf));
    }
    let upper = interpolation_upper(n11, ninf, p);
    let lower = if p == 2.0 {
        l2_norm(t)
    } else {
        lower_bound(t, p, &[], &[t.t.to_bits(), p.to_bits()], cfg)?
    };
    Ok((lower.min(upper), upper))
}

/// Lower bound at `p = inf` for the vertical operator: for each vertex `x`
/// and each edge at `x`, the sign pattern that maximizes that edge's
/// difference quotient of `T f`, evaluated exactly at `x`.
fn vertical_inf_lower(mesh: &ManifoldMesh, t: &KernelMatrix) -> f64 {
    let s = t.t.sqrt();
    let n = mesh.len();
    let mu = mesh.measures();
    let mut best = 0.0f64;
    for x in 0..n {
        for e in mesh.edges(x) {
            let sign: Vec<f64> = (0..n).map(|y| (t.get(e.to, y) - t.get(x, y)).signum()).collect();
            let g = |z: usize| -> f64 { t.row(z).iter().zip(&sign).zip(&mu).map(|((k, s), m)| k * s * m).sum() };
            let gx = g(x);
            let val: f64 = mesh
                .edges(x)
                .iter()
                .zip(mesh.grad_weights(x))
                .map(|(e2, w)| {
                    let d = (g(e2.to) - gx) / e2.length;
                    w * d * d
                })
                .sum::<f64>()
                .sqrt();
            best = best.max(s * val);
        }
    }
    best
}

/// `(lower, upper)` for `||sqrt(t) grad (I + tL)^{-m}||_{p -> p}`. The
/// upper bound interpolates the positive kernel `V`; the lower bound works
/// with the true sublinear operator and includes `extra` starts.
pub fn vertical_norm_bounds(
    mesh: &ManifoldMesh,
    t: f64,
    m: u32,
    p: f64,
    extra: &[Vec<f64>],
    cfg: &PowerIteration,
) -> Result<(f64, f64)> {
    check_p(p)?;
    let v = crate::resolvent::vertical_matrix(mesh, t, m)?;
    let n11 = mixed_norm(&v, MixedMode::L1xLinfY);
    let ninf = mixed_norm(&v, MixedMode::LinfxL1y);
    let upper = interpolation_upper(n11, ninf, p);
    let lower = if p == 1.0 {
        n11
    } else if p.is_infinite() {
        vertical_inf_lower(mesh, &resolvent_matrix(mesh, t, m)?)
    } else {
        let op = VerticalOperator::new(mesh, t, m)?;
        lower_bound(&op, p, extra, &[t.to_bits(), p.to_bits(), m as u64], cfg)?
    };
    Ok((lower.min(upper), upper))
}

/// `f = g^{p'/p}` on end `i` with `g(y) = <d(x_i, y)>^{2 - n_i} e^{-c k d(x_i, y)}`,
/// zero elsewhere, normalized so `||f||_p = 1`.
pub fn lower_bound_family(mesh: &ManifoldMesh, p: f64, k: f64, end: usize, c: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    if !(k > 0.0 && k <= 1.0) {
        return domain(format!("k must lie in (0, 1], got {k}"));
    }
    if end >= mesh.ends().len() {
        return domain(format!("no end with index {end}"));
    }
    let n = mesh.ends()[end].n as f64;
    let e = if p.is_infinite() { 0.0 } else { dual_exponent(p) / p };
    let f: Vec<f64> = (0..mesh.len())
        .map(|x| match mesh.vertex(x).region {
            Region::End(i) if i == end => {
                let d = mesh.anchor_distance(x);
                let g = japanese_bracket(d).powf(2.0 - n) * (-c * k * d).exp();
                g.powf(e)
            }
            _ => 0.0,
        })
        .collect();
    let norm = mesh.lp_norm(&f, p)?;
    Ok(f.into_iter().map(|v| v / norm).collect())
}

/// `g` itself, the Hölder partner of [`lower_bound_family`].
pub fn family_partner(mesh: &ManifoldMesh, k: f64, end: usize, c: f64) -> Vec<f64> {
    let n = mesh.ends()[end].n as f64;
    (0..mesh.len())
        .map(|x| match mesh.vertex(x).region {
            Region::End(i) if i == end => {
                let d = mesh.anchor_distance(x);
                japanese_bracket(d).powf(2.0 - n) * (-c * k * d).exp()
            }
            _ => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseLabel {
    /// `alpha > 0, beta > 0`; never occurs when both dimensions are `>= 3`.
    Case1,
    Case2,
    Case3,
    Case4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseAnalysis {
    pub n_i: u32,
    pub n_j: u32,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub case: CaseLabel,
    /// Total power of `k` including the leading factor `k`; `None` in case 1.
    pub k_exponent: Option<f64>,
}

/// `alpha = -(n_i - 1) p + n_i`, `beta = -(n_j - 2) p' + n_j`. Boundary values
/// `alpha = 0` or `beta = 0` fall on the side where the exponent is continuous.
pub fn case_analysis(n_i: u32, n_j: u32, p: f64) -> Result<CaseAnalysis> {
    check_p(p)?;
    if n_i < 3 || n_j < 3 {
        return domain(format!("dimensions must be >= 3, got ({n_i}, {n_j})"));
    }
    let (ni, nj) = (n_i as f64, n_j as f64);
    let pd = dual_exponent(p);
    let alpha = if p.is_infinite() { f64::NEG_INFINITY } else { -(ni - 1.0) * p + ni };
    let beta = if pd.is_infinite() { f64::NEG_INFINITY } else { -(nj - 2.0) * pd + nj };
    let (case, k_exponent) = match (alpha > 0.0, beta > 0.0) {
        (true, true) => (CaseLabel::Case1, None),
        (false, true) => (CaseLabel::Case2, Some(nj / p - 1.0)),
        (true, false) => (CaseLabel::Case3, Some(ni / pd)),
        (false, false) => (CaseLabel::Case4, Some(1.0)),
    };
    Ok(CaseAnalysis { n_i, n_j, p, alpha, beta, case, k_exponent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares slope of `log value` against `log sqrt(t)`.
pub fn exponent_fit(t_grid: &[f64], values: &[f64]) -> Result<ExponentFit> {
    if t_grid.len() < 5 {
        return domain(format!("exponent fit needs >= 5 points, got {}", t_grid.len()));
    }
    let lo = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().cloned().fold(0.0, f64::max);
    if !(lo > 0.0) || hi / lo < 100.0 * (1.0 - 1e-12) {
        return domain("exponent fit needs a positive t grid spanning >= 2 decades");
    }
    let s: Vec<f64> = t_grid.iter().map(|t| t.sqrt()).collect();
    let f = loglog_fit(&s, values)?;
    Ok(ExponentFit { slope: f.slope, stderr: f.stderr })
}

/// Expected growth exponent `max(0, 1 - n*/p)` in `sqrt(t)`.
pub fn target_slope(n_star: u32, p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else {
        (1.0 - n_star as f64 / p).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormRow {
    pub t: f64,
    pub lower: f64,
    pub upper: f64,
    /// Ratio attained by the explicit extremal family alone.
    pub family: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub p: f64,
    pub m: u32,
    pub rows: Vec<NormRow>,
    pub target_slope: f64,
    /// Fitted on the lower estimates.
    pub fitted: ExponentFit,
    pub upper_fit: ExponentFit,
    pub family_fit: ExponentFit,
}

/// Lower and upper norms of the vertical operator across `t_grid`, with
/// the extremal family placed on the end of minimal dimension.
pub fn norm_scaling(mesh: &ManifoldMesh, m: u32, p: f64, t_grid: &[f64], c: f64, cfg: &PowerIteration) -> Result<NormReport> {
    check_p(p)?;
    let n_star = mesh.critical_dimension();
    let end = mesh.ends().iter().position(|e| e.n == n_star).unwrap_or(0);
    let rows = crate::parallel::map(t_grid, |&t| -> Result<NormRow> {
        let k = (1.0 / t.sqrt()).min(1.0);
        let fam = lower_bound_family(mesh, p, k, end, c)?;
        let op = VerticalOperator::new(mesh, t, m)?;
        let family = ratio(&op, &fam, p)?;
        let (lower, upper) = vertical_norm_bounds(mesh, t, m, p, &[fam], cfg)?;
        Ok(NormRow { t, lower: lower.max(family.min(upper)), upper, family })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let lower: Vec<f64> = rows.iter().map(|r| r.lower).collect();
    let upper: Vec<f64> = rows.iter().map(|r| r.upper).collect();
    let family: Vec<f64> = rows.iter().map(|r| r.family).collect();
    Ok(NormReport {
        p,
        m,
        target_slope: target_slope(n_star, p),
        fitted: exponent_fit(t_grid, &lower)?,
        upper_fit: exponent_fit(t_grid, &upper)?,
        family_fit: exponent_fit(t_grid, &family)?,
        rows,
    })
}

/// Writes `t, p, lower, upper, target_slope, fitted_slope, stderr` rows for each report.
pub fn write_norm_csv<W: Write>(w: W, reports: &[NormReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "p", "lower", "upper", "target_slope", "fitted_slope", "stderr"])?;
    for rep in reports {
        for r in &rep.rows {
            wtr.write_record([
                format!("{:.6e}", r.t),
                format!("{}", rep.p),
                format!("{:.12e}", r.lower),
                format!("{:.12e}", r.upper),
                format!("{:.6}", rep.target_slope),
                format!("{:.6}", rep.fitted.slope),
                format!("{:.6}", rep.fitted.stderr),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EndSpec;
    use crate::resolvent::KernelKind;

    fn small() -> ManifoldMesh {
        ManifoldMesh::build(&[EndSpec::new(3, 30.0, 31), EndSpec::new(4, 30.0, 30)], 1).unwrap()
    }

    #[test]
    fn mixed_norm_examples() {
        let mu = vec![0.5, 2.0, 1.5];
        let id = KernelMatrix::from_fn(mu.clone(), KernelKind::Resolvent, 0.0, 1, |x, y| if x == y { 1.0 / mu[y] } else { 0.0 });
        assert!((mixed_norm(&id, MixedMode::L1xLinfY) - 1.0).abs() < 1e-15);
        assert!((mixed_norm(&id, MixedMode::LinfxL1y) - 1.0).abs() < 1e-15);
        let a = [1.0, -2.0, 0.5];
        let b = [0.3, -0.7, 0.2];
        let r1 = KernelMatrix::from_fn(mu.clone(), KernelKind::Remainder, 0.0, 1, |x, y| a[x] * b[y]);
        let expect = a.iter().zip(&mu).map(|(a, m)| a.abs() * m).sum::<f64>() * 0.7;
        assert!((mixed_norm(&r1, MixedMode::L1xLinfY) - expect).abs() < 1e-14);
    }

    #[test]
    fn endpoint_bounds_are_exact() {
        let m = small();
        let t = resolvent_matrix(&m, 10.0, 1).unwrap();
        let cfg = PowerIteration::default();
        for p in [1.0, f64::INFINITY] {
            let (lo, hi) = pnorm_bounds(&t, p, &cfg).unwrap();
            assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
        }
        let (lo, hi) = pnorm_bounds(&t, 2.0, &cfg).unwrap();
        assert!((hi - lo).abs() < 1e-6, "{lo} {hi}");
    }

    #[test]
    fn power_iteration_finds_top_singular_value() {
        let mut r = rng::stream(3, &[]);
        let n = 64;
        let mu: Vec<f64> = (0..n).map(|_| r.gen_range(0.5..2.0)).collect();
        let mut a = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..=x {
                let v: f64 = r.gen_range(-1.0..1.0);
                a[x * n + y] = v;
                a[y * n + x] = v;
            }
        }
        let t = KernelMatrix::from_fn(mu, KernelKind::Remainder, 0.0, 1, |x, y| a[x * n + y]);
        let exact = l2_norm(&t);
        let cfg = PowerIteration { max_iter: 5000, tol: 1e-14, ..Default::default() };
        let lo = lower_bound(&t, 2.0, &[], &[1], &cfg).unwrap();
        assert!(lo <= exact * (1.0 + 1e-12) && lo >= exact * (1.0 - 1e-6), "{lo} {exact}");
    }

    #[test]
    fn diagonal_kernel_bounds() {
        let mu = vec![1.0, 2.0, 0.5, 1.0];
        let d = [0.5, -3.0, 1.0, 2.0];
        let t = KernelMatrix::from_fn(mu.clone(), KernelKind::Remainder, 0.0, 1, |x, y| if x == y { d[x] / mu[x] } else { 0.0 });
        let (lo, hi) = pnorm_bounds(&t, 4.0, &PowerIteration::default()).unwrap();
        assert!((lo - 3.0).abs() < 1e-9 && (hi - 3.0).abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn case_table() {
        let c = case_analysis(3, 3, 2.0).unwrap();
        assert_eq!((c.alpha, c.beta, c.case), (-1.0, 1.0, CaseLabel::Case2));
        assert!((c.k_exponent.unwrap() - 0.5).abs() < 1e-15);
        assert!(case_analysis(3, 3, 3.0).unwrap().k_exponent.unwrap().abs() < 1e-15);
        assert!((case_analysis(3, 3, 6.0).unwrap().k_exponent.unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(case_analysis(5, 3, 1.1).unwrap().case, CaseLabel::Case3);
        assert_eq!(case_analysis(3, 5, 2.0).unwrap().case, CaseLabel::Case4);
        assert!(case_analysis(3, 3, 0.5).is_err());
        assert!(case_analysis(2, 3, 2.0).is_err());
    }

    #[test]
    fn exponent_fit_examples() {
        let t: Vec<f64> = (0..9).map(|i| 10f64.powf(2.0 + 0.25 * i as f64)).collect();
        let v: Vec<f64> = t.iter().map(|t| t.sqrt().powf(0.5)).collect();
        let f = exponent_fit(&t, &v).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12 && f.stderr < 1e-12);
        assert!(exponent_fit(&t, &vec![2.0; 9]).unwrap().slope.abs() < 1e-12);
        assert!(exponent_fit(&t[..4], &v[..4]).is_err());
        assert!(exponent_fit(&t[..5], &v[..5]).is_err());
    }

    #[test]
    fn family_is_holder_extremal() {
        let m = small();
        for p in [3.0, 6.0] {
            let f = lower_bound_family(&m, p, 0.1, 0, 0.5).unwrap();
            let g = family_partner(&m, 0.1, 0, 0.5);
            let lhs = m.inner(&f, &g);
            let rhs = m.lp_norm(&f, p).unwrap() * m.lp_norm(&g, dual_exponent(p)).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        }
    }

    #[test]
    fn vertical_adjoint_is_consistent() {
        let m = small();
        let op = VerticalOperator::new(&m, 20.0, 1).unwrap();
        let f: Vec<f64> = (0..m.len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let h: Vec<f64> = (0..m.len()).map(|i| (i as f64 * 0.7).cos()).collect();
        // The linearization at f is positively homogeneous: <A f, h> = <f, A*_f h>.
        let lhs = m.inner(&op.apply(&f), &h);
        let rhs = m.inner(&f, &op.linearized_adjoint(&f, &h));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        let (lo, hi) = vertical_norm_bounds(&m, 20.0, 1, 2.0, &[], &PowerIteration::default()).unwrap();
        assert!(lo > 0.0 && lo <= hi);
    }
}
