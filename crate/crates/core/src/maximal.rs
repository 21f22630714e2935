//! Maximal operators over a dyadic t-grid, Stein-type domination by the heat
//! maximal function, weak-(1,1) quotients, Fefferman-Stein ratios, vertical
//! square functions, and randomized l^2 / Rademacher bound estimates.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::mesh::{lp_norm, ManifoldMesh, Region};
use crate::parallel;
use crate::resolvent::{ResolventOperator, SpectralDecomposition};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximalKind {
    Vertical,
    Horizontal,
    SteinRes,
    SteinExp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalResult {
    pub kind: MaximalKind,
    pub values: Vec<f64>,
    /// Grid time attaining the sup at each vertex.
    pub argmax_t: Vec<f64>,
}

/// `t_min, t_min sqrt(2), ...` up to `t_max`.
pub fn dyadic_grid(t_min: f64, t_max: f64) -> Result<Vec<f64>> {
    geometric_grid(t_min, t_max, std::f64::consts::SQRT_2)
}

pub fn geometric_grid(t_min: f64, t_max: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max >= t_min && t_max.is_finite() && ratio > 1.0) {
        return domain(format!("bad t grid: min {t_min}, max {t_max}, ratio {ratio}"));
    }
    let steps = ((t_max / t_min).ln() / ratio.ln() + 1e-9).floor() as i32;
    Ok((0..=steps).map(|j| t_min * ratio.powi(j)).collect())
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return domain("empty t grid");
    }
    if t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return domain("t grid values must be positive and finite");
    }
    Ok(())
}

/// Pointwise sups of `|T_t f|` over the grid for each `f`, where `T_t` is
/// the vertical or horizontal operator of order `m`. One factorization per `t`.
pub fn maximal_many(mesh: &ManifoldMesh, kind: MaximalKind, m: u32, fs: &[Vec<f64>], t_grid: &[f64]) -> Result<Vec<MaximalResult>> {
    check_grid(t_grid)?;
    if !matches!(kind, MaximalKind::Vertical | MaximalKind::Horizontal) {
        return domain("maximal_many handles the vertical and horizontal kinds");
    }
    let per_t = parallel::map(t_grid, |&t| -> Result<Vec<Vec<f64>>> {
        let op = ResolventOperator::new(mesh, t, m)?;
        Ok(fs
            .iter()
            .map(|f| match kind {
                MaximalKind::Vertical => op.vertical(f),
                _ => op.horizontal(f).into_iter().map(f64::abs).collect(),
            })
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = mesh.len();
    Ok((0..fs.len())
        .map(|i| {
            let mut values = vec![0.0; n];
            let mut argmax_t = vec![t_grid[0]; n];
            for (vals, &t) in per_t.iter().zip(t_grid) {
                for x in 0..n {
                    if vals[i][x] > values[x] {
                        values[x] = vals[i][x];
                        argmax_t[x] = t;
                    }
                }
            }
            MaximalResult { kind, values, argmax_t }
        })
        .collect())
}

pub fn vertical_maximal(mesh: &ManifoldMesh, m: u32, f: &[f64], t_grid: &[f64]) -> Result<MaximalResult> {
    Ok(maximal_many(mesh, MaximalKind::Vertical, m, &[f.to_vec()], t_grid)?.remove(0))
}

pub fn horizontal_maximal(mesh: &ManifoldMesh, m: u32, f: &[f64], t_grid: &[f64]) -> Result<MaximalResult> {
    Ok(maximal_many(mesh, MaximalKind::Horizontal, m, &[f.to_vec()], t_grid)?.remove(0))
}

/// `sup_{t in grid and t = 0} (I + tL)^{-m} f` and the heat maximal function
/// `sup_s e^{-sL} f` (grid, golden-section refinement, and the limits
/// `s = 0`, `s = inf`). Returns `max_x (M^res f - M^exp f)`.
pub fn stein_domination_check(mesh: &ManifoldMesh, m: u32, f: &[f64], t_grid: &[f64], s_grid: &[f64]) -> Result<f64> {
    check_grid(t_grid)?;
    check_grid(s_grid)?;
    if f.iter().any(|v| *v < 0.0) {
        return domain("Stein domination needs f >= 0");
    }
    let res = stein_maxima(mesh, m, f, t_grid, s_grid)?;
    Ok(res.0.values.iter().zip(&res.1.values).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max))
}

/// `(M^res_m f, M^exp f)`.
pub fn stein_maxima(mesh: &ManifoldMesh, m: u32, f: &[f64], t_grid: &[f64], s_grid: &[f64]) -> Result<(MaximalResult, MaximalResult)> {
    let n = mesh.len();
    let per_t = parallel::map(t_grid, |&t| ResolventOperator::new(mesh, t, m).map(|op| op.apply(f)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut res = MaximalResult { kind: MaximalKind::SteinRes, values: f.to_vec(), argmax_t: vec![0.0; n] };
    for (vals, &t) in per_t.iter().zip(t_grid) {
        for x in 0..n {
            if vals[x] > res.values[x] {
                res.values[x] = vals[x];
                res.argmax_t[x] = t;
            }
        }
    }

    let spec = SpectralDecomposition::new(mesh);
    let coeffs = spec.coefficients(f);
    let heat = |s: f64| spec.synthesize(&coeffs, |lam| (-s * lam).exp());
    let mean = mesh.inner(f, &vec![1.0; n]) / mesh.total_measure();
    let per_s: Vec<Vec<f64>> = parallel::map(s_grid, |&s| heat(s));
    let mut exp = MaximalResult { kind: MaximalKind::SteinExp, values: f.to_vec(), argmax_t: vec![0.0; n] };
    let mut best_idx = vec![usize::MAX; n];
    for x in 0..n {
        if mean > exp.values[x] {
            exp.values[x] = mean;
            exp.argmax_t[x] = f64::INFINITY;
        }
        for (j, vals) in per_s.iter().enumerate() {
            if vals[x] > exp.values[x] {
                exp.values[x] = vals[x];
                exp.argmax_t[x] = s_grid[j];
                best_idx[x] = j;
            }
        }
    }
    let refined = parallel::map_range(n, |x| {
        let j = best_idx[x];
        if j == usize::MAX {
            return (exp.values[x], exp.argmax_t[x]);
        }
        let lo = if j == 0 { s_grid[0] * 0.5 } else { s_grid[j - 1] };
        let hi = if j + 1 == s_grid.len() { s_grid[j] * 2.0 } else { s_grid[j + 1] };
        let at = |s: f64| spec.synthesize_at(&coeffs, x, |lam| (-s * lam).exp());
        let (s, v) = golden_max(at, lo.ln(), hi.ln(), 60);
        if v > exp.values[x] {
            (v, s)
        } else {
            (exp.values[x], exp.argmax_t[x])
        }
    });
    for (x, (v, s)) in refined.into_iter().enumerate() {
        exp.values[x] = v;
        exp.argmax_t[x] = s;
    }
    Ok((res, exp))
}

/// Golden-section search for a max of `f(e^u)` over `u in [a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    if fc > fd {
        (c.exp(), fc)
    } else {
        (d.exp(), fd)
    }
}

/// `sup_lambda lambda mu{g >= lambda}` for non-negative `g`.
pub fn weak_quotient(measures: &[f64], g: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut best = 0.0f64;
    for &i in &idx {
        mass += measures[i];
        best = best.max(g[i] * mass);
    }
    best
}

/// Unit-mass bump `delta_v / mu_v`.
pub fn unit_bump(mesh: &ManifoldMesh, v: usize) -> Vec<f64> {
    let mut f = vec![0.0; mesh.len()];
    f[v] = 1.0 / mesh.vertex(v).measure;
    f
}

/// Center bump followed by bumps at the given radii on every end.
pub fn marching_bumps(mesh: &ManifoldMesh, radii: &[f64]) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    if let Some(c) = mesh.center().next() {
        out.push(("center".to_string(), unit_bump(mesh, c)));
    }
    for end in 0..mesh.ends().len() {
        for &r in radii {
            out.push((format!("end{end}_r{r}"), unit_bump(mesh, mesh.vertex_near(end, r))));
        }
    }
    out
}

/// Weak-(1,1) quotients `sup_lambda lambda mu{Mf >= lambda}` for each unit-mass `f`.
pub fn weak11_constants(mesh: &ManifoldMesh, kind: MaximalKind, m: u32, family: &[Vec<f64>], t_grid: &[f64]) -> Result<Vec<f64>> {
    let mu = mesh.measures();
    for f in family {
        let mass = lp_norm(&mu, f, 1.0)?;
        if (mass - 1.0).abs() > 1e-9 {
            return domain(format!("weak-(1,1) family members need ||f||_1 = 1, got {mass}"));
        }
    }
    Ok(maximal_many(mesh, kind, m, family, t_grid)?
        .iter()
        .map(|r| weak_quotient(&mu, &r.values))
        .collect())
}

pub fn weak11_constant(mesh: &ManifoldMesh, kind: MaximalKind, m: u32, family: &[Vec<f64>], t_grid: &[f64]) -> Result<f64> {
    Ok(weak11_constants(mesh, kind, m, family, t_grid)?.into_iter().fold(0.0, f64::max))
}

fn l2_sum(columns: &[Vec<f64>], n: usize) -> Vec<f64> {
    (0..n).map(|x| columns.iter().map(|c| c[x] * c[x]).sum::<f64>().sqrt()).collect()
}

/// `||(sum_i (M f_i)^2)^{1/2}||_p / ||(sum_i |f_i|^2)^{1/2}||_p` for the vertical maximal operator.
pub fn fefferman_stein_ratio(mesh: &ManifoldMesh, m: u32, fs: &[Vec<f64>], p: f64, t_grid: &[f64]) -> Result<f64> {
    if fs.is_empty() {
        return domain("Fefferman-Stein ratio needs a non-empty sequence");
    }
    if !(p > 1.0 && p.is_finite()) {
        return domain(format!("Fefferman-Stein ratio needs 1 < p < inf, got {p}"));
    }
    let mu = mesh.measures();
    let maxes: Vec<Vec<f64>> = maximal_many(mesh, MaximalKind::Vertical, m, fs, t_grid)?.into_iter().map(|r| r.values).collect();
    let num = lp_norm(&mu, &l2_sum(&maxes, mesh.len()), p)?;
    let den = lp_norm(&mu, &l2_sum(fs, mesh.len()), p)?;
    Ok(num / den)
}

/// `J` indicators `1_v / mu_v^{1/p}` on `end` at distinct vertices with radii
/// in `[lo, hi]`, taken from the inside out with a stride that spreads the
/// largest family over the whole range.
pub fn indicator_family(mesh: &ManifoldMesh, end: usize, lo: f64, hi: f64, j: usize, j_max: usize, p: f64) -> Result<Vec<Vec<f64>>> {
    let verts = mesh.radial_vertices(end, lo, hi);
    if j > j_max || j_max > verts.len() || j == 0 {
        return domain(format!("need 1 <= J <= {j_max} <= {} vertices in range", verts.len()));
    }
    let stride = verts.len() as f64 / j_max as f64;
    Ok((0..j)
        .map(|i| {
            let v = verts[(i as f64 * stride) as usize];
            let mut f = vec![0.0; mesh.len()];
            f[v] = mesh.vertex(v).measure.powf(-1.0 / p);
            f
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquareResult {
    pub values: Vec<f64>,
    /// Grid time carrying the largest contribution at each vertex.
    pub argmax_t: Vec<f64>,
    pub log_step: f64,
}

/// `(sum_j |sqrt(t_j) grad (I + t_j L)^{-m} f|^2 dlog t)^{1/2}` on a
/// geometric grid with constant `dlog t`.
pub fn square_function(mesh: &ManifoldMesh, m: u32, f: &[f64], t_grid: &[f64]) -> Result<SquareResult> {
    check_grid(t_grid)?;
    let h = log_step(t_grid)?;
    let n = mesh.len();
    let per_t = parallel::map(t_grid, |&t| ResolventOperator::new(mesh, t, m).map(|op| op.vertical(f)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; n];
    let mut best = vec![0.0f64; n];
    let mut argmax_t = vec![t_grid[0]; n];
    for (vals, &t) in per_t.iter().zip(t_grid) {
        for x in 0..n {
            let c = vals[x] * vals[x] * h;
            acc[x] += c;
            if c > best[x] {
                best[x] = c;
                argmax_t[x] = t;
            }
        }
    }
    Ok(SquareResult { values: acc.into_iter().map(f64::sqrt).collect(), argmax_t, log_step: h })
}

fn log_step(t_grid: &[f64]) -> Result<f64> {
    if t_grid.len() < 2 {
        return domain("square function needs >= 2 grid points");
    }
    let h = (t_grid[1] / t_grid[0]).ln();
    if t_grid.windows(2).any(|w| ((w[1] / w[0]).ln() - h).abs() > 1e-9 * h) {
        return domain("square function needs a geometric grid");
    }
    Ok(h)
}

/// Scalar model of the squared square function: `sum_j t_j g^2 (1 + t_j lambda)^{-2m} dlog t`
/// for an eigenvalue `lambda` with gradient weight `g`.
pub fn scalar_square_sum(lambda: f64, g: f64, m: u32, t_grid: &[f64]) -> Result<f64> {
    let h = log_step(t_grid)?;
    Ok(t_grid.iter().map(|t| t * g * g * (1.0 + t * lambda).powi(-2 * m as i32) * h).sum())
}

/// `sup_lambda (sum_j t_j lambda (1 + t_j lambda)^{-2m} dlog t)^{1/2}` over the
/// spectrum: the `L^2` bound for the discrete square function.
pub fn square_spectral_bound(eigenvalues: &[f64], m: u32, t_grid: &[f64]) -> Result<f64> {
    let mut best = 0.0f64;
    for &lam in eigenvalues {
        if lam > 0.0 {
            best = best.max(scalar_square_sum(lam, lam.sqrt(), m, t_grid)?.sqrt());
        }
    }
    Ok(best)
}

/// Settings for [`rbound_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RBoundSetup {
    pub m: u32,
    pub p: f64,
    pub t_count: usize,
    pub trials: usize,
    pub sign_samples: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RBoundEstimate {
    pub p: f64,
    pub trials: usize,
    pub sign_samples: usize,
    pub seed: u64,
    /// Largest `||(sum |T_j f_j|^2)^{1/2}||_p / ||(sum |f_j|^2)^{1/2}||_p`.
    pub best_l2_ratio: f64,
    /// Largest Rademacher-average ratio.
    pub best_rademacher_ratio: f64,
    pub l2_ratios: Vec<f64>,
    pub rademacher_ratios: Vec<f64>,
}

impl RBoundEstimate {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["trial", "ratio", "rademacher_ratio"])?;
        for (i, (a, b)) in self.l2_ratios.iter().zip(&self.rademacher_ratios).enumerate() {
            wtr.write_record([i.to_string(), format!("{a:.12e}"), format!("{b:.12e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One trial's test functions: for each drawn `t_j`, either the normalized
/// indicator of the vertex at radius `sqrt(t_j)` on the end of minimal
/// dimension, or a uniform random field.
fn draw_trial(mesh: &ManifoldMesh, s: &RBoundSetup, trial: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut r = rng::stream(s.seed, &[trial as u64]);
    let n = mesh.len();
    let n_star = mesh.critical_dimension();
    let end = mesh.ends().iter().position(|e| e.n == n_star).unwrap_or(0);
    let (a, b) = (s.t_lo.ln(), s.t_hi.ln());
    let mut ts = Vec::with_capacity(s.t_count);
    let mut fs = Vec::with_capacity(s.t_count);
    for _ in 0..s.t_count {
        let t = if b > a { r.gen_range(a..b).exp() } else { s.t_lo };
        let rt = t.sqrt();
        let mut f = vec![0.0; n];
        if r.gen_bool(0.75) {
            let v = mesh.vertex_near(end, rt + mesh.ends()[end].r_min);
            f[v] = 1.0;
        } else {
            let r0 = mesh.ends()[end].r_min;
            for v in mesh.radial_vertices(end, r0 + 0.5 * rt, r0 + 2.0 * rt) {
                f[v] = r.gen_range(-1.0..1.0);
            }
            if f.iter().all(|&x| x == 0.0) {
                f[mesh.vertex_near(end, rt + mesh.ends()[end].r_min)] = 1.0;
            }
        }
        let norm = lp_norm(&mesh.measures(), &f, s.p).unwrap_or(1.0);
        f.iter_mut().for_each(|x| *x /= norm);
        ts.push(t);
        fs.push(f);
    }
    (ts, fs)
}

/// Randomized lower bounds for the `l^2`-bound and the R-bound of
/// `{sqrt(t) grad (I + tL)^{-m} : t in [t_lo, t_hi]}` on `L^p`. Deterministic
/// given the setup, independent of thread scheduling.
pub fn rbound_estimate(mesh: &ManifoldMesh, s: &RBoundSetup) -> Result<RBoundEstimate> {
    if s.trials == 0 || s.t_count == 0 {
        return domain("R-bound estimate needs trials >= 1 and t_count >= 1");
    }
    if !(s.p >= 1.0 && s.p.is_finite()) {
        return domain(format!("R-bound estimate needs 1 <= p < inf, got {}", s.p));
    }
    if !(s.t_lo > 0.0 && s.t_hi >= s.t_lo) {
        return domain("R-bound estimate needs 0 < t_lo <= t_hi");
    }
    let mu = mesh.measures();
    let n = mesh.len();
    let per_trial = parallel::map_range(s.trials, |trial| -> Result<(f64, f64)> {
        let (ts, fs) = draw_trial(mesh, s, trial);
        let mut scaled = Vec::with_capacity(ts.len());
        for (&t, f) in ts.iter().zip(&fs) {
            let op = ResolventOperator::new(mesh, t, s.m)?;
            scaled.push(op.apply(f).into_iter().map(|v| v * t.sqrt()).collect::<Vec<f64>>());
        }
        let grads: Vec<Vec<f64>> = scaled.iter().map(|g| mesh.gradient_magnitude(g).0).collect();
        let l2 = lp_norm(&mu, &l2_sum(&grads, n), s.p)? / lp_norm(&mu, &l2_sum(&fs, n), s.p)?;

        let mut signs = rng::stream(s.seed, &[trial as u64, u64::MAX]);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..s.sign_samples {
            let eps: Vec<f64> = (0..ts.len()).map(|_| if signs.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let mut g = vec![0.0; n];
            let mut f = vec![0.0; n];
            for (j, e) in eps.iter().enumerate() {
                for x in 0..n {
                    g[x] += e * scaled[j][x];
                    f[x] += e * fs[j][x];
                }
            }
            num += lp_norm(&mu, &mesh.gradient_magnitude(&g).0, s.p)?;
            den += lp_norm(&mu, &f, s.p)?;
        }
        Ok((l2, if den > 0.0 { num / den } else { 0.0 }))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let l2_ratios: Vec<f64> = per_trial.iter().map(|r| r.0).collect();
    let rademacher_ratios: Vec<f64> = per_trial.iter().map(|r| r.1).collect();
    Ok(RBoundEstimate {
        p: s.p,
        trials: s.trials,
        sign_samples: s.sign_samples,
        seed: s.seed,
        best_l2_ratio: l2_ratios.iter().cloned().fold(0.0, f64::max),
        best_rademacher_ratio: rademacher_ratios.iter().cloned().fold(0.0, f64::max),
        l2_ratios,
        rademacher_ratios,
    })
}

/// Writes `vertex, r, end, value, argmax_t`.
pub fn write_pointwise_csv<W: Write>(w: W, mesh: &ManifoldMesh, values: &[f64], argmax_t: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["vertex", "r", "end", "value", "argmax_t"])?;
    for (x, v) in mesh.vertices().iter().enumerate() {
        let end = match v.region {
            Region::Center => "center".to_string(),
            Region::End(i) => i.to_string(),
        };
        wtr.write_record([x.to_string(), format!("{:.9e}", v.r), end, format!("{:.12e}", values[x]), format!("{:.6e}", argmax_t[x])])?;
    }
    wtr.flush()?;
    Ok(())
}
