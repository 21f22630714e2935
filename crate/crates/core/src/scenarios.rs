//! Named experiment scenarios. Each returns assertions plus CSV payloads;
//! [`Outcome::write`] stores them under an output directory.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::maximal::{
    dyadic_grid, fefferman_stein_ratio, geometric_grid, indicator_family, marching_bumps, maximal_many, rbound_estimate,
    square_function, stein_domination_check, weak11_constants, write_pointwise_csv, MaximalKind, RBoundSetup,
};
use crate::mesh::{lp_norm, EndSpec, ManifoldMesh};
use crate::norms::{case_analysis, lower_bound_family, norm_scaling, write_norm_csv, CaseLabel, PowerIteration};
use crate::parametrix::{key_lemma_solve, remainder_bound_check};
use crate::resolvent::{horizontal_identity_check, semigroup_representation_check, ShiftedInverse};
use crate::specfun::{euclid_resolvent_kernel, KernelQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|measured - target| <= tolerance`.
    Within,
    /// `measured <= target`.
    AtMost,
    /// `measured >= target`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub target: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Assertion {
    pub fn within(name: impl Into<String>, target: f64, measured: f64, tolerance: f64) -> Self {
        let pass = (measured - target).abs() <= tolerance;
        Assertion { name: name.into(), target, measured, tolerance, relation: Relation::Within, pass }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Assertion { name: name.into(), target: limit, measured, tolerance: 0.0, relation: Relation::AtMost, pass: measured <= limit }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Assertion { name: name.into(), target: limit, measured, tolerance: 0.0, relation: Relation::AtLeast, pass: measured >= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub assertions: Vec<Assertion>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    /// `(file name, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(scenario: &str) -> Self {
        Outcome { summary: Summary { scenario: scenario.to_string(), assertions: Vec::new() }, files: Vec::new() }
    }

    fn check(&mut self, a: Assertion) {
        self.summary.assertions.push(a);
    }

    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn passed(&self) -> bool {
        self.summary.passed()
    }

    /// Writes every CSV and `<scenario>.summary.json` into `dir`, each via a
    /// temporary file and a rename.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_vec_pretty(&self.summary)?;
        json.push(b'\n');
        let summary_name = format!("{}.summary.json", self.summary.scenario);
        for (name, bytes) in self.files.iter().map(|(n, b)| (n.as_str(), b)).chain(std::iter::once((summary_name.as_str(), &json))) {
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, dir.join(name))?;
        }
        Ok(())
    }
}

pub struct Scenario {
    pub name: &'static str,
    /// CLI subcommand that runs it.
    pub command: &'static str,
    /// Acceptance criterion number.
    pub criterion: u8,
    pub run: fn(&RunConfig) -> Result<Outcome>,
}

pub const SCENARIOS: &[Scenario] = &[
    Scenario { name: "kernel", command: "kernel", criterion: 1, run: kernel },
    Scenario { name: "identity-suite", command: "kernel", criterion: 2, run: identity_suite },
    Scenario { name: "gp-exponent", command: "norms", criterion: 3, run: gp_exponent },
    Scenario { name: "case-calculus", command: "norms", criterion: 4, run: case_calculus },
    Scenario { name: "key-lemma", command: "kernel", criterion: 5, run: key_lemma },
    Scenario { name: "remainder", command: "kernel", criterion: 6, run: remainder },
    Scenario { name: "maximal", command: "maximal", criterion: 7, run: maximal },
    Scenario { name: "fefferman-stein", command: "fefferman-stein", criterion: 8, run: fefferman_stein },
    Scenario { name: "square", command: "square", criterion: 9, run: square },
    Scenario { name: "rbound", command: "rbound", criterion: 9, run: rbound },
    Scenario { name: "doubling", command: "kernel", criterion: 10, run: doubling },
];

pub fn find(name: &str) -> Result<&'static Scenario> {
    SCENARIOS.iter().find(|s| s.name == name).ok_or_else(|| {
        let names: Vec<&str> = SCENARIOS.iter().map(|s| s.name).collect();
        Error::Config(format!("scenario: unknown name {name:?}, expected one of {}", names.join(", ")))
    })
}

/// Scenario names served by a CLI subcommand; the first is its default.
pub fn for_command(command: &str) -> Vec<&'static str> {
    SCENARIOS.iter().filter(|s| s.command == command).map(|s| s.name).collect()
}

pub fn run(name: &str, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    (find(name)?.run)(cfg)
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(&r)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn e(v: f64) -> String {
    format!("{v:.12e}")
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn build_mesh(cfg: &RunConfig) -> Result<ManifoldMesh> {
    ManifoldMesh::build(&cfg.end_specs(), cfg.center_size)
}

fn critical_end(mesh: &ManifoldMesh) -> usize {
    let n_star = mesh.critical_dimension();
    mesh.ends().iter().position(|e| e.n == n_star).unwrap_or(0)
}

fn r_cap(mesh: &ManifoldMesh) -> f64 {
    mesh.ends().iter().map(|e| e.r_max).fold(f64::INFINITY, f64::min) / 4.0
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

/// Smallest growth factor per decade of `sqrt(t)` between consecutive `(t, value)` pairs.
fn growth_per_decade(ts: &[f64], values: &[f64]) -> f64 {
    ts.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| (v[1] / v[0]).powf(1.0 / (t[1] / t[0]).sqrt().log10()))
        .fold(f64::INFINITY, f64::min)
}

/// Least-squares `p0` for the model `slope(p) = max(0, 1 - p0/p)`, scanned on `[1, 20]`.
fn transition_point(slopes: &[(f64, f64)]) -> f64 {
    let cost = |p0: f64| slopes.iter().map(|&(p, s)| (s - (1.0 - p0 / p).max(0.0)).powi(2)).sum::<f64>();
    (0..=19_000).map(|i| 1.0 + i as f64 * 1e-3).fold((f64::INFINITY, 1.0), |best, p0| {
        let c = cost(p0);
        if c < best.0 {
            (c, p0)
        } else {
            best
        }
    }).1
}

fn seed_power_iteration(cfg: &RunConfig) -> Result<PowerIteration> {
    Ok(PowerIteration { seed: cfg.require_seed()?, ..PowerIteration::default() })
}

const KERNEL_K: [f64; 3] = [0.05, 0.1, 0.5];

/// Point-source response of the discrete single end against the Euclidean kernel.
fn kernel(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("kernel");
    let mut dims: Vec<u32> = cfg.ends.iter().map(|e| e.n).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut rows = Vec::new();
    for &n in &dims {
        let end = EndSpec::new(n, 200.0, 4000).with_r_min(0.01);
        let probe = ManifoldMesh::probe(&end)?;
        let lo = 2.0;
        let hi = end.r_max / 4.0;
        for &k in &KERNEL_K {
            let src = probe.anchors()[0];
            let mut delta = vec![0.0; probe.len()];
            delta[src] = 1.0 / probe.vertex(src).measure;
            let u = ShiftedInverse::new(&probe, k * k, 1.0)?.apply(&delta);
            let mut worst = 0.0f64;
            for x in probe.radial_vertices(0, lo, hi) {
                let r = probe.vertex(x).r;
                let exact = euclid_resolvent_kernel(&KernelQuery::new(n, 1, k, r)?)?;
                let rel = (u[x] - exact).abs() / exact;
                worst = worst.max(rel);
                rows.push(vec![n.to_string(), format!("{k}"), e(r), e(u[x]), e(exact), e(rel)]);
            }
            out.check(Assertion::at_most(format!("n={n} k={k} max relative error on [2, r_max/4]"), worst, tol.kernel_rel_err));
        }
    }
    out.file("kernel.csv", table(&["n", "k", "r", "discrete", "closed_form", "rel_err"], rows)?);
    Ok(out)
}

fn identity_suite(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("identity-suite");
    let mesh = build_mesh(cfg)?;
    let mut rows = Vec::new();
    let mut horiz = 0.0f64;
    let mut semi = 0.0f64;
    for m in 1..=3u32 {
        for t in [0.1, 1.0, 10.0, 100.0, 1e4] {
            let h = horizontal_identity_check(&mesh, t, m)?;
            let s = semigroup_representation_check(&mesh, t, m, 64)?;
            horiz = horiz.max(h);
            semi = semi.max(s);
            rows.push(vec!["horizontal_identity".into(), format!("{t}"), m.to_string(), e(h)]);
            rows.push(vec!["semigroup_representation".into(), format!("{t}"), m.to_string(), e(s)]);
        }
    }
    out.check(Assertion::within("horizontal resolvent identity", 0.0, horiz, tol.horizontal_identity));
    out.check(Assertion::within("Gamma-integral representation, 64 points", 0.0, semi, tol.semigroup_representation));

    let t_grid = dyadic_grid(1e-2, 1e4)?;
    let s_grid = geometric_grid(1e-4, 1e7, 2f64.powf(0.25))?;
    let mut stein = f64::NEG_INFINITY;
    for m in 1..=2u32 {
        for (label, f) in marching_bumps(&mesh, &[4.0, 16.0]) {
            let d = stein_domination_check(&mesh, m, &f, &t_grid, &s_grid)?;
            stein = stein.max(d);
            rows.push(vec![format!("stein_{label}"), String::new(), m.to_string(), e(d)]);
        }
    }
    out.check(Assertion::at_most("max(M_res - M_exp) on non-negative bumps", stein, tol.stein_domination));
    out.file("identity.csv", table(&["check", "t", "m", "error"], rows)?);
    Ok(out)
}

fn gp_exponent(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let pi = seed_power_iteration(cfg)?;
    let mut out = Outcome::new("gp-exponent");
    let mesh = build_mesh(cfg)?;
    let t_grid = cfg.t_grid.points();
    let reports = cfg
        .p_grid
        .iter()
        .map(|&p| norm_scaling(&mesh, cfg.m, p, &t_grid, 0.5, &pi))
        .collect::<Result<Vec<_>>>()?;
    for rep in &reports {
        if rep.target_slope > 0.0 {
            out.check(Assertion::within(format!("slope p={}", rep.p), rep.target_slope, rep.fitted.slope, tol.growth_slope));
        } else {
            out.check(Assertion::within(format!("slope p={}", rep.p), 0.0, rep.fitted.slope, tol.bounded_slope));
        }
        if rep.p == 6.0 {
            out.check(Assertion::within("family slope p=6", rep.target_slope, rep.family_fit.slope, tol.family_slope));
        }
    }
    let finite: Vec<(f64, f64)> = reports.iter().filter(|r| r.p.is_finite()).map(|r| (r.p, r.fitted.slope)).collect();
    if finite.iter().any(|&(p, _)| p > mesh.critical_dimension() as f64) {
        let n_star = mesh.critical_dimension() as f64;
        out.check(Assertion::within("slope transition point p0", n_star, transition_point(&finite), tol.slope_transition_p));
    }
    out.file("norms.csv", buffer(|b| write_norm_csv(b, &reports))?);
    let fam = reports.iter().flat_map(|rep| rep.rows.iter().map(move |r| vec![e(r.t), format!("{}", rep.p), e(r.family)]));
    out.file("norms_family.csv", table(&["t", "p", "family"], fam)?);
    Ok(out)
}

/// Hand-derived rows of the four-case table: `(n_i, n_j, p, case, k exponent)`.
const CASE_TABLE: [(u32, u32, f64, CaseLabel, f64); 6] = [
    (3, 3, 2.0, CaseLabel::Case2, 0.5),
    (3, 3, 4.0, CaseLabel::Case2, -0.25),
    (3, 3, 1.2, CaseLabel::Case3, 0.5),
    (4, 3, 1.25, CaseLabel::Case3, 0.8),
    (5, 5, 1.3, CaseLabel::Case4, 1.0),
    (3, 3, 1.5, CaseLabel::Case4, 1.0),
];

fn case_calculus(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("case-calculus");
    let mut table_miss = 0usize;
    for &(ni, nj, p, case, ex) in &CASE_TABLE {
        let c = case_analysis(ni, nj, p)?;
        if c.case != case || c.k_exponent.map_or(true, |x| (x - ex).abs() > 1e-12) {
            table_miss += 1;
        }
    }
    out.check(Assertion::within("table rows mismatched", 0.0, table_miss as f64, 0.0));

    let start = Instant::now();
    let p_grid: Vec<f64> = (0..200).map(|i| 1.0 + 11.0 * (i as f64 + 0.5) / 200.0).collect();
    let mut rows = Vec::new();
    let mut case1 = 0usize;
    let mut sign_miss = 0usize;
    for ni in 3..=9u32 {
        for nj in 3..=9u32 {
            for &p in p_grid.iter().chain(std::iter::once(&(nj as f64))) {
                let c = case_analysis(ni, nj, p)?;
                if c.case == CaseLabel::Case1 {
                    case1 += 1;
                }
                let ex = c.k_exponent.unwrap_or(f64::NAN);
                let expect = (nj as f64 - p).signum();
                let sign = if ex == 0.0 { 0.0 } else { ex.signum() };
                let ok = if p == nj as f64 { sign == 0.0 } else { sign == expect };
                if !ok {
                    sign_miss += 1;
                }
                let label = format!("{:?}", c.case).to_lowercase();
                rows.push(vec![ni.to_string(), nj.to_string(), format!("{p}"), e(c.alpha), e(c.beta), label, e(ex)]);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    out.check(Assertion::within("case 1 occurrences", 0.0, case1 as f64, 0.0));
    out.check(Assertion::within("exponent sign flips away from p = n_j", 0.0, sign_miss as f64, 0.0));
    out.check(Assertion::at_most("scan runtime seconds", secs, tol.case_runtime_secs));
    out.file("cases.csv", table(&["n_i", "n_j", "p", "alpha", "beta", "case", "k_exponent"], rows)?);
    Ok(out)
}

fn key_lemma(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("key-lemma");
    let mesh = build_mesh(cfg)?;
    let k = 0.01;
    let mut rows = Vec::new();
    for (i, end) in mesh.ends().iter().enumerate() {
        let sol = key_lemma_solve(&mesh, i, k)?;
        let fit = sol.decay_fit(&mesh, 4.0, 0.25 / k)?;
        let n = end.n as f64;
        out.check(Assertion::within(format!("end {i} (n={}) |u| exponent", end.n), -(n - 2.0), fit.value_slope, tol.key_lemma_slope));
        out.check(Assertion::within(format!("end {i} (n={}) |grad u| exponent", end.n), -(n - 1.0), fit.gradient_slope, tol.key_lemma_slope));
        rows.push(vec![i.to_string(), end.n.to_string(), format!("{k}"), e(fit.value_slope), e(fit.gradient_slope), e(sol.residual)]);
    }
    out.file("key_lemma.csv", table(&["end", "n", "k", "value_slope", "gradient_slope", "residual"], rows)?);
    Ok(out)
}

fn remainder(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("remainder");
    let mesh = build_mesh(cfg)?;
    let k_grid = [0.4, 0.2, 0.1, 0.05];
    for m in 1..=2u32 {
        let rep = remainder_bound_check(&mesh, &k_grid, m, tol.remainder_variation)?;
        out.check(Assertion::at_most(format!("m={m} sup-ratio variation (c={})", rep.c), rep.variation, tol.remainder_variation));
        out.check(Assertion::at_most(format!("m={m} gradient sup-ratio variation (c={})", rep.c), rep.grad_variation, tol.remainder_variation));
        out.file(format!("remainder_m{m}.csv"), buffer(|b| rep.write_csv(b))?);
    }
    Ok(out)
}

const BUMP_RADII: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

fn maximal(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("maximal");
    let mesh = build_mesh(cfg)?;
    let mu = mesh.measures();
    let t_grid = dyadic_grid(1e-2, 1e4)?;
    let bumps = marching_bumps(&mesh, &BUMP_RADII);
    let family: Vec<Vec<f64>> = bumps.iter().map(|b| b.1.clone()).collect();
    let mut rows = Vec::new();
    for kind in [MaximalKind::Vertical, MaximalKind::Horizontal] {
        let consts = weak11_constants(&mesh, kind, cfg.m, &family, &t_grid)?;
        let base = consts[0];
        let worst = consts.iter().map(|c| (c / base).max(base / c)).fold(0.0, f64::max);
        let label = format!("{kind:?}").to_lowercase();
        out.check(Assertion::at_most(format!("{label} weak-(1,1) constants / center baseline"), worst, tol.weak11_factor));
        for ((name, _), c) in bumps.iter().zip(&consts) {
            rows.push(vec![label.clone(), name.clone(), e(*c)]);
        }
    }
    out.file("weak11.csv", table(&["kind", "bump", "constant"], rows)?);

    let end = critical_end(&mesh);
    let r0 = mesh.ends()[end].r_min;
    let translated = |p: f64| -> Vec<Vec<f64>> {
        BUMP_RADII
            .iter()
            .map(|&r| {
                let v = mesh.vertex_near(end, r0 + r);
                let mut f = vec![0.0; mesh.len()];
                f[v] = mesh.vertex(v).measure.powf(-1.0 / p);
                f
            })
            .collect()
    };
    let mut rows = Vec::new();
    for p in [2.0, 4.0] {
        let fs = translated(p);
        let res = maximal_many(&mesh, MaximalKind::Vertical, cfg.m, &fs, &t_grid)?;
        let ratios = res.iter().map(|r| lp_norm(&mu, &r.values, p)).collect::<Result<Vec<_>>>()?;
        for (r, v) in BUMP_RADII.iter().zip(&ratios) {
            rows.push(vec!["translate".into(), format!("{p}"), format!("{r}"), e(*v)]);
        }
        if p == 2.0 {
            out.check(Assertion::at_most("p=2 translated ratios max/min", spread(&ratios), tol.translation_factor));
        }
    }

    let horizons: [f64; 3] = [1e2, 1e3, 1e4];
    for p in [2.0, 4.0] {
        let mut ratios = Vec::new();
        for &t_top in &horizons {
            let f = lower_bound_family(&mesh, p, 1.0 / t_top.sqrt(), end, 0.5)?;
            let grid = dyadic_grid(1e-2, t_top)?;
            let res = maximal_many(&mesh, MaximalKind::Vertical, cfg.m, &[f], &grid)?;
            let v = lp_norm(&mu, &res[0].values, p)?;
            rows.push(vec!["t_range".into(), format!("{p}"), format!("{t_top}"), e(v)]);
            ratios.push(v);
        }
        if p == 4.0 {
            out.check(Assertion::at_least("p=4 growth per decade of sqrt(t)", growth_per_decade(&horizons, &ratios), tol.maximal_growth_per_decade));
        }
    }
    out.file("maximal_ratios.csv", table(&["family", "p", "parameter", "ratio"], rows)?);

    let center = marching_bumps(&mesh, &[]);
    let res = maximal_many(&mesh, MaximalKind::Vertical, cfg.m, &[center[0].1.clone()], &t_grid)?;
    out.file("maximal.csv", buffer(|b| write_pointwise_csv(b, &mesh, &res[0].values, &res[0].argmax_t))?);
    Ok(out)
}

const FS_SIZES: [usize; 4] = [1, 4, 16, 64];

fn fefferman_stein(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("fefferman-stein");
    let mesh = build_mesh(cfg)?;
    let end = critical_end(&mesh);
    let r_max = 4.0 * r_cap(&mesh);
    let t_grid = dyadic_grid(1e-2, (r_max / 8.0).powi(2))?;
    let mut rows = Vec::new();
    for p in [2.0, 4.0] {
        let mut ratios = Vec::new();
        for &j in &FS_SIZES {
            let fs = indicator_family(&mesh, end, 4.0, r_cap(&mesh), j, 64, p)?;
            let r = fefferman_stein_ratio(&mesh, cfg.m, &fs, p, &t_grid)?;
            rows.push(vec![format!("{p}"), j.to_string(), e(r)]);
            ratios.push(r);
        }
        let growth = ratios[3] / ratios[0];
        if p == 2.0 {
            let worst = ratios.iter().map(|r| r / ratios[0]).fold(0.0, f64::max);
            out.check(Assertion::at_most("p=2 ratio / J=1 value, J <= 64", worst, tol.fs_stability_factor));
        } else {
            out.check(Assertion::at_least("p=4 ratio growth J=1 -> J=64", growth, tol.fs_growth_factor));
        }
    }
    out.file("fefferman_stein.csv", table(&["p", "j", "ratio"], rows)?);
    Ok(out)
}

const REFINEMENTS: [usize; 3] = [80, 160, 320];

fn square(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("square");
    let t_grid = dyadic_grid(1e-2, 1e4)?;
    let radii = [2.0, 8.0, 32.0];
    let mut per_r = vec![Vec::new(); radii.len()];
    let mut rows = Vec::new();
    for &cells in &REFINEMENTS {
        let ends: Vec<EndSpec> = cfg.end_specs().into_iter().map(|e| EndSpec { cells, ..e }).collect();
        let mesh = ManifoldMesh::build(&ends, cfg.center_size)?;
        let mu = mesh.measures();
        for (i, &r) in radii.iter().enumerate() {
            let mut f = vec![0.0; mesh.len()];
            for end in 0..mesh.ends().len() {
                let r0 = mesh.ends()[end].r_min;
                for v in mesh.radial_vertices(end, r0 + r, r0 + 2.0 * r) {
                    f[v] = 1.0;
                }
            }
            let s = square_function(&mesh, cfg.m, &f, &t_grid)?;
            let ratio = lp_norm(&mu, &s.values, 2.0)? / lp_norm(&mu, &f, 2.0)?;
            per_r[i].push(ratio);
            rows.push(vec![cells.to_string(), format!("{r}"), e(ratio)]);
            if cells == REFINEMENTS[1] && i == 0 {
                out.file("square.csv", buffer(|b| write_pointwise_csv(b, &mesh, &s.values, &s.argmax_t))?);
            }
        }
    }
    for (r, ratios) in radii.iter().zip(&per_r) {
        out.check(Assertion::at_most(format!("p=2 square ratio max/min over refinements, annulus r={r}"), spread(ratios), tol.square_refinement_factor));
    }
    out.file("square_refinement.csv", table(&["cells", "r", "ratio"], rows)?);
    Ok(out)
}

fn rbound(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let seed = cfg.require_seed()?;
    let mut out = Outcome::new("rbound");
    let mesh = build_mesh(cfg)?;
    let horizons: [f64; 3] = [1e2, 1e3, 1e4];
    let mut rows = Vec::new();
    for p in [2.0, 4.0] {
        let mut best = Vec::new();
        for &t_hi in &horizons {
            let setup = RBoundSetup { m: cfg.m, p, t_count: 16, trials: 32, sign_samples: 256, t_lo: 1.0, t_hi, seed };
            let est = rbound_estimate(&mesh, &setup)?;
            if p == 2.0 {
                out.check(Assertion::at_most(format!("p=2 trial spread, t_hi={t_hi}"), spread(&est.l2_ratios), tol.rbound_trial_spread));
            }
            if t_hi == horizons[2] {
                let again = rbound_estimate(&mesh, &setup)?;
                let same = again.l2_ratios.iter().zip(&est.l2_ratios).all(|(a, b)| a.to_bits() == b.to_bits())
                    && again.rademacher_ratios.iter().zip(&est.rademacher_ratios).all(|(a, b)| a.to_bits() == b.to_bits());
                out.check(Assertion::within(format!("p={p} rerun bit mismatches"), 0.0, if same { 0.0 } else { 1.0 }, 0.0));
            }
            rows.push(vec![format!("{p}"), format!("{t_hi}"), e(est.best_l2_ratio), e(est.best_rademacher_ratio)]);
            out.file(format!("rbound_p{p}_thi{t_hi:e}.csv"), buffer(|b| est.write_csv(b))?);
            best.push(est.best_l2_ratio);
        }
        if p == 4.0 {
            out.check(Assertion::at_least("p=4 best ratio growth per decade of sqrt(t)", growth_per_decade(&horizons, &best), tol.rbound_growth_per_decade));
        }
    }
    out.file("rbound_summary.csv", table(&["p", "t_hi", "best_l2_ratio", "best_rademacher_ratio"], rows)?);
    Ok(out)
}

const DOUBLING_R_MAX: [f64; 6] = [100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0];

fn doubling(cfg: &RunConfig) -> Result<Outcome> {
    let tol = &cfg.tolerances;
    let mut out = Outcome::new("doubling");
    let mut rows = Vec::new();
    for (a, b) in [(3u32, 3u32), (3, 4)] {
        let ratios = crate::parallel::map(&DOUBLING_R_MAX, |&r_max| -> Result<f64> {
            let cells = (24.0 * r_max.ln()).round() as usize;
            let mesh = ManifoldMesh::build(&[EndSpec::new(a, r_max, cells), EndSpec::new(b, r_max, cells)], cfg.center_size)?;
            Ok(mesh.doubling_ratio())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (r, v) in DOUBLING_R_MAX.iter().zip(&ratios) {
            rows.push(vec![a.to_string(), b.to_string(), format!("{r}"), e(*v)]);
        }
        if a == b {
            out.check(Assertion::at_most(format!("ends ({a},{b}) max/min over r_max"), spread(&ratios), tol.doubling_flat_factor));
        } else {
            let drops = ratios.windows(2).filter(|w| w[1] < w[0]).count();
            out.check(Assertion::within(format!("ends ({a},{b}) decreases along r_max"), 0.0, drops as f64, 0.0));
            let growth = ratios[ratios.len() - 1] / ratios[0];
            out.check(Assertion::at_least(format!("ends ({a},{b}) growth over r_max sweep"), growth, tol.doubling_growth_factor));
        }
    }
    out.file("doubling.csv", table(&["n_a", "n_b", "r_max", "ratio"], rows)?);
    Ok(out)
}

/// Aggregated view of the summaries and CSV files found in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub pass: bool,
    pub scenarios: Vec<Summary>,
    pub csv: Vec<CsvEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvEntry {
    pub file: String,
    pub rows: usize,
}

pub fn aggregate(dir: &Path) -> Result<Report> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.'))
        .collect();
    names.sort();
    let mut scenarios = Vec::new();
    let mut csv = Vec::new();
    for name in names {
        let path = dir.join(&name);
        if name.ends_with(".summary.json") {
            let s: Summary = serde_json::from_slice(&std::fs::read(&path)?)?;
            scenarios.push(s);
        } else if name.ends_with(".csv") {
            let mut rdr = csv::Reader::from_path(&path)?;
            let rows = rdr.records().count();
            csv.push(CsvEntry { file: name, rows });
        }
    }
    if scenarios.is_empty() {
        return Err(Error::Config(format!("out: no scenario summaries in {}", dir.display())));
    }
    Ok(Report { pass: scenarios.iter().all(Summary::passed), scenarios, csv })
}
