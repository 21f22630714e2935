//! Measure-weighted radial graphs modelling a connected sum of ends
//! `R^{n_i} x M_i` glued at a compact center.
//!
//! Each end is a chain on a geometric radial grid. A vertex at radius `r`
//! carries the exact shell measure `|S^{n-1}| (b^n - a^n) / n` of its dual
//! cell `[a, b]`, and a radial edge between `r_j < r_{j+1}` has the flux
//! conductance `|S^{n-1}| / int_{r_j}^{r_{j+1}} rho^{1-n} d rho`, so radial
//! harmonic functions are reproduced exactly. Retained cross-section modes
//! are copies of the chain joined at equal radius through a complete graph
//! whose nonzero eigenvalue is one.
//!
//! The Laplacian is the positive operator
//! `L f(x) = mu_x^{-1} sum_{y ~ x} w_xy (f(x) - f(y))`, symmetric with
//! respect to the vertex measure.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::solver::{ArrowCholesky, SymSparse};
use crate::specfun::sphere_area;

/// Cross-section eigenvalue attached to each retained non-constant mode.
const CROSS_EIGENVALUE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndSpec {
    pub n: u32,
    #[serde(default = "default_modes")]
    pub cross_modes: usize,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    pub r_max: f64,
    pub cells: usize,
}

fn default_modes() -> usize {
    1
}

fn default_r_min() -> f64 {
    1.0
}

impl EndSpec {
    pub fn new(n: u32, r_max: f64, cells: usize) -> Self {
        EndSpec { n, cross_modes: 1, r_min: 1.0, r_max, cells }
    }

    pub fn with_r_min(mut self, r_min: f64) -> Self {
        self.r_min = r_min;
        self
    }

    pub fn with_cross_modes(mut self, modes: usize) -> Self {
        self.cross_modes = modes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("end dimension n must be >= 1".into()));
        }
        if self.cross_modes < 1 {
            return Err(Error::Config("cross_modes must be >= 1".into()));
        }
        if !(self.r_min > 0.0 && self.r_max > self.r_min && self.r_max.is_finite()) {
            return Err(Error::Config(format!(
                "radial grid must satisfy r_max > r_min > 0 (got r_min={}, r_max={})",
                self.r_min, self.r_max
            )));
        }
        if self.cells < 16 {
            return Err(Error::Config(format!("cells must be >= 16, got {}", self.cells)));
        }
        Ok(())
    }

    /// Geometric radial nodes `r_0 = r_min < ... < r_cells = r_max`.
    pub fn radii(&self) -> Vec<f64> {
        let ratio = self.r_max / self.r_min;
        (0..=self.cells)
            .map(|j| self.r_min * ratio.powf(j as f64 / self.cells as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    Center,
    End(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub region: Region,
    pub mode: usize,
    pub radial_index: usize,
    /// Distance from the center hub, `d(x_i°, x) + r_min` on end `i`.
    pub r: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub conductance: f64,
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct ManifoldMesh {
    ends: Vec<EndSpec>,
    vertices: Vec<Vertex>,
    adjacency: Vec<Vec<Edge>>,
    /// Per-vertex normalized edge weights for the gradient, aligned with `adjacency`.
    grad_weights: Vec<Vec<f64>>,
    anchors: Vec<usize>,
    blocks: Vec<Range<usize>>,
    center: Range<usize>,
    bandwidth: usize,
}

/// Per-vertex `|grad f|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField(pub Vec<f64>);

impl GradientField {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn radial_resistance(n: u32, a: f64, b: f64) -> f64 {
    match n {
        1 => b - a,
        2 => (b / a).ln(),
        _ => {
            let e = 2.0 - n as f64;
            (a.powf(e) - b.powf(e)) / (n as f64 - 2.0)
        }
    }
}

fn add_edge(adj: &mut [Vec<Edge>], i: usize, j: usize, conductance: f64, length: f64) {
    adj[i].push(Edge { to: j, conductance, length });
    adj[j].push(Edge { to: i, conductance, length });
}

/// Appends one end block; returns its index range.
fn push_end(
    end_id: usize,
    spec: &EndSpec,
    vertices: &mut Vec<Vertex>,
    adjacency: &mut Vec<Vec<Edge>>,
) -> Range<usize> {
    let start = vertices.len();
    let radii = spec.radii();
    let modes = spec.cross_modes;
    let nf = spec.n as f64;
    let area = sphere_area(spec.n);
    let last = radii.len() - 1;
    for (j, &r) in radii.iter().enumerate() {
        let a = if j == 0 { r } else { 0.5 * (radii[j - 1] + r) };
        let b = if j == last { r } else { 0.5 * (r + radii[j + 1]) };
        let shell = area * (b.powf(nf) - a.powf(nf)) / nf;
        for mode in 0..modes {
            vertices.push(Vertex {
                region: Region::End(end_id),
                mode,
                radial_index: j,
                r,
                measure: shell / modes as f64,
            });
            adjacency.push(Vec::new());
        }
    }
    for j in 0..=last {
        let base = start + j * modes;
        if j < last {
            let w = area / radial_resistance(spec.n, radii[j], radii[j + 1]) / modes as f64;
            for mode in 0..modes {
                add_edge(adjacency, base + mode, base + modes + mode, w, radii[j + 1] - radii[j]);
            }
        }
        if modes > 1 {
            let mu = vertices[base].measure;
            let w = mu * CROSS_EIGENVALUE / modes as f64;
            for a in 0..modes {
                for b in a + 1..modes {
                    add_edge(adjacency, base + a, base + b, w, 1.0);
                }
            }
        }
    }
    start..vertices.len()
}

impl ManifoldMesh {
    /// Connected sum of `ends.len() >= 2` ends glued at `center_size` unit-measure hub vertices.
    pub fn build(ends: &[EndSpec], center_size: usize) -> Result<Self> {
        if ends.len() < 2 {
            return Err(Error::Config(format!("a manifold with ends needs >= 2 ends, got {}", ends.len())));
        }
        if center_size < 1 {
            return Err(Error::Config("center_size must be >= 1".into()));
        }
        Self::assemble(ends, center_size)
    }

    /// Single end with a reflecting inner boundary and no center; used to
    /// compare against Euclidean closed forms.
    pub fn probe(end: &EndSpec) -> Result<Self> {
        Self::assemble(std::slice::from_ref(end), 0)
    }

    fn assemble(ends: &[EndSpec], center_size: usize) -> Result<Self> {
        for e in ends {
            e.validate()?;
        }
        let mut vertices = Vec::new();
        let mut adjacency = Vec::new();
        let mut blocks = Vec::new();
        let mut anchors = Vec::new();
        for (i, e) in ends.iter().enumerate() {
            let range = push_end(i, e, &mut vertices, &mut adjacency);
            anchors.push(range.start);
            blocks.push(range);
        }
        let cstart = vertices.len();
        for _ in 0..center_size {
            vertices.push(Vertex { region: Region::Center, mode: 0, radial_index: 0, r: 0.0, measure: 1.0 });
            adjacency.push(Vec::new());
        }
        let center = cstart..vertices.len();
        for a in center.clone() {
            for b in a + 1..center.end {
                add_edge(&mut adjacency, a, b, 1.0, 1.0);
            }
        }
        if center_size > 0 {
            for (e, blk) in ends.iter().zip(&blocks) {
                let w = sphere_area(e.n) * e.r_min.powf(e.n as f64 - 2.0)
                    / (center_size * e.cross_modes) as f64;
                for c in center.clone() {
                    for mode in 0..e.cross_modes {
                        add_edge(&mut adjacency, c, blk.start + mode, w, e.r_min);
                    }
                }
            }
        }
        let grad_weights = adjacency
            .iter()
            .map(|edges| {
                let raw: Vec<f64> = edges.iter().map(|e| e.conductance * e.length * e.length).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| if total > 0.0 { w / total } else { 0.0 }).collect()
            })
            .collect();
        let bandwidth = ends.iter().map(|e| e.cross_modes).max().unwrap_or(1);
        Ok(ManifoldMesh {
            ends: ends.to_vec(),
            vertices,
            adjacency,
            grad_weights,
            anchors,
            blocks,
            center,
            bandwidth,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn ends(&self) -> &[EndSpec] {
        &self.ends
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn edges(&self, i: usize) -> &[Edge] {
        &self.adjacency[i]
    }

    pub fn grad_weights(&self, i: usize) -> &[f64] {
        &self.grad_weights[i]
    }

    pub fn measures(&self) -> Vec<f64> {
        self.vertices.iter().map(|v| v.measure).collect()
    }

    pub fn total_measure(&self) -> f64 {
        self.vertices.iter().map(|v| v.measure).sum()
    }

    /// Anchor `x_i°` of each end: the first vertex (mode 0, `r = r_min`).
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn center(&self) -> Range<usize> {
        self.center.clone()
    }

    pub fn end_range(&self, end: usize) -> Range<usize> {
        self.blocks[end].clone()
    }

    /// `n* = min n_i`.
    pub fn critical_dimension(&self) -> u32 {
        self.ends.iter().map(|e| e.n).min().unwrap_or(0)
    }

    /// `d(x_i°, x)` for `x` on end `i`; zero on the center.
    pub fn anchor_distance(&self, x: usize) -> f64 {
        match self.vertices[x].region {
            Region::Center => 0.0,
            Region::End(i) => self.vertices[x].r - self.ends[i].r_min,
        }
    }

    /// Vertex on `end` (mode 0) whose radius is closest to `r`.
    pub fn vertex_near(&self, end: usize, r: f64) -> usize {
        let modes = self.ends[end].cross_modes;
        let blk = &self.blocks[end];
        (blk.start..blk.end)
            .step_by(modes)
            .min_by(|&a, &b| {
                let da = (self.vertices[a].r - r).abs();
                let db = (self.vertices[b].r - r).abs();
                da.partial_cmp(&db).unwrap_or(Ordering::Equal)
            })
            .unwrap_or(blk.start)
    }

    /// Mode-0 vertices of `end` with radius in `[lo, hi]`.
    pub fn radial_vertices(&self, end: usize, lo: f64, hi: f64) -> Vec<usize> {
        let modes = self.ends[end].cross_modes;
        self.blocks[end]
            .clone()
            .step_by(modes)
            .filter(|&x| self.vertices[x].r >= lo && self.vertices[x].r <= hi)
            .collect()
    }

    /// `L f`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.adjacency
            .iter()
            .zip(&self.vertices)
            .enumerate()
            .map(|(x, (edges, v))| {
                edges.iter().map(|e| e.conductance * (f[x] - f[e.to])).sum::<f64>() / v.measure
            })
            .collect()
    }

    /// `alpha M + beta K` where `K` is the weighted graph Laplacian (stiffness).
    pub fn shifted_stiffness(&self, alpha: f64, beta: f64) -> SymSparse {
        let diag = self
            .adjacency
            .iter()
            .zip(&self.vertices)
            .map(|(edges, v)| alpha * v.measure + beta * edges.iter().map(|e| e.conductance).sum::<f64>())
            .collect();
        let off = self
            .adjacency
            .iter()
            .map(|edges| edges.iter().map(|e| (e.to, -beta * e.conductance)).collect())
            .collect();
        SymSparse { diag, off }
    }

    /// Factorization of `alpha M + beta K`; solving with `M f` applies `(alpha + beta L)^{-1}`.
    pub fn factor_shifted(&self, alpha: f64, beta: f64) -> Result<ArrowCholesky> {
        let a = self.shifted_stiffness(alpha, beta);
        ArrowCholesky::factor(&a, &self.blocks, self.center.clone(), self.bandwidth)
    }

    /// `<f, g>_mu`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.vertices.iter().zip(f.iter().zip(g)).map(|(v, (a, b))| v.measure * a * b).sum()
    }

    /// Discrete `|grad f|(x) = (sum_e w_e ((f(y) - f(x)) / len_e)^2)^{1/2}`.
    pub fn gradient_magnitude(&self, f: &[f64]) -> GradientField {
        GradientField(
            (0..self.len())
                .map(|x| {
                    self.adjacency[x]
                        .iter()
                        .zip(&self.grad_weights[x])
                        .map(|(e, w)| {
                            let d = (f[e.to] - f[x]) / e.length;
                            w * d * d
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .collect(),
        )
    }

    pub fn lp_norm(&self, f: &[f64], p: f64) -> Result<f64> {
        lp_norm(&self.measures(), f, p)
    }

    /// Graph distances from `src` along weighted edges.
    pub fn distances_from(&self, src: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
            }
        }
        let mut dist = vec![f64::INFINITY; self.len()];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, src));
        while let Some(Item(d, x)) = heap.pop() {
            if d > dist[x] {
                continue;
            }
            for e in &self.adjacency[x] {
                let nd = d + e.length;
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    heap.push(Item(nd, e.to));
                }
            }
        }
        dist
    }

    /// `mu(B(x, r))` for closed graph balls.
    pub fn ball_measure(&self, x: usize, r: f64) -> f64 {
        self.distances_from(x)
            .iter()
            .zip(&self.vertices)
            .filter(|(d, _)| **d <= r)
            .map(|(_, v)| v.measure)
            .sum()
    }

    /// `sup mu(B(x, 2t)) / mu(B(x, t))` over vertices with `r <= r_max/4` and
    /// `t` on a geometric grid (ratio `2^{1/4}`) from the shortest edge to `r_max/8`,
    /// keeping only radii that reach every neighbour of `x`.
    pub fn doubling_ratio(&self) -> f64 {
        let r_max = self.ends.iter().map(|e| e.r_max).fold(f64::INFINITY, f64::min);
        let t_min = self
            .adjacency
            .iter()
            .flatten()
            .map(|e| e.length)
            .fold(f64::INFINITY, f64::min);
        let t_max = r_max / 8.0;
        let mut ts = Vec::new();
        let mut t = t_min;
        while t <= t_max {
            ts.push(t);
            t *= 2f64.powf(0.25);
        }
        let sample: Vec<usize> = (0..self.len()).filter(|&x| self.vertices[x].r <= r_max / 4.0).collect();
        let ratios = crate::parallel::map(&sample, |&x| {
            let dist = self.distances_from(x);
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap_or(Ordering::Equal));
            let sorted: Vec<f64> = order.iter().map(|&i| dist[i]).collect();
            let mut prefix = Vec::with_capacity(order.len());
            let mut acc = 0.0;
            for &i in &order {
                acc += self.vertices[i].measure;
                prefix.push(acc);
            }
            let ball = |r: f64| {
                let k = sorted.partition_point(|&d| d <= r);
                if k == 0 {
                    0.0
                } else {
                    prefix[k - 1]
                }
            };
            let local = self.adjacency[x].iter().map(|e| e.length).fold(0.0, f64::max);
            ts.iter().filter(|&&t| t >= local).map(|&t| ball(2.0 * t) / ball(t)).fold(0.0, f64::max)
        });
        ratios.into_iter().fold(0.0, f64::max)
    }

    /// Writes `(vertex, end, r, mu)` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["vertex", "end", "r", "mu"])?;
        for (i, v) in self.vertices.iter().enumerate() {
            let end = match v.region {
                Region::Center => "center".to_string(),
                Region::End(e) => e.to_string(),
            };
            wtr.write_record([i.to_string(), end, format!("{:.12e}", v.r), format!("{:.12e}", v.measure)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `(sum_x |f(x)|^p mu_x)^{1/p}`, or `max |f|` for `p = inf`.
pub fn lp_norm(measures: &[f64], f: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return domain(format!("L^p norm needs p >= 1, got {p}"));
    }
    if p.is_infinite() {
        return Ok(f.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    // Scale by the max to avoid overflow for large p.
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = measures.iter().zip(f).map(|(m, v)| m * (v.abs() / scale).powf(p)).sum();
    Ok(scale * s.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_ends() -> ManifoldMesh {
        ManifoldMesh::build(&[EndSpec::new(3, 50.0, 32), EndSpec::new(4, 50.0, 32)], 1).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ManifoldMesh::build(&[EndSpec::new(3, 50.0, 32)], 1).is_err());
        assert!(ManifoldMesh::build(&[EndSpec::new(3, 50.0, 8), EndSpec::new(3, 50.0, 32)], 1).is_err());
        assert!(ManifoldMesh::build(&[EndSpec::new(3, 0.5, 32), EndSpec::new(3, 50.0, 32)], 1).is_err());
    }

    #[test]
    fn measure_additivity() {
        let mesh = two_ends();
        let expect = 4.0 * PI * (50f64.powi(3) - 1.0) / 3.0 + 2.0 * PI * PI * (50f64.powi(4) - 1.0) / 4.0 + 1.0;
        assert!((mesh.total_measure() - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn laplacian_kills_constants() {
        let mesh = two_ends();
        let lf = mesh.laplacian(&vec![3.5; mesh.len()]);
        assert!(lf.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_of_constant_and_radius() {
        let mesh = ManifoldMesh::probe(&EndSpec::new(3, 50.0, 40)).unwrap();
        let g = mesh.gradient_magnitude(&vec![1.0; mesh.len()]);
        assert!(g.values().iter().all(|v| *v == 0.0));
        let r: Vec<f64> = mesh.vertices().iter().map(|v| v.r).collect();
        let g = mesh.gradient_magnitude(&r);
        for v in &g.values()[1..mesh.len() - 1] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_norm_examples() {
        let measures = [2.0, 1.0, 5.0];
        assert_eq!(lp_norm(&measures, &[1.0, 0.0, 0.0], 1.0).unwrap(), 2.0);
        assert_eq!(lp_norm(&measures, &[1.0, 1.0, 1.0], f64::INFINITY).unwrap(), 1.0);
        assert!(lp_norm(&measures, &[1.0, 1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn anchors_and_regions() {
        let mesh = two_ends();
        assert_eq!(mesh.anchors().len(), 2);
        for (i, &a) in mesh.anchors().iter().enumerate() {
            assert_eq!(mesh.vertex(a).region, Region::End(i));
            assert_eq!(mesh.vertex(a).r, 1.0);
            assert_eq!(mesh.anchor_distance(a), 0.0);
        }
        assert_eq!(mesh.center().len(), 1);
        assert_eq!(mesh.critical_dimension(), 3);
    }

    #[test]
    fn cross_modes_keep_constants_harmonic() {
        let ends = [EndSpec::new(3, 40.0, 20).with_cross_modes(3), EndSpec::new(4, 40.0, 20)];
        let mesh = ManifoldMesh::build(&ends, 2).unwrap();
        let lf = mesh.laplacian(&vec![1.0; mesh.len()]);
        assert!(lf.iter().all(|v| v.abs() < 1e-12));
        let chol = mesh.factor_shifted(0.3, 1.0).unwrap();
        let x: Vec<f64> = (0..mesh.len()).map(|i| (i as f64).cos()).collect();
        let b = mesh.shifted_stiffness(0.3, 1.0).matvec(&x);
        let y = chol.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let mesh = two_ends();
        let mut buf = Vec::new();
        mesh.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vertex,end,r,mu\n"));
        assert_eq!(text.lines().count(), mesh.len() + 1);
        assert!(text.lines().last().unwrap().contains("center"));
    }
}
