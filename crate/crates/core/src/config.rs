//! Run configuration. Every acceptance tolerance lives in [`Tolerances`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::EndSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndConfig {
    pub n: u32,
    pub r_max: f64,
    pub cells: usize,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_modes")]
    pub cross_modes: usize,
}

fn default_r_min() -> f64 {
    1.0
}

fn default_modes() -> usize {
    1
}

impl EndConfig {
    pub fn new(n: u32, r_max: f64, cells: usize) -> Self {
        EndConfig { n, r_max, cells, r_min: 1.0, cross_modes: 1 }
    }

    pub fn spec(&self) -> EndSpec {
        EndSpec::new(self.n, self.r_max, self.cells).with_r_min(self.r_min).with_cross_modes(self.cross_modes)
    }
}

/// Geometric grid `min, min*ratio, ...` up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
}

impl GridConfig {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.max / self.min).ln() / self.ratio.ln() + 1e-9).floor() as usize;
        (0..=count).map(|i| self.min * self.ratio.powi(i as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub kernel_rel_err: f64,
    pub horizontal_identity: f64,
    pub semigroup_representation: f64,
    pub stein_domination: f64,
    pub growth_slope: f64,
    pub bounded_slope: f64,
    pub family_slope: f64,
    pub slope_transition_p: f64,
    pub case_runtime_secs: f64,
    pub key_lemma_slope: f64,
    pub remainder_variation: f64,
    pub weak11_factor: f64,
    pub translation_factor: f64,
    pub maximal_growth_per_decade: f64,
    pub fs_stability_factor: f64,
    pub fs_growth_factor: f64,
    pub square_refinement_factor: f64,
    pub rbound_growth_per_decade: f64,
    pub rbound_trial_spread: f64,
    pub doubling_flat_factor: f64,
    pub doubling_growth_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            kernel_rel_err: 0.02,
            horizontal_identity: 1e-12,
            semigroup_representation: 1e-8,
            stein_domination: 1e-10,
            growth_slope: 0.15,
            bounded_slope: 0.1,
            family_slope: 0.15,
            slope_transition_p: 0.5,
            case_runtime_secs: 1.0,
            key_lemma_slope: 0.2,
            remainder_variation: 5.0,
            weak11_factor: 3.0,
            translation_factor: 2.0,
            maximal_growth_per_decade: 1.5,
            fs_stability_factor: 2.0,
            fs_growth_factor: 2.0,
            square_refinement_factor: 2.0,
            rbound_growth_per_decade: 1.5,
            rbound_trial_spread: 2.0,
            doubling_flat_factor: 1.25,
            doubling_growth_factor: 2.0,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 21] {
        [
            ("kernel_rel_err", self.kernel_rel_err),
            ("horizontal_identity", self.horizontal_identity),
            ("semigroup_representation", self.semigroup_representation),
            ("stein_domination", self.stein_domination),
            ("growth_slope", self.growth_slope),
            ("bounded_slope", self.bounded_slope),
            ("family_slope", self.family_slope),
            ("slope_transition_p", self.slope_transition_p),
            ("case_runtime_secs", self.case_runtime_secs),
            ("key_lemma_slope", self.key_lemma_slope),
            ("remainder_variation", self.remainder_variation),
            ("weak11_factor", self.weak11_factor),
            ("translation_factor", self.translation_factor),
            ("maximal_growth_per_decade", self.maximal_growth_per_decade),
            ("fs_stability_factor", self.fs_stability_factor),
            ("fs_growth_factor", self.fs_growth_factor),
            ("square_refinement_factor", self.square_refinement_factor),
            ("rbound_growth_per_decade", self.rbound_growth_per_decade),
            ("rbound_trial_spread", self.rbound_trial_spread),
            ("doubling_flat_factor", self.doubling_flat_factor),
            ("doubling_growth_factor", self.doubling_growth_factor),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub ends: Vec<EndConfig>,
    pub center_size: usize,
    pub m: u32,
    pub p_grid: Vec<f64>,
    pub t_grid: GridConfig,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            seed: None,
            out: PathBuf::from("out"),
            threads: None,
            ends: vec![EndConfig::new(3, 800.0, 160), EndConfig::new(4, 800.0, 160)],
            center_size: 1,
            m: 1,
            p_grid: vec![1.5, 2.0, 3.0, 4.0, 6.0, f64::INFINITY],
            t_grid: GridConfig { min: 1e2, max: 1e4, ratio: 10f64.powf(0.25) },
            tolerances: Tolerances::default(),
        }
    }
}

fn invalid<T>(field: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Config(format!("{field}: {msg}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ends.is_empty() {
            return invalid("ends", "at least one end is required");
        }
        for (i, e) in self.ends.iter().enumerate() {
            if e.n < 3 {
                return invalid(&format!("ends[{i}].n"), format!("dimension must be >= 3, got {}", e.n));
            }
            if !(e.r_min > 0.0 && e.r_max > 2.0 * e.r_min && e.r_max.is_finite()) {
                return invalid(&format!("ends[{i}].r_max"), format!("need 0 < 2 r_min < r_max, got r_min {} r_max {}", e.r_min, e.r_max));
            }
            if e.cells < 16 {
                return invalid(&format!("ends[{i}].cells"), format!("need >= 16 cells, got {}", e.cells));
            }
            if e.cross_modes == 0 {
                return invalid(&format!("ends[{i}].cross_modes"), "need >= 1");
            }
        }
        if self.center_size == 0 {
            return invalid("center_size", "need >= 1");
        }
        if !(1..=8).contains(&self.m) {
            return invalid("m", format!("need 1 <= m <= 8, got {}", self.m));
        }
        if self.p_grid.is_empty() {
            return invalid("p_grid", "must not be empty");
        }
        for &p in &self.p_grid {
            if p.is_nan() || p < 1.0 {
                return invalid("p_grid", format!("p must be >= 1, got {p}"));
            }
        }
        let g = &self.t_grid;
        if !(g.min > 0.0 && g.max >= g.min && g.max.is_finite()) {
            return invalid("t_grid", format!("need 0 < min <= max < inf, got [{}, {}]", g.min, g.max));
        }
        if !(g.ratio > 1.0 && g.ratio.is_finite()) {
            return invalid("t_grid.ratio", format!("need ratio > 1, got {}", g.ratio));
        }
        if self.threads == Some(0) {
            return invalid("threads", "need >= 1");
        }
        for (name, v) in self.tolerances.entries() {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(&format!("tolerances.{name}"), format!("must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    pub fn end_specs(&self) -> Vec<EndSpec> {
        self.ends.iter().map(EndConfig::spec).collect()
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("seed: this scenario is randomized and needs an explicit seed".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let g = RunConfig::default().t_grid.points();
        assert_eq!(g.len(), 9);
        assert!((g[8] - 1e4).abs() < 1e-6);
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let cfg = RunConfig::from_toml(include_str!("../../../configs/default.toml")).unwrap();
        let expect = RunConfig { scenario: Some("gp-exponent".into()), seed: Some(7), ..RunConfig::default() };
        assert_eq!(cfg, expect);
    }

    #[test]
    fn parses_sections_and_infinity() {
        let cfg = RunConfig::from_toml(
            r#"
            scenario = "gp-exponent"
            seed = 3
            p_grid = [2.0, inf]
            [[ends]]
            n = 3
            r_max = 100.0
            cells = 40
            [tolerances]
            growth_slope = 0.2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert!(cfg.p_grid[1].is_infinite());
        assert_eq!(cfg.ends.len(), 1);
        assert_eq!(cfg.tolerances.growth_slope, 0.2);
        assert_eq!(cfg.tolerances.bounded_slope, 0.1);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[tolerances]\nnope = 1.0").is_err());
        let e = RunConfig::from_toml("p_grid = [0.5]").unwrap_err().to_string();
        assert!(e.contains("p_grid"), "{e}");
        let e = RunConfig::from_toml("m = 0").unwrap_err().to_string();
        assert!(e.contains("m:"), "{e}");
        let e = RunConfig::from_toml("[tolerances]\ngrowth_slope = -1.0").unwrap_err().to_string();
        assert!(e.contains("growth_slope"), "{e}");
    }
}
