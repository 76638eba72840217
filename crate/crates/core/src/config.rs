//! Run configuration: parsing, defaults and validation.

use crate::error::{Error, Result};
use crate::limitsets::{Grid3, SamplingParams};
use crate::manifolds::{HolonomyParams, LeafParams, ProbeParams, SaturationParams};
use crate::skew::{SkewProduct, SkewSystem};
use crate::torus::TorusPoint;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: Option<SkewProduct>,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridConfig,
    pub orbit: SamplingParams,
    pub probe: ProbeParams,
    pub saturation: SaturationParams,
    pub manifold: ManifoldConfig,
    pub nonwandering: NonwanderingConfig,
    pub auxiliary: AuxiliaryConfig,
    pub perturbation: PerturbationConfig,
    pub base_point: BasePointConfig,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: None,
            seed: 0,
            out: PathBuf::from("runs"),
            grid: GridConfig::default(),
            orbit: SamplingParams::default(),
            probe: ProbeParams::default(),
            saturation: SaturationParams::default(),
            manifold: ManifoldConfig::default(),
            nonwandering: NonwanderingConfig::default(),
            auxiliary: AuxiliaryConfig::default(),
            perturbation: PerturbationConfig::default(),
            base_point: BasePointConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Coarse grid, refined by `refine` in every direction for the dichotomy test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_base: usize,
    pub n_fiber: usize,
    pub refine: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_base: 32,
            n_fiber: 32,
            refine: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldConfig {
    pub arclength_cap: f64,
    /// Node spacing; `None` means a quarter of the coarse base cell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_seg: Option<f64>,
    pub node_tol: f64,
    pub depth_cap: usize,
    pub stall_length: f64,
    pub budget: f64,
    pub holonomy: HolonomyParams,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        let leaf = LeafParams::default();
        ManifoldConfig {
            arclength_cap: leaf.arclength_cap,
            max_seg: None,
            node_tol: leaf.node_tol,
            depth_cap: leaf.depth_cap,
            stall_length: 20.0,
            budget: 2000.0,
            holonomy: HolonomyParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonwanderingConfig {
    pub n: usize,
    pub samples_per_cell: usize,
    pub horizon: usize,
    pub include_inverse: bool,
    pub fatten: usize,
    /// Length of the single orbit used for the dense-orbit test.
    pub dense_steps: usize,
}

impl Default for NonwanderingConfig {
    fn default() -> Self {
        NonwanderingConfig {
            n: 16,
            samples_per_cell: 2,
            horizon: 100_000,
            include_inverse: false,
            fatten: 1,
            dense_steps: 10_000_000,
        }
    }
}

/// Sampling for secondary attractor estimates (the inverse system, the
/// nonwandering comparison sets).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxiliaryConfig {
    pub n_samples: usize,
    pub n_steps: usize,
}

impl Default for AuxiliaryConfig {
    fn default() -> Self {
        AuxiliaryConfig {
            n_samples: 16,
            n_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub b_values: Vec<f64>,
    /// Unstable coordinate of the probe base point relative to the anchor.
    pub t_probe: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            b_values: (0..=5).map(|i| 0.002 * i as f64).collect(),
            t_probe: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasePointConfig {
    pub point: [f64; 2],
    pub period: usize,
}

impl Default for BasePointConfig {
    fn default() -> Self {
        BasePointConfig {
            point: [0.0, 0.0],
            period: 1,
        }
    }
}

impl BasePointConfig {
    pub fn torus_point(&self) -> TorusPoint {
        TorusPoint::new(self.point[0], self.point[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Coincidence tolerance in units of the cell diagonal.
    pub coincidence_cells: f64,
    pub shrink_min: f64,
    pub full_min: f64,
    pub nw_max: f64,
    pub dense_min: f64,
    pub repeller_margin: f64,
    pub slack: f64,
    /// Required `delta_found / eps`.
    pub delta_ratio_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            coincidence_cells: 2.0,
            shrink_min: 1.5,
            full_min: 0.95,
            nw_max: 0.2,
            dense_min: 0.95,
            repeller_margin: 5e-3,
            slack: 1e-6,
            delta_ratio_min: 0.25,
        }
    }
}

fn invalid(field: &str, value: impl std::fmt::Display, range: &str) -> Error {
    Error::Validation {
        field: field.into(),
        value: value.to_string(),
        range: range.into(),
    }
}

fn check(ok: bool, field: &str, value: impl std::fmt::Display, range: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, value, range))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v > 0.0, field, v, "a finite number > 0")
}

fn unit_open(field: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v < 1.0, field, v, "(0, 1)")
}

impl RunConfig {
    pub fn coarse_grid(&self) -> Grid3 {
        Grid3::new(self.grid.n_base, self.grid.n_fiber).expect("validated grid")
    }

    pub fn fine_grid(&self) -> Grid3 {
        Grid3::new(self.grid.n_base * self.grid.refine, self.grid.n_fiber * self.grid.refine)
            .expect("validated grid")
    }

    pub fn nonwandering_grid(&self) -> Grid3 {
        Grid3::cubic(self.nonwandering.n)
    }

    /// Leaf parameters for cells of `grid`.
    pub fn leaf_params(&self, grid: Grid3) -> LeafParams {
        LeafParams {
            arclength_cap: self.manifold.arclength_cap,
            max_seg: self
                .manifold
                .max_seg
                .unwrap_or(LeafParams::for_grid(grid).max_seg),
            node_tol: self.manifold.node_tol,
            depth_cap: self.manifold.depth_cap,
        }
    }

    /// The configured system, or a validation error naming the missing field.
    pub fn system(&self) -> Result<&SkewProduct> {
        self.system
            .as_ref()
            .ok_or_else(|| invalid("system", "missing", "a system specification"))
    }

    pub fn validate(&self) -> Result<()> {
        Grid3::new(self.grid.n_base, self.grid.n_fiber)?;
        check(
            (2..=8).contains(&self.grid.refine),
            "grid.refine",
            self.grid.refine,
            "[2, 8]",
        )?;
        let (fb, ff) = (
            self.grid.n_base * self.grid.refine,
            self.grid.n_fiber * self.grid.refine,
        );
        check(fb <= 1024 && ff <= 1024, "grid.refine", self.grid.refine, "refined grid within 1024")?;

        let o = &self.orbit;
        check(o.n_samples >= 1, "orbit.n_samples", o.n_samples, ">= 1")?;
        check(o.n_steps >= 1, "orbit.n_steps", o.n_steps, ">= 1")?;
        unit_open("orbit.theta", o.theta)?;
        check(
            o.tail_fraction > 0.0 && o.tail_fraction <= 1.0,
            "orbit.tail_fraction",
            o.tail_fraction,
            "(0, 1]",
        )?;

        let p = &self.probe;
        check(!p.eps_list.is_empty(), "probe.eps_list", "[]", "a nonempty list")?;
        for &e in &p.eps_list {
            check(e > 0.0 && e <= 0.5, "probe.eps_list", e, "(0, 0.5]")?;
        }
        check(p.n_steps >= 1, "probe.n_steps", p.n_steps, ">= 1")?;
        check(p.n_boundary_samples >= 1, "probe.n_boundary_samples", p.n_boundary_samples, ">= 1")?;
        let eps_min = p.eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
        check(
            p.delta_min > 0.0 && p.delta_min <= eps_min,
            "probe.delta_min",
            p.delta_min,
            "(0, min eps]",
        )?;

        let s = &self.saturation;
        check(s.n_probe >= 1, "saturation.n_probe", s.n_probe, ">= 1")?;
        positive("saturation.leaf_arclength", s.leaf_arclength)?;
        check(s.fatten <= 8, "saturation.fatten", s.fatten, "[0, 8]")?;

        let m = &self.manifold;
        positive("manifold.arclength_cap", m.arclength_cap)?;
        if let Some(seg) = m.max_seg {
            check(seg > 0.0 && seg <= 0.25, "manifold.max_seg", seg, "(0, 0.25]")?;
        }
        unit_open("manifold.node_tol", m.node_tol)?;
        check((1..=10_000).contains(&m.depth_cap), "manifold.depth_cap", m.depth_cap, "[1, 10000]")?;
        check(m.stall_length >= 0.0, "manifold.stall_length", m.stall_length, ">= 0")?;
        positive("manifold.budget", m.budget)?;
        let h = &m.holonomy;
        check(h.depth_cap >= 10, "manifold.holonomy.depth_cap", h.depth_cap, ">= 10")?;
        unit_open("manifold.holonomy.tol", h.tol)?;
        check(h.shift_cap >= 1, "manifold.holonomy.shift_cap", h.shift_cap, ">= 1")?;

        let n = &self.nonwandering;
        Grid3::new(n.n, n.n).map_err(|_| invalid("nonwandering.n", n.n, "[8, 1024]"))?;
        check(n.samples_per_cell >= 1, "nonwandering.samples_per_cell", n.samples_per_cell, ">= 1")?;
        check(n.horizon >= 1, "nonwandering.horizon", n.horizon, ">= 1")?;
        check(n.fatten <= 8, "nonwandering.fatten", n.fatten, "[0, 8]")?;
        check(n.dense_steps >= 1, "nonwandering.dense_steps", n.dense_steps, ">= 1")?;

        let a = &self.auxiliary;
        check(a.n_samples >= 1, "auxiliary.n_samples", a.n_samples, ">= 1")?;
        check(a.n_steps >= 1, "auxiliary.n_steps", a.n_steps, ">= 1")?;

        let b = &self.perturbation.b_values;
        check(
            b.first() == Some(&0.0),
            "perturbation.b_values",
            format!("{b:?}"),
            "a list starting at 0",
        )?;
        check(
            b.windows(2).all(|w| w[0] < w[1]) && b.iter().all(|v| v.is_finite()),
            "perturbation.b_values",
            format!("{b:?}"),
            "strictly ascending finite values",
        )?;
        check(
            self.perturbation.t_probe.is_finite(),
            "perturbation.t_probe",
            self.perturbation.t_probe,
            "a finite number",
        )?;

        let bp = &self.base_point;
        check(
            bp.point.iter().all(|v| v.is_finite()),
            "base_point.point",
            format!("{:?}", bp.point),
            "finite coordinates",
        )?;
        check((1..=24).contains(&bp.period), "base_point.period", bp.period, "[1, 24]")?;

        let t = &self.thresholds;
        positive("thresholds.coincidence_cells", t.coincidence_cells)?;
        check(t.shrink_min > 1.0, "thresholds.shrink_min", t.shrink_min, "> 1")?;
        unit_open("thresholds.full_min", t.full_min)?;
        unit_open("thresholds.nw_max", t.nw_max)?;
        unit_open("thresholds.dense_min", t.dense_min)?;
        check(
            (0.0..0.5).contains(&t.repeller_margin),
            "thresholds.repeller_margin",
            t.repeller_margin,
            "[0, 0.5)",
        )?;
        check(t.slack >= 0.0, "thresholds.slack", t.slack, ">= 0")?;
        check(
            t.delta_ratio_min > 0.0 && t.delta_ratio_min <= 1.0,
            "thresholds.delta_ratio_min",
            t.delta_ratio_min,
            "(0, 1]",
        )?;
        if let Some(sys) = &self.system {
            if let Err(e) = sys.base().base_orbit(bp.torus_point(), bp.period as u32) {
                return Err(invalid(
                    "base_point",
                    format!("{:?} with period {}", bp.point, bp.period),
                    &format!("a periodic base point ({e})"),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse and validate a configuration from JSON text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| parse_error(&e))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read, parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse a bare system specification `{ "base_matrix": ..., "fiber": ... }`.
pub fn parse_system_str(text: &str) -> Result<SkewProduct> {
    serde_json::from_str(text).map_err(|e| parse_error(&e))
}

/// Serde error with line/column context and, for unknown keys, the nearest
/// accepted key.
pub(crate) fn parse_error(e: &serde_json::Error) -> Error {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let names: Vec<&str> = rest.split('`').step_by(2).collect();
        if let Some((unknown, expected)) = names.split_first() {
            let best = expected
                .iter()
                .map(|c| (strsim::jaro_winkler(unknown, c), *c))
                .filter(|(score, _)| *score > 0.7)
                .max_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, suggestion)) = best {
                return Error::Parse(format!(
                    "unknown key `{unknown}` at line {} column {}; did you mean `{suggestion}`?",
                    e.line(),
                    e.column()
                ));
            }
        }
    }
    Error::Parse(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = parse_config_str(&cfg.to_json()).unwrap();
        assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn small_fiber_grid_is_rejected() {
        let err = parse_config_str(r#"{"grid": {"n_fiber": 4}}"#).unwrap_err();
        match err {
            Error::Validation { field, range, .. } => {
                assert_eq!(field, "grid.n_fiber");
                assert!(range.contains('8'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_gets_a_suggestion() {
        let text = r#"{"system": {"base_matrix": [[2,1],[1,1]], "fibre": {"c0": 0}}}"#;
        let msg = parse_config_str(text).unwrap_err().to_string();
        assert!(msg.contains("`fibre`") && msg.contains("did you mean `fiber`"), "{msg}");
        let msg = parse_config_str(r#"{"sed": 3}"#).unwrap_err().to_string();
        assert!(msg.contains("did you mean `seed`") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn perturbation_values_must_start_at_zero() {
        let err = parse_config_str(r#"{"perturbation": {"b_values": [0.01, 0.02]}}"#).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "perturbation.b_values"));
        let err = parse_config_str(r#"{"perturbation": {"b_values": [0, 0.02, 0.01]}}"#).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn base_point_must_be_periodic() {
        let mut cfg = crate::presets::ns();
        cfg.base_point.point = [0.1234, 0.0];
        assert!(matches!(cfg.validate(), Err(Error::Validation { ref field, .. }) if field == "base_point"));
    }
}
