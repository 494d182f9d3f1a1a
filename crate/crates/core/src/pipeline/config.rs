//! Run configuration: a versioned TOML schema in which every table rejects
//! unknown keys.

use crate::error::{param, Error, Result};
use crate::series::SlopeConvention;
use crate::solver::{PolynomialData, RegularizationSchedule, ScenarioLabel};
use crate::weiss::WeissVariant;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const SCHEMA_VERSION: u32 = 1;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Solve,
    Boundary,
    Hodograph,
    Weiss,
    Blowup,
    Series,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Solve, Stage::Boundary, Stage::Hodograph, Stage::Weiss, Stage::Blowup, Stage::Series];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Solve => "solve",
            Stage::Boundary => "boundary",
            Stage::Hodograph => "hodograph",
            Stage::Weiss => "weiss",
            Stage::Blowup => "blowup",
            Stage::Series => "series",
        }
    }

    /// The stage whose output this one consumes.
    pub fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Solve | Stage::Series => None,
            Stage::Boundary | Stage::Weiss | Stage::Blowup => Some(Stage::Solve),
            Stage::Hodograph => Some(Stage::Boundary),
        }
    }

    /// Stages run when the config does not list any.
    pub fn defaults_for(label: ScenarioLabel) -> Vec<Stage> {
        match label {
            ScenarioLabel::TimeOnly => vec![Stage::Solve, Stage::Boundary],
            ScenarioLabel::LocalCap | ScenarioLabel::EllipticCross | ScenarioLabel::Custom => vec![Stage::Solve],
            ScenarioLabel::SelfSimilar1d => vec![Stage::Series],
            ScenarioLabel::CollapsingInterval => vec![Stage::Solve, Stage::Boundary, Stage::Hodograph, Stage::Weiss, Stage::Blowup],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}` (expected one of solve, boundary, hodograph, weiss, blowup, series)")))
    }
}

/// Parses a comma-separated stage list such as `solve,boundary,weiss`.
pub fn parse_stage_list(s: &str) -> Result<Vec<Stage>> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(Stage::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub nx: usize,
    /// Time levels; `None` derives them from the smallest ε.
    pub nt: Option<usize>,
    /// Spatial box and time interval; `None` uses the scenario's extent.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 1, nx: 401, nt: None, lo: None, hi: None, t0: None, t1: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub eps0: f64,
    pub eps_min: f64,
    pub stop_tol: f64,
    pub max_picard: usize,
    pub picard_tol: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let d = RegularizationSchedule::default();
        ScheduleConfig { eps0: 0.1, eps_min: d.eps_min(), stop_tol: d.stop_tol, max_picard: d.max_picard, picard_tol: d.picard_tol }
    }
}

impl ScheduleConfig {
    /// `ε_k = eps0 · 2^{-k}` down to `eps_min` (rounded to the nearest power).
    pub fn schedule(&self) -> RegularizationSchedule {
        let count = ((self.eps0 / self.eps_min).log2().round().max(1.0) as usize) + 1;
        let mut s = RegularizationSchedule::geometric(self.eps0, count);
        s.stop_tol = self.stop_tol;
        s.max_picard = self.max_picard;
        s.picard_tol = self.picard_tol;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Hölder exponent of the regularity diagnostics and the pinching check.
    pub alpha: f64,
    pub gamma: f64,
    /// Gradient scale `M` of the rescaling.
    pub m: f64,
    /// Lower gradient bound for the hodograph inversion, in rescaled units.
    pub hodograph_delta: f64,
    pub weiss_variant: WeissVariant,
    pub weiss_rs: Vec<f64>,
    /// Anchor `(x, t)` of the Weiss functional; defaults to the collapse point.
    pub weiss_anchor: Option<Vec<f64>>,
    pub rhos: Vec<f64>,
    /// Additional resolutions for the blow-up trend; the run's own grid is
    /// always included.
    pub trend_nx: Vec<usize>,
    pub series_c: Vec<f64>,
    pub series_order: usize,
    pub series_convention: SlopeConvention,
    pub series_x_max: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: 0.5,
            gamma: 0.25,
            m: 20.0,
            hodograph_delta: 0.5,
            weiss_variant: WeissVariant::default(),
            weiss_rs: vec![0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.02],
            weiss_anchor: None,
            rhos: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            trend_nx: vec![201, 801],
            series_c: vec![0.1, 1.0, 10.0],
            series_order: 200,
            series_convention: SlopeConvention::default(),
            series_x_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Residual bound on exact or frozen fields.
    pub residual: f64,
    /// Bound on the residual consistency constant `max|res| / (hx² + ht)`
    /// away from the free boundary.
    pub residual_constant: f64,
    /// Slack on the discrete `u_t ≥ c`.
    pub time_slope: f64,
    /// Smallest accepted slope of `Ψ(r)`.
    pub weiss_slope: f64,
    /// Series/ODE agreement on the convergence window.
    pub series_ode: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { residual: 1e-8, residual_constant: 50.0, time_slope: 1e-3, weiss_slope: 1e-3, series_ode: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: ScenarioLabel,
    /// Monotonicity constant; defaults to the scenario's.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Polynomial data for `custom`.
    #[serde(default)]
    pub custom: Option<PolynomialData>,
}

impl RunConfig {
    pub fn for_scenario(scenario: ScenarioLabel) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            scenario,
            c: None,
            stages: None,
            grid: GridConfig::default(),
            schedule: ScheduleConfig::default(),
            analysis: AnalysisConfig::default(),
            tolerances: Tolerances::default(),
            custom: None,
        }
    }

    /// Parses and validates. Syntax and schema errors carry the TOML
    /// parser's line/column and key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone().unwrap_or_else(|| Stage::defaults_for(self.scenario));
        s.sort();
        s.dedup();
        s
    }

    pub fn c(&self) -> f64 {
        self.c.unwrap_or_else(|| self.scenario.default_c())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::Config(param(name, reason).to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if !(1..=2).contains(&self.grid.dim) {
            return bad("grid.dim", format!("must be 1 or 2, got {}", self.grid.dim));
        }
        if self.grid.nx < 3 {
            return bad("grid.nx", format!("must be at least 3, got {}", self.grid.nx));
        }
        if self.grid.nt.is_some_and(|nt| nt < 3) {
            return bad("grid.nt", "must be at least 3".into());
        }
        if !(self.schedule.eps0 > 0.0 && self.schedule.eps_min > 0.0 && self.schedule.eps_min <= self.schedule.eps0) {
            return bad("schedule.eps_min", "need 0 < eps_min <= eps0".into());
        }
        let a = &self.analysis;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return bad("analysis.alpha", format!("must lie in (0, 1), got {}", a.alpha));
        }
        if !(a.gamma > 0.0 && a.gamma < 1.0 - a.alpha) {
            return bad("analysis.gamma", format!("must lie in (0, 1 - alpha), got {}", a.gamma));
        }
        if !(a.m > 1.0) {
            return bad("analysis.m", format!("must exceed 1, got {}", a.m));
        }
        if a.weiss_anchor.as_ref().is_some_and(|v| v.len() != self.grid.dim + 1) {
            return bad("analysis.weiss_anchor", format!("needs {} entries (x..., t)", self.grid.dim + 1));
        }
        if a.rhos.windows(2).any(|w| !(w[1] < w[0])) || a.rhos.iter().any(|r| !(*r > 0.0)) {
            return bad("analysis.rhos", "must be positive and strictly decreasing".into());
        }
        if a.series_order < 4 {
            return bad("analysis.series_order", "must be at least 4".into());
        }
        if self.scenario == ScenarioLabel::Custom && self.custom.is_none() {
            return bad("custom", "the custom scenario needs a [custom] table with a0, a1, a2".into());
        }
        if self.scenario != ScenarioLabel::Custom && self.custom.is_some() {
            return bad("custom", "only the custom scenario takes polynomial data".into());
        }
        if let Some(c) = self.c {
            if !(c >= 0.0 && c.is_finite()) {
                return bad("c", format!("must be finite and >= 0, got {c}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\nscenario = \"time_only\"\n").unwrap();
        assert_eq!(cfg.grid.nx, 401);
        assert_eq!(cfg.stages(), vec![Stage::Solve, Stage::Boundary]);
        assert_eq!(cfg.schedule.schedule(), RegularizationSchedule::default());
        assert_eq!(cfg.c(), 0.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::for_scenario(ScenarioLabel::CollapsingInterval);
        cfg.stages = Some(vec![Stage::Weiss, Stage::Solve]);
        cfg.analysis.weiss_variant = WeissVariant::PaperDefinition;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.stages(), vec![Stage::Solve, Stage::Weiss]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = "schema_version = 1\nscenario = \"time_only\"\n[tolerances]\nresidaul = 1e-8\n";
        let err = RunConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("residaul") && err.contains("line 4"), "{err}");
        let err = RunConfig::from_toml("schema_version = 1\nscenario = \"nope\"\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn semantic_checks() {
        assert!(RunConfig::from_toml("schema_version = 2\nscenario = \"time_only\"\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nscenario = \"custom\"\n").is_err());
        let ok = "schema_version = 1\nscenario = \"custom\"\nc = 1.0\n[custom]\na0 = -1.0\na1 = 1.0\na2 = 2.0\n";
        assert!(RunConfig::from_toml(ok).is_ok());
        assert!(RunConfig::from_toml("schema_version = 1\nscenario = \"time_only\"\n[analysis]\ngamma = 0.6\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\nscenario = \"time_only\"\nstages = [\"solve\", \"plot\"]\n").is_err());
    }

    #[test]
    fn stage_lists() {
        assert_eq!(parse_stage_list("solve, weiss,blowup").unwrap(), vec![Stage::Solve, Stage::Weiss, Stage::Blowup]);
        assert!(parse_stage_list("solve,nope").is_err());
        assert_eq!(Stage::Hodograph.upstream(), Some(Stage::Boundary));
    }
}
