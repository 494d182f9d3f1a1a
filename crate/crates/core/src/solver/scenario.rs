use crate::error::{Error, Result};
use crate::grid::{Grid, Point, SpaceTimeField};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Named scenarios; every label except `Custom` has fixed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioLabel {
    /// `u = max{t, 0}`.
    TimeOnly,
    /// Zero data on `[-1, 1]^n × (0, 1)`.
    LocalCap,
    /// Self-similar profile; handled by [`crate::series`], never solved on a grid.
    SelfSimilar1d,
    /// Frozen time-independent field with a cross-shaped zero set.
    EllipticCross,
    /// Initial data `2|x|² - 1`, lateral data growing at unit rate.
    CollapsingInterval,
    Custom,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 6] = [
        ScenarioLabel::TimeOnly,
        ScenarioLabel::LocalCap,
        ScenarioLabel::SelfSimilar1d,
        ScenarioLabel::EllipticCross,
        ScenarioLabel::CollapsingInterval,
        ScenarioLabel::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioLabel::TimeOnly => "time_only",
            ScenarioLabel::LocalCap => "local_cap",
            ScenarioLabel::SelfSimilar1d => "self_similar_1d",
            ScenarioLabel::EllipticCross => "elliptic_cross",
            ScenarioLabel::CollapsingInterval => "collapsing_interval",
            ScenarioLabel::Custom => "custom",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioLabel::TimeOnly => "u = max{t,0} on [-1,1]^n x [-0.25,0.5]; nonuniqueness by time translation",
            ScenarioLabel::LocalCap => "zero data on [-1,1]^n x [0,1]; least solution 0, forced solution positive",
            ScenarioLabel::SelfSimilar1d => "1D self-similar profile via series and ODE (no grid solve)",
            ScenarioLabel::EllipticCross => "frozen 2D field x1^2 - x2^2 with a cross-shaped zero set",
            ScenarioLabel::CollapsingInterval => "initial 2|x|^2 - 1, lateral data growing at unit rate; negative set collapses",
            ScenarioLabel::Custom => "polynomial data a0 + a1 t + a2 |x|^2 from a config file",
        }
    }

    /// Default `(t0, t1)` and spatial box `[lo, hi]`.
    pub fn default_extent(self) -> (f64, f64, f64, f64) {
        match self {
            ScenarioLabel::TimeOnly => (-1.0, 1.0, -0.25, 0.5),
            ScenarioLabel::LocalCap => (-1.0, 1.0, 0.0, 1.0),
            ScenarioLabel::CollapsingInterval => (-1.0, 1.0, 0.0, 0.4),
            _ => (-1.0, 1.0, 0.0, 1.0),
        }
    }

    /// Default monotonicity constant.
    pub fn default_c(self) -> f64 {
        match self {
            ScenarioLabel::CollapsingInterval => 1.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Scenario(format!("unknown scenario `{s}`")))
    }
}

/// Polynomial data `a0 + a1 t + a2 |x|²` used by custom scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialData {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl PolynomialData {
    pub fn eval(&self, x: &Point, dim: usize, t: f64) -> f64 {
        let r2: f64 = x[..dim].iter().map(|v| v * v).sum();
        self.a0 + self.a1 * t + self.a2 * r2
    }
}

/// Initial and lateral data for the regularized solver.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub label: ScenarioLabel,
    grid: Grid,
    c: f64,
    initial: Vec<f64>,
    boundary: Vec<usize>,
    /// Lateral values, level-major: `lateral[n * boundary.len() + k]`.
    lateral: Vec<f64>,
}

const DATA_TOL: f64 = 1e-12;

impl ScenarioSpec {
    /// Builds a spec from explicit samples and validates corner agreement and
    /// the discrete lateral slope `ψ_t ≥ c`.
    pub fn new(label: ScenarioLabel, grid: Grid, c: f64, initial: Vec<f64>, lateral: Vec<f64>) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(crate::error::param("c", format!("must be finite and >= 0, got {c}")));
        }
        let boundary = grid.boundary_nodes();
        let nb = boundary.len();
        if initial.len() != grid.n_space() || lateral.len() != nb * grid.nt() {
            return Err(Error::Scenario(format!(
                "data sizes {} / {} do not match grid ({} spatial nodes, {} boundary nodes x {} levels)",
                initial.len(),
                lateral.len(),
                grid.n_space(),
                nb,
                grid.nt()
            )));
        }
        if initial.iter().chain(&lateral).any(|v| !v.is_finite()) {
            return Err(Error::Scenario("non-finite boundary or initial data".into()));
        }
        for (k, &s) in boundary.iter().enumerate() {
            if (initial[s] - lateral[k]).abs() > DATA_TOL * (1.0 + initial[s].abs()) {
                return Err(Error::Scenario(format!(
                    "initial and lateral data disagree at boundary node {s}: {} vs {}",
                    initial[s], lateral[k]
                )));
            }
        }
        if c > 0.0 {
            let ht = grid.ht();
            for n in 1..grid.nt() {
                for k in 0..nb {
                    let slope = (lateral[n * nb + k] - lateral[(n - 1) * nb + k]) / ht;
                    if slope < c - 1e-9 {
                        return Err(Error::Scenario(format!(
                            "lateral data grows at rate {slope} < c = {c} at boundary node {} between levels {} and {n}",
                            boundary[k],
                            n - 1
                        )));
                    }
                }
            }
        }
        Ok(ScenarioSpec { label, grid, c, initial, boundary, lateral })
    }

    /// Samples `psi` for the initial level and on the lateral boundary.
    pub fn from_fn(label: ScenarioLabel, grid: Grid, c: f64, psi: impl Fn(&Point, f64) -> f64) -> Result<Self> {
        let initial = (0..grid.n_space()).map(|s| psi(&grid.coords(s), grid.t(0))).collect();
        let boundary = grid.boundary_nodes();
        let mut lateral = Vec::with_capacity(boundary.len() * grid.nt());
        for n in 0..grid.nt() {
            let t = grid.t(n);
            lateral.extend(boundary.iter().map(|&s| psi(&grid.coords(s), t)));
        }
        Self::new(label, grid, c, initial, lateral)
    }

    /// One of the fixed scenarios on a caller-chosen resolution.
    pub fn builtin(label: ScenarioLabel, dim: usize, nx: usize, nt: usize) -> Result<Self> {
        let (lo, hi, t0, t1) = label.default_extent();
        let grid = Grid::new(dim, lo, hi, nx, t0, t1, nt)?;
        Self::builtin_on(label, grid)
    }

    pub fn builtin_on(label: ScenarioLabel, grid: Grid) -> Result<Self> {
        let dim = grid.dim();
        let c = label.default_c();
        match label {
            ScenarioLabel::TimeOnly => Self::from_fn(label, grid, c, |_, t| t.max(0.0)),
            ScenarioLabel::LocalCap => Self::from_fn(label, grid, c, |_, _| 0.0),
            ScenarioLabel::CollapsingInterval => Self::from_fn(label, grid, c, |x, t| {
                let r2: f64 = x[..dim].iter().map(|v| v * v).sum();
                2.0 * r2 - 1.0 + t
            }),
            ScenarioLabel::SelfSimilar1d => Err(Error::Scenario(
                "self_similar_1d is represented by the series/ODE profile, not by a grid solve".into(),
            )),
            ScenarioLabel::EllipticCross => Err(Error::Scenario(
                "elliptic_cross is a frozen input field (see `elliptic_cross_field`), not solved for".into(),
            )),
            ScenarioLabel::Custom => Err(Error::Scenario("custom scenarios need explicit data".into())),
        }
    }

    /// Builtin scenario with `nt` chosen so that `ht <= eps_min / 2.5`.
    pub fn builtin_for_eps(label: ScenarioLabel, dim: usize, nx: usize, eps_min: f64) -> Result<Self> {
        let (_, _, t0, t1) = label.default_extent();
        Self::builtin(label, dim, nx, levels_for(t1 - t0, eps_min))
    }

    pub fn custom(grid: Grid, c: f64, data: PolynomialData) -> Result<Self> {
        let dim = grid.dim();
        Self::from_fn(ScenarioLabel::Custom, grid, c, move |x, t| data.eval(x, dim, t))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }
    pub fn lateral_level(&self, n: usize) -> &[f64] {
        let nb = self.boundary.len();
        &self.lateral[n * nb..(n + 1) * nb]
    }

    /// Same data shifted by a constant.
    pub fn offset(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.initial.iter_mut().for_each(|v| *v += delta);
        out.lateral.iter_mut().for_each(|v| *v += delta);
        out
    }
}

/// Number of time levels on an interval of length `span` so that `ht <= eps_min / 2.5`.
pub fn levels_for(span: f64, eps_min: f64) -> usize {
    ((span * 2.5 / eps_min).ceil() as usize).max(2) + 1
}

/// Frozen field `x1² - x2²`, constant in time: the leading-order profile of a
/// solution whose zero set is a cross through the origin.
pub fn elliptic_cross_field(grid: Grid) -> Result<SpaceTimeField> {
    if grid.dim() != 2 {
        return Err(Error::Scenario("elliptic_cross needs a 2D grid".into()));
    }
    SpaceTimeField::from_fn(grid, |x, _| x[0] * x[0] - x[1] * x[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for l in ScenarioLabel::ALL {
            assert_eq!(l.as_str().parse::<ScenarioLabel>().unwrap(), l);
        }
        assert!("nope".parse::<ScenarioLabel>().is_err());
    }

    #[test]
    fn collapsing_data_is_consistent() {
        let s = ScenarioSpec::builtin(ScenarioLabel::CollapsingInterval, 1, 21, 41).unwrap();
        assert_eq!(s.c(), 1.0);
        assert_eq!(s.initial()[10], -1.0);
        assert_eq!(s.lateral_level(0), &[1.0, 1.0]);
        assert!((s.lateral_level(40)[0] - 1.4).abs() < 1e-15);
        let s2 = ScenarioSpec::builtin(ScenarioLabel::CollapsingInterval, 2, 9, 5).unwrap();
        // box corners carry 2·2 - 1 = 3
        assert_eq!(s2.initial()[0], 3.0);
    }

    #[test]
    fn mismatched_corners_are_rejected() {
        let g = Grid::new(1, -1.0, 1.0, 5, 0.0, 1.0, 5).unwrap();
        let mut lateral = vec![0.0; 10];
        lateral[0] = 1.0;
        assert!(ScenarioSpec::new(ScenarioLabel::Custom, g, 0.0, vec![0.0; 5], lateral).is_err());
    }

    #[test]
    fn slow_lateral_growth_is_rejected_when_c_positive() {
        let g = Grid::new(1, -1.0, 1.0, 5, 0.0, 1.0, 5).unwrap();
        let data = PolynomialData { a0: 0.0, a1: 0.5, a2: 0.0 };
        assert!(ScenarioSpec::custom(g, 1.0, data).is_err());
        assert!(ScenarioSpec::custom(g, 0.5, data).is_ok());
    }

    #[test]
    fn unsolvable_labels_explain_themselves() {
        assert!(ScenarioSpec::builtin(ScenarioLabel::SelfSimilar1d, 1, 5, 5).is_err());
        assert!(ScenarioSpec::builtin(ScenarioLabel::EllipticCross, 2, 5, 5).is_err());
        let g = Grid::new(2, -1.0, 1.0, 5, 0.0, 1.0, 3).unwrap();
        let f = elliptic_cross_field(g).unwrap();
        assert_eq!(f.get(2, 0), 0.0);
    }

    #[test]
    fn levels_meet_the_step_bound() {
        let nt = levels_for(0.4, 0.1 / 4096.0);
        let ht = 0.4 / (nt - 1) as f64;
        assert!(ht <= 0.1 / 4096.0 / 2.5 * (1.0 + 1e-12));
    }
}
