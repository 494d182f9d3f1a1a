//! Staged runs (solve → boundary → hodograph → weiss → blow-up, plus the
//! self-similar series) with a JSON manifest and persisted artifacts.

pub mod config;

pub use config::{parse_stage_list, AnalysisConfig, GridConfig, RunConfig, ScheduleConfig, Stage, Tolerances, SCHEMA_VERSION};

use crate::blowup::{collapse_report, envelope_check, locate_collapse, ut_blowup_trend, TrendVerdict};
use crate::boundary::{extract_graph, lipschitz_report, normal_field, normal_holder_report, write_boundary_csv, FreeBoundaryGraph, PinchingStatus};
use crate::error::{Error, Result};
use crate::grid::{io, Grid, LocalDerivatives, Point, SpaceTimeField};
use crate::hodograph::{hodograph_study, select_rescale_point};
use crate::series::{certify_negative_coefficients, negativity_finder, ode_integrate, series_coefficients, series_ode_gap, NegativityVerdict, MAX_STEP, SQRT_2};
use crate::solver::{check_time_monotonicity_positive, elliptic_cross_field, levels_for, residual_stats, single_phase_stencil, sweep, Retention, ScenarioLabel, ScenarioSpec};
use crate::weiss::{growth_series, homogeneity_defect, weiss_curve, Anchor};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

pub const CODE_VERSION: &str = concat!("fblab-core ", env!("CARGO_PKG_VERSION"));
pub const FIELD_FILE: &str = "u.fbf";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "FBLAB_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pass,
    Fail,
    /// The stage could not produce its report (numeric or precondition error).
    Error,
    /// Not run because its upstream stage did not pass or left no artifact.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub reason: Option<String>,
    pub warnings: Vec<String>,
    pub report: Value,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub schema_version: u32,
    pub scenario: ScenarioLabel,
    pub config: RunConfig,
    pub grid: Option<Grid>,
    pub eps_values: Vec<f64>,
    pub stages: Vec<StageRecord>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub pass: bool,
    /// Wall-clock seconds per stage; the only non-deterministic section.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    /// 0 when every requested stage passed, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            3
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is serializable")
    }

    /// The manifest with the timing section removed, for determinism checks.
    pub fn without_timings(&self) -> String {
        let mut m = self.clone();
        m.timings.clear();
        m.to_json()
    }

    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }
}

struct StageOutput {
    pass: bool,
    report: Value,
    artifacts: Vec<String>,
    warnings: Vec<String>,
}

impl StageOutput {
    fn new(pass: bool, report: Value) -> Self {
        StageOutput { pass, report, artifacts: Vec::new(), warnings: Vec::new() }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report is serializable")
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: e }
}

fn write_artifact(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<String> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
    Ok(name.to_string())
}

/// Grid of a scenario with config overrides; `nt` defaults to the level
/// count that keeps `ht ≤ eps_min / 2.5`.
pub fn scenario_grid(cfg: &RunConfig, nx: usize) -> Result<Grid> {
    let (lo, hi, t0, t1) = cfg.scenario.default_extent();
    let g = &cfg.grid;
    let (lo, hi, t0, t1) = (g.lo.unwrap_or(lo), g.hi.unwrap_or(hi), g.t0.unwrap_or(t0), g.t1.unwrap_or(t1));
    let nt = g.nt.unwrap_or_else(|| levels_for(t1 - t0, cfg.schedule.schedule().eps_min()));
    Grid::new(g.dim, lo, hi, nx, t0, t1, nt)
}

pub fn scenario_spec(cfg: &RunConfig, nx: usize) -> Result<ScenarioSpec> {
    let grid = scenario_grid(cfg, nx)?;
    match cfg.scenario {
        ScenarioLabel::Custom => ScenarioSpec::custom(grid, cfg.c(), cfg.custom.expect("validated")),
        label => ScenarioSpec::builtin_on(label, grid),
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    field: Option<SpaceTimeField>,
    graph: Option<FreeBoundaryGraph>,
    eps_values: Vec<f64>,
}

impl Run<'_> {
    fn field(&mut self) -> Result<&SpaceTimeField> {
        if self.field.is_none() {
            let path = self.dir.join(FIELD_FILE);
            if !path.exists() {
                return Err(Error::Precondition(format!("no solved field; run the solve stage or provide {}", path.display())));
            }
            self.field = Some(io::read_binary(&path)?);
        }
        Ok(self.field.as_ref().expect("just loaded"))
    }

    fn graph(&mut self) -> Result<&FreeBoundaryGraph> {
        if self.graph.is_none() {
            let c = self.cfg.c();
            let g = extract_graph(self.field()?, c)?;
            self.graph = Some(g);
        }
        Ok(self.graph.as_ref().expect("just built"))
    }

    fn solve(&mut self) -> Result<StageOutput> {
        let cfg = self.cfg;
        let tol = &cfg.tolerances;
        let (u, report, mut warnings) = match cfg.scenario {
            ScenarioLabel::SelfSimilar1d => {
                return Err(Error::Scenario("self_similar_1d has no grid solve; use the series stage".into()));
            }
            ScenarioLabel::EllipticCross => {
                let grid = scenario_grid(cfg, cfg.grid.nx)?;
                let u = elliptic_cross_field(grid)?;
                let zero_nodes = u.level(0).iter().filter(|v| v.abs() <= tol.residual).count();
                let g0 = u.grad_at(0, grid.nearest_node(&[0.0, 0.0]));
                let report = json!({ "frozen": true, "zero_set_nodes": zero_nodes, "gradient_at_origin": [g0[0], g0[1]] });
                (u, report, Vec::new())
            }
            _ => {
                let spec = scenario_spec(cfg, cfg.grid.nx)?;
                let sched = cfg.schedule.schedule();
                let res = sweep(&spec, &sched, Retention::Final)?;
                self.eps_values = res.eps_used.clone();
                let u = res.u;
                let threshold = sched.eps_min();
                let residual = residual_stats(&u, threshold, |n, s| single_phase_stencil(&u, n, s));
                let tail = res.records.iter().filter_map(|r| r.sup_diff_prev).collect::<Vec<_>>();
                let min_gap = res.records.iter().filter_map(|r| r.min_gap_prev).fold(f64::INFINITY, f64::min);
                let slope = (cfg.c() > 0.0).then(|| check_time_monotonicity_positive(&u, cfg.c(), tol.time_slope));
                let mut warnings = Vec::new();
                if !res.converged {
                    warnings.push(format!(
                        "successive solutions still differ by {:.3e} > stop_tol {:e} at the end of the schedule",
                        tail.last().copied().unwrap_or(f64::NAN),
                        sched.stop_tol
                    ));
                }
                let pass = residual.consistency_constant <= tol.residual_constant && slope.is_none_or(|s| s.pass);
                let report = json!({
                    "records": to_value(&res.records),
                    "tail_sup_differences": tail,
                    "min_eps_gap": if min_gap.is_finite() { json!(min_gap) } else { Value::Null },
                    "converged": res.converged,
                    "residual": to_value(&residual),
                    "time_slope": slope.map(|s| to_value(&s)),
                    "pass": pass,
                });
                (u, report, warnings)
            }
        };
        let pass = report.get("pass").and_then(Value::as_bool).unwrap_or(true);
        io::write_binary(&u, &self.dir.join(FIELD_FILE))?;
        self.field = Some(u);
        self.graph = None;
        let mut out = StageOutput::new(pass, report);
        out.artifacts.push(FIELD_FILE.to_string());
        out.warnings.append(&mut warnings);
        Ok(out)
    }

    fn boundary(&mut self) -> Result<StageOutput> {
        let c = self.cfg.c();
        let alpha = self.cfg.analysis.alpha;
        let dir = self.dir;
        self.field()?;
        self.graph()?;
        let u = self.field.as_ref().expect("loaded");
        let g = self.graph.as_ref().expect("built");
        let lip = lipschitz_report(g, u, c, None)?;
        let nf = normal_field(g, u);
        let normals = normal_holder_report(&nf, alpha, c);
        let mut warnings = Vec::new();
        let cone_pass = match &normals {
            Ok(r) => r.cone_pass,
            Err(e) => {
                warnings.push(format!("normal diagnostics skipped: {e}"));
                true
            }
        };
        let pass = lip.pass && cone_pass;
        let report = json!({
            "valid_samples": g.len_valid(),
            "samples": g.valid.len(),
            "lipschitz": to_value(&lip),
            "normals": normals.as_ref().ok().map(to_value),
        });
        let mut out = StageOutput::new(pass, report);
        out.artifacts.push(write_artifact(dir, "boundary.csv", |w| write_boundary_csv(g, &nf, w))?);
        out.warnings = warnings;
        Ok(out)
    }

    fn hodograph(&mut self) -> Result<StageOutput> {
        let a = &self.cfg.analysis;
        let dir = self.dir;
        self.field()?;
        self.graph()?;
        let u = self.field.as_ref().expect("loaded");
        let g = self.graph.as_ref().expect("built");
        let points: Vec<(Point, f64)> = g.valid_nodes().map(|s| (g.x(s), g.h[s])).collect();
        let params = select_rescale_point(u, &points, a.m, a.alpha, a.gamma)
            .ok_or_else(|| Error::Precondition("no noncritical free-boundary point whose rescaling cylinder fits in the grid".into()))?;
        let (study, cm) = hodograph_study(u, &params, a.hodograph_delta)?;
        let mut out = StageOutput::new(study.pass, to_value(&study));
        out.artifacts.push(write_artifact(dir, "coefficient_matrix.csv", |w| cm.write_csv(w))?);
        Ok(out)
    }

    fn anchor(&mut self) -> Result<Anchor> {
        if let Some(v) = &self.cfg.analysis.weiss_anchor {
            let dim = self.cfg.grid.dim;
            let mut x = [0.0; 2];
            x[..dim].copy_from_slice(&v[..dim]);
            return Ok(Anchor { x, t: v[dim] });
        }
        let loc = locate_collapse(self.field()?)?;
        Ok(Anchor { x: loc.x_star, t: loc.t_star })
    }

    fn weiss(&mut self) -> Result<StageOutput> {
        let a = self.cfg.analysis.clone();
        let tol = self.cfg.tolerances.weiss_slope;
        let anchor = self.anchor()?;
        let u = self.field()?;
        let curve = weiss_curve(u, &anchor, &a.weiss_rs, a.weiss_variant)?;
        let mut warnings = Vec::new();
        let growth = growth_series(u, &anchor, &a.weiss_rs);
        if let Err(e) = &growth {
            warnings.push(format!("growth series skipped: {e}"));
        }
        let r_min = a.weiss_rs.iter().cloned().fold(f64::INFINITY, f64::min);
        let defect = homogeneity_defect(u, &anchor, r_min, None);
        if let Err(e) = &defect {
            warnings.push(format!("homogeneity defect skipped: {e}"));
        }
        let min_slope = curve.min_slope();
        let report = json!({
            "anchor": to_value(&anchor),
            "curve": to_value(&curve),
            "min_slope": min_slope,
            "growth": growth.as_ref().ok().map(to_value),
            "homogeneity_defect": defect.as_ref().ok(),
        });
        let mut out = StageOutput::new(min_slope >= -tol, report);
        out.artifacts.push(write_artifact(self.dir, "weiss.csv", |w| curve.write_csv(w))?);
        out.warnings = warnings;
        Ok(out)
    }

    fn blowup(&mut self) -> Result<StageOutput> {
        let cfg = self.cfg;
        let a = &cfg.analysis;
        let c = cfg.c();
        self.field()?;
        let u = self.field.as_ref().expect("loaded");
        let report = collapse_report(u, c, &a.rhos, a.alpha)?;
        let mut warnings = Vec::new();
        let envelope = match extract_graph(u, c).and_then(|g| envelope_check(u, &g, &report.location.x_star, 0.05, 4, a.m, a.alpha, a.gamma)) {
            Ok(e) => Some(e),
            Err(e) => {
                warnings.push(format!("envelope check skipped: {e}"));
                None
            }
        };

        // further resolutions for the trend, solved in parallel
        let own = cfg.grid.nx;
        let extra: Vec<usize> = a.trend_nx.iter().copied().filter(|&n| n != own).collect();
        let solved: Vec<(usize, Result<SpaceTimeField>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = extra
                .iter()
                .map(|&nx| {
                    scope.spawn(move || {
                        let res = scenario_spec(cfg, nx).and_then(|spec| sweep(&spec, &cfg.schedule.schedule(), Retention::Final)).map(|r| r.u);
                        (nx, res)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("trend worker panicked")).collect()
        });
        let mut fields: Vec<(usize, &SpaceTimeField)> = vec![(own, u)];
        for (nx, res) in &solved {
            match res {
                Ok(f) => fields.push((*nx, f)),
                Err(e) => return Err(Error::Precondition(format!("trend resolution nx = {nx} failed: {e}"))),
            }
        }
        fields.sort_by_key(|(nx, _)| *nx);
        let mut locations = Vec::new();
        let mut inputs = Vec::new();
        for (_, f) in &fields {
            let loc = locate_collapse(f)?;
            locations.push(loc);
            inputs.push((*f, loc.x_star, loc.t_star));
        }
        let trend = if inputs.len() >= 2 { Some(ut_blowup_trend(&inputs, &a.rhos)?) } else { None };
        let pinching_pass = report.pinching.as_ref().is_some_and(|p| p.status == PinchingStatus::Pass);
        let trend_pass = match (&trend, cfg.grid.dim) {
            // two-dimensional trends are reported without a verdict
            (_, 2) => true,
            (Some(t), _) => t.verdict == TrendVerdict::UnboundedConsistent,
            (None, _) => {
                warnings.push("a single resolution gives no trend verdict".into());
                true
            }
        };
        let pass = report.negative_set.pass() && pinching_pass && trend_pass;
        let json_report = json!({
            "collapse": to_value(&report),
            "brackets_nested": crate::blowup::brackets_nested(&locations),
            "locations": to_value(&locations),
            "trend": trend.as_ref().map(to_value),
            "envelope": envelope.as_ref().map(to_value),
        });
        let mut out = StageOutput::new(pass, json_report);
        let tables = trend.map(|t| t.tables).unwrap_or_else(|| vec![report.ut_sup_per_rho.clone()]);
        out.artifacts.push(write_artifact(self.dir, "ut_sup.csv", |w| {
            for (k, t) in tables.iter().enumerate() {
                let mut buf = Vec::new();
                t.write_csv(&mut buf)?;
                let text = String::from_utf8(buf).expect("CSV is ASCII");
                let body = if k == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, b)| b) };
                w.write_all(body.as_bytes())?;
            }
            Ok(())
        })?);
        out.warnings = warnings;
        Ok(out)
    }

    fn series(&mut self) -> Result<StageOutput> {
        let a = &self.cfg.analysis;
        let tol = self.cfg.tolerances.series_ode;
        let mut rows = Vec::new();
        let mut out = StageOutput::new(true, Value::Null);
        for &c in &a.series_c {
            let s = series_coefficients(c, a.series_order, a.series_convention)?;
            let cert = certify_negative_coefficients(c, a.series_order, a.series_convention)?;
            let neg = negativity_finder(c, a.series_x_max, a.series_convention)?;
            let ode = ode_integrate(c, SQRT_2 + 0.5, MAX_STEP, a.series_convention)?;
            let gap = series_ode_gap(&s, &ode, SQRT_2, SQRT_2 + 0.5, 101)?;
            let pass = cert.all_negative() && neg.verdict == NegativityVerdict::Confirmed && gap <= tol;
            out.pass &= pass;
            let name = format!("series_c{c}.csv");
            out.artifacts.push(write_artifact(self.dir, &name, |w| s.write_csv(w))?);
            rows.push(json!({
                "c": c,
                "a1": s.coeff(1), "a2": s.coeff(2), "a3": s.coeff(3), "a4": s.coeff(4),
                "recursion_residual": s.recursion_residual(),
                "certificate": to_value(&cert),
                "negativity": to_value(&neg),
                "series_ode_gap": gap,
                "pass": pass,
            }));
        }
        out.report = json!({ "convention": a.series_convention.as_str(), "order": a.series_order, "profiles": rows });
        Ok(out)
    }
}

/// Runs the configured stages in dependency order and writes the manifest
/// into `out_dir`. A stage whose upstream was requested but did not pass is
/// skipped; an upstream that was not requested is read back from disk.
pub fn run_scenario(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let stages = cfg.stages();
    let mut run = Run { cfg, dir: out_dir, field: None, graph: None, eps_values: Vec::new() };
    let mut records: Vec<StageRecord> = Vec::new();
    let mut timings = BTreeMap::new();
    for &stage in &stages {
        let blocked = stage.upstream().and_then(|up| {
            records.iter().find(|r| r.stage == up).filter(|r| r.status != StageStatus::Pass).map(|r| format!("upstream stage `{up}` ended with status {:?}", r.status))
        });
        if let Some(reason) = blocked {
            records.push(StageRecord { stage, status: StageStatus::Skipped, reason: Some(reason), warnings: Vec::new(), report: Value::Null, artifacts: Vec::new() });
            continue;
        }
        let start = Instant::now();
        let result = match stage {
            Stage::Solve => run.solve(),
            Stage::Boundary => run.boundary(),
            Stage::Hodograph => run.hodograph(),
            Stage::Weiss => run.weiss(),
            Stage::Blowup => run.blowup(),
            Stage::Series => run.series(),
        };
        timings.insert(stage.as_str().to_string(), start.elapsed().as_secs_f64());
        let record = match result {
            Ok(o) => StageRecord {
                stage,
                status: if o.pass { StageStatus::Pass } else { StageStatus::Fail },
                reason: None,
                warnings: o.warnings,
                report: o.report,
                artifacts: o.artifacts,
            },
            Err(e @ (Error::Io { .. } | Error::Config(_))) => return Err(e),
            Err(e) => StageRecord { stage, status: StageStatus::Error, reason: Some(e.to_string()), warnings: Vec::new(), report: Value::Null, artifacts: Vec::new() },
        };
        records.push(record);
    }
    let mut artifacts: Vec<String> = records.iter().flat_map(|r| r.artifacts.iter().cloned()).collect();
    artifacts.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        code_version: CODE_VERSION.to_string(),
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario,
        config: cfg.clone(),
        grid: run.field.as_ref().map(|u| *u.grid()),
        eps_values: run.eps_values,
        pass: records.iter().all(|r| r.status == StageStatus::Pass),
        stages: records,
        artifacts,
        timings,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(label: ScenarioLabel) -> RunConfig {
        let mut cfg = RunConfig::for_scenario(label);
        cfg.grid.nx = 41;
        cfg.schedule.eps_min = 0.1 / 16.0;
        cfg
    }

    #[test]
    fn time_only_run_passes_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(ScenarioLabel::TimeOnly);
        let m1 = run_scenario(&cfg, dir.path()).unwrap();
        assert!(m1.pass, "{}", m1.to_json());
        assert_eq!(m1.exit_code(), 0);
        assert!(dir.path().join(FIELD_FILE).exists() && dir.path().join("boundary.csv").exists());
        let m2 = run_scenario(&cfg, dir.path()).unwrap();
        assert_eq!(m1.without_timings(), m2.without_timings());
        let on_disk: RunManifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk.stages, m2.stages);
    }

    #[test]
    fn stages_rerun_from_persisted_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ScenarioLabel::TimeOnly);
        cfg.stages = Some(vec![Stage::Boundary]);
        let m = run_scenario(&cfg, dir.path()).unwrap();
        assert_eq!(m.stages[0].status, StageStatus::Error);
        assert_eq!(m.exit_code(), 3);
        cfg.stages = Some(vec![Stage::Solve]);
        run_scenario(&cfg, dir.path()).unwrap();
        cfg.stages = Some(vec![Stage::Boundary]);
        let m = run_scenario(&cfg, dir.path()).unwrap();
        assert_eq!(m.stages[0].status, StageStatus::Pass, "{}", m.to_json());
    }

    #[test]
    fn failed_upstream_skips_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ScenarioLabel::SelfSimilar1d);
        cfg.stages = Some(vec![Stage::Solve, Stage::Boundary, Stage::Hodograph, Stage::Series]);
        cfg.analysis.series_c = vec![1.0];
        let m = run_scenario(&cfg, dir.path()).unwrap();
        let status: Vec<StageStatus> = m.stages.iter().map(|r| r.status).collect();
        assert_eq!(status, vec![StageStatus::Error, StageStatus::Skipped, StageStatus::Skipped, StageStatus::Pass]);
        assert!(!m.pass);
    }

    #[test]
    fn series_stage_writes_coefficients() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(ScenarioLabel::SelfSimilar1d);
        let m = run_scenario(&cfg, dir.path()).unwrap();
        assert!(m.pass, "{}", m.to_json());
        let text = std::fs::read_to_string(dir.path().join("series_c1.csv")).unwrap();
        assert_eq!(text.lines().count(), 202);
    }

    #[test]
    fn elliptic_cross_is_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ScenarioLabel::EllipticCross);
        cfg.grid.dim = 2;
        cfg.grid.nt = Some(3);
        let m = run_scenario(&cfg, dir.path()).unwrap();
        assert!(m.pass, "{}", m.to_json());
        assert_eq!(m.stages[0].report["frozen"], json!(true));
    }
}
