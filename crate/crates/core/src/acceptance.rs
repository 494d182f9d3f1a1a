//! The ten acceptance criteria, each returning a pass/fail line with the
//! measured numbers. Solutions shared by several criteria are computed once.

use crate::blowup::{locate_collapse, ut_blowup_trend, CollapseLocation, TrendVerdict};
use crate::boundary::{extract_graph, lipschitz_report, pinching_check, PinchingStatus};
use crate::error::{Error, Result};
use crate::grid::{Grid, Point, SpaceTimeField};
use crate::hodograph::{derivative_identities, hodograph_study, hodograph_transform, select_rescale_point};
use crate::series::{certify_negative_coefficients, negativity_finder, ode_integrate, series_coefficients, series_ode_gap, NegativityVerdict, SlopeConvention, MAX_STEP, SQRT_2};
use crate::solver::{check_time_monotonicity_positive, residual_stats, single_phase_stencil, sweep, EpsRecord, RegularizationSchedule, Retention, ScenarioLabel, ScenarioSpec};
use crate::weiss::{weiss_curve, weiss_derivative_check, weiss_energy, Anchor, WeissVariant};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Wall-clock seconds, including shared solves triggered by this criterion.
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.2} s, budget {:.0} s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds,
            self.budget_seconds
        )
    }
}

pub const SERIES_CS: [f64; 3] = [0.1, 1.0, 10.0];
pub const TREND_NX: [usize; 3] = [201, 401, 801];
pub const TREND_RHOS: [f64; 5] = [0.4, 0.2, 0.1, 0.05, 0.025];
pub const WEISS_RS: [f64; 7] = [0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.02];

/// ε-sweep summary; the fields themselves are dropped once no criterion needs them.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub records: Vec<EpsRecord>,
    pub converged: bool,
}

impl SweepSummary {
    fn tail(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.sup_diff_prev).collect()
    }
    fn min_gap(&self) -> f64 {
        self.records.iter().filter_map(|r| r.min_gap_prev).fold(f64::INFINITY, f64::min)
    }
}

/// Collapsing-interval least solutions on the trend resolutions.
pub struct CollapsingRuns {
    pub fields: Vec<SpaceTimeField>,
    pub locations: Vec<CollapseLocation>,
    /// Sweep of the nx = 401 run.
    pub sweep_401: SweepSummary,
}

impl CollapsingRuns {
    pub fn at(&self, nx: usize) -> (&SpaceTimeField, &CollapseLocation) {
        let k = TREND_NX.iter().position(|&n| n == nx).expect("resolution is part of the trend set");
        (&self.fields[k], &self.locations[k])
    }
}

fn solve_collapsing() -> Result<CollapsingRuns> {
    let sched = RegularizationSchedule::default();
    let results: Vec<Result<(SpaceTimeField, SweepSummary)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = TREND_NX
            .iter()
            .map(|&nx| {
                let sched = &sched;
                scope.spawn(move || {
                    let spec = ScenarioSpec::builtin_for_eps(ScenarioLabel::CollapsingInterval, 1, nx, sched.eps_min())?;
                    let res = sweep(&spec, sched, Retention::Final)?;
                    Ok((res.u, SweepSummary { records: res.records, converged: res.converged }))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let mut fields = Vec::new();
    let mut locations = Vec::new();
    let mut sweep_401 = None;
    for (nx, r) in TREND_NX.iter().zip(results) {
        let (u, summary) = r?;
        locations.push(locate_collapse(&u)?);
        fields.push(u);
        if *nx == 401 {
            sweep_401 = Some(summary);
        }
    }
    Ok(CollapsingRuns { fields, locations, sweep_401: sweep_401.expect("401 is in the trend set") })
}

static COLLAPSING: OnceLock<std::result::Result<CollapsingRuns, String>> = OnceLock::new();
static LOCAL_CAP: OnceLock<std::result::Result<SweepSummary, String>> = OnceLock::new();

/// The shared collapsing-interval solutions (computed on first use).
pub fn collapsing_runs() -> std::result::Result<&'static CollapsingRuns, String> {
    COLLAPSING.get_or_init(|| solve_collapsing().map_err(|e| e.to_string())).as_ref().map_err(Clone::clone)
}

fn local_cap_sweep() -> std::result::Result<&'static SweepSummary, String> {
    LOCAL_CAP
        .get_or_init(|| {
            let sched = RegularizationSchedule::default();
            ScenarioSpec::builtin_for_eps(ScenarioLabel::LocalCap, 1, 401, sched.eps_min())
                .and_then(|spec| sweep(&spec, &sched, Retention::Final))
                .map(|r| SweepSummary { records: r.records, converged: r.converged })
                .map_err(|e| e.to_string())
        })
        .as_ref()
        .map_err(Clone::clone)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, name: &str, budget_seconds: f64, f: impl FnOnce() -> Result<Outcome>) -> CriterionResult {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult { id, name: name.to_string(), pass, detail, seconds: start.elapsed().as_secs_f64(), budget_seconds }
}

fn shared<T>(r: std::result::Result<T, String>) -> Result<T> {
    r.map_err(|e| Error::Precondition(format!("shared solve failed: {e}")))
}

/// a_3 = −√2/12, a_4 = −1/48 and a_2 = (√2/4)c − 1/2.
pub fn series_anchors() -> CriterionResult {
    run(1, "series anchors", 1.0, || {
        let mut worst: f64 = 0.0;
        let mut a2_ulps: f64 = 0.0;
        for c in SERIES_CS {
            let s = series_coefficients(c, 200, SlopeConvention::Literal)?;
            worst = worst.max((s.coeff(3) + SQRT_2 / 12.0).abs()).max((s.coeff(4) + 1.0 / 48.0).abs());
            let a2 = SQRT_2 / 4.0 * c - 0.5;
            a2_ulps = a2_ulps.max((s.coeff(2) - a2).abs() / (f64::EPSILON * a2.abs()));
        }
        Ok(Outcome {
            pass: worst <= 1e-12 && a2_ulps <= 2.0,
            detail: format!("max |a3, a4 error| = {worst:.2e} (tol 1e-12), a2 within {a2_ulps:.1} ulp of (√2/4)c − 1/2"),
        })
    })
}

/// a_n < 0 for 3 ≤ n ≤ 200, in double-double and by the exact certificate.
pub fn sign_propagation() -> CriterionResult {
    run(2, "sign propagation", 1.0, || {
        let mut pass = true;
        let mut notes = Vec::new();
        for c in SERIES_CS {
            let s = series_coefficients(c, 200, SlopeConvention::Literal)?;
            let dd_negative = (3..=200).all(|n| s.coeff_dd(n) < 0.0);
            let cert = certify_negative_coefficients(c, 200, SlopeConvention::Literal)?;
            pass &= dd_negative && cert.all_negative();
            notes.push(format!("c={c}: double-double {}, exact {}", if dd_negative { "neg" } else { "NOT neg" }, if cert.all_negative() { "neg" } else { "NOT neg" }));
        }
        Ok(Outcome { pass, detail: notes.join("; ") })
    })
}

/// Outer profile turns negative before 20; series and ODE agree near √2.
pub fn eventual_negativity() -> CriterionResult {
    run(3, "eventual negativity", 5.0, || {
        let mut pass = true;
        let mut notes = Vec::new();
        for c in SERIES_CS {
            let rep = negativity_finder(c, 20.0, SlopeConvention::Literal)?;
            let s = series_coefficients(c, 200, SlopeConvention::Literal)?;
            let ode = ode_integrate(c, SQRT_2 + 0.5, MAX_STEP, SlopeConvention::Literal)?;
            let gap = series_ode_gap(&s, &ode, SQRT_2, SQRT_2 + 0.5, 201)?;
            let ok = rep.verdict == NegativityVerdict::Confirmed && rep.stays_negative && rep.x_zero.is_some_and(|x| x < 20.0) && gap < 1e-6;
            pass &= ok;
            notes.push(format!("c={c}: x_zero={:.6}, gap={gap:.1e}", rep.x_zero.unwrap_or(f64::NAN)));
        }
        Ok(Outcome { pass, detail: notes.join("; ") })
    })
}

/// `max{t,0}` and `t − |x|` as exact fields, plus the solver on `time_only`.
pub fn exact_solution_residuals() -> CriterionResult {
    run(4, "exact-solution residuals", 10.0, || {
        // max{t, 0}: t = 0 is a grid level
        let g = Grid::new(1, -1.0, 1.0, 41, -0.25, 0.5, 31)?;
        let u = SpaceTimeField::from_fn(g, |_, t| t.max(0.0))?;
        let res_time = residual_stats(&u, 0.0, |n, s| single_phase_stencil(&u, n, s));
        let res_zero = residual_stats(&u, -1.0, |n, s| single_phase_stencil(&u, n, s) && u.get(n, s) == 0.0);
        let graph = extract_graph(&u, 0.0)?;
        let h_err_time = graph.valid_nodes().map(|s| graph.h[s].abs()).fold(0.0, f64::max);
        let lip_time = lipschitz_report(&graph, &u, 0.0, None)?;

        // t − |x| solves the equation on {u > 0} away from the kink at x = 0
        let g = Grid::new(1, -1.0, 1.0, 41, -0.5, 1.0, 61)?;
        let v = SpaceTimeField::from_fn(g, |x, t| t - x[0].abs())?;
        let margin = 2.0 * g.hx() * (1.0 + 1e-9);
        let res_kink = residual_stats(&v, 0.0, |n, s| single_phase_stencil(&v, n, s) && v.get(n, s) > 0.0 && g.x(s).abs() > margin);
        let graph = extract_graph(&v, 1.0)?;
        let h_err_kink = graph.valid_nodes().map(|s| (graph.h[s] - g.x(s).abs()).abs()).fold(0.0, f64::max);
        let lip_kink = lipschitz_report(&graph, &v, 1.0, None)?;

        // the solver on time_only, where |u| exceeds ε and the stencil is single-phase
        let mut sched = RegularizationSchedule::default();
        sched.eps_values.truncate(7);
        let spec = ScenarioSpec::builtin_for_eps(ScenarioLabel::TimeOnly, 1, 41, sched.eps_min())?;
        let solved = sweep(&spec, &sched, Retention::Final)?.u;
        let res_solved = residual_stats(&solved, sched.eps_min(), |n, s| single_phase_stencil(&solved, n, s));

        let pass = res_time.max_abs < 1e-8
            && res_zero.max_abs < 1e-8
            && res_zero.nodes > 0
            && res_kink.max_abs < 1e-8
            && res_solved.max_abs < 1e-8
            && h_err_time < 1e-12
            && h_err_kink < 1e-12
            && lip_time.pass
            && lip_kink.pass
            && (lip_kink.lip - 1.0).abs() < 1e-9;
        Ok(Outcome {
            pass,
            detail: format!(
                "max{{t,0}} residual {:.1e} ({} nodes); t-|x| residual {:.1e} ({} nodes), Lip(H) = {:.6} vs bound {:.3}; solved time_only residual {:.1e}; H errors {:.1e}/{:.1e}",
                res_time.max_abs.max(res_zero.max_abs),
                res_time.nodes + res_zero.nodes,
                res_kink.max_abs,
                res_kink.nodes,
                lip_kink.lip,
                lip_kink.bound,
                res_solved.max_abs,
                h_err_time,
                h_err_kink
            ),
        })
    })
}

fn sweep_ok(s: &SweepSummary) -> (bool, bool, String) {
    let tail = s.tail();
    let monotone = s.min_gap() >= -1e-10;
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let small = tail.last().is_some_and(|d| *d < 1e-6);
    let detail = format!(
        "min ε-gap {:.1e}, tail {}",
        if s.min_gap().is_finite() { s.min_gap() } else { 0.0 },
        tail.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(" > ")
    );
    (monotone, decreasing && small, detail)
}

/// ε-monotonicity and tail differences below 1e-6 on local_cap and
/// collapsing_interval (nx = 401, default schedule).
pub fn least_solution_convergence() -> CriterionResult {
    run(5, "eps-monotonicity and least-solution convergence", 60.0, || {
        let cap = shared(local_cap_sweep())?;
        let col = shared(collapsing_runs())?;
        let (m1, c1, d1) = sweep_ok(cap);
        let (m2, c2, d2) = sweep_ok(&col.sweep_401);
        Ok(Outcome {
            pass: m1 && c1 && m2 && c2,
            detail: format!(
                "local_cap: monotone {m1}, converged {c1} ({d1}); collapsing_interval: monotone {m2}, converged {c2} ({d2})"
            ),
        })
    })
}

/// Discrete `u_t ≥ 1` on `{u > 0}` for collapsing_interval.
pub fn time_slope_propagation() -> CriterionResult {
    run(6, "u_t >= c propagation", 60.0, || {
        let col = shared(collapsing_runs())?;
        let (u, _) = col.at(401);
        let rep = check_time_monotonicity_positive(u, 1.0, 1e-3);
        Ok(Outcome { pass: rep.pass, detail: format!("min time slope {:.9} over {} pairs (need ≥ 1 − 1e-3)", rep.min_slope, rep.pairs) })
    })
}

/// Ψ = −15/2 for `u = t`, derivative formula on `t + 0.1x`, and a
/// nondecreasing Ψ on the collapsing solution anchored at the collapse point.
pub fn weiss_anchors() -> CriterionResult {
    run(7, "Weiss anchors", 30.0, || {
        let g = Grid::new(1, -10.0, 10.0, 2001, -0.7, 0.0, 281)?;
        let u = SpaceTimeField::from_fn(g, |_, t| t)?;
        let mut const_err: f64 = 0.0;
        for variant in [WeissVariant::PaperDefinition, WeissVariant::ProofFactorTwo] {
            for r in [0.1, 0.2, 0.4] {
                const_err = const_err.max((weiss_energy(&u, &Anchor::ORIGIN, r, variant)?.psi + 7.5).abs());
            }
        }

        let g = Grid::new(1, -14.0, 14.0, 5601, -1.2, 0.0, 1201)?;
        let tilted = SpaceTimeField::from_fn(g, |x, t| t + 0.1 * x[0])?;
        let chk = weiss_derivative_check(&tilted, &Anchor::ORIGIN, 0.5, 0.01, WeissVariant::ProofFactorTwo, 1e-3)?;

        let col = shared(collapsing_runs())?;
        let (u, loc) = col.at(401);
        let anchor = Anchor { x: loc.x_star, t: loc.t_star };
        let mut min_slope = f64::INFINITY;
        for variant in [WeissVariant::PaperDefinition, WeissVariant::ProofFactorTwo] {
            min_slope = min_slope.min(weiss_curve(u, &anchor, &WEISS_RS, variant)?.min_slope());
        }
        Ok(Outcome {
            pass: const_err < 1e-3 && chk.rel_err < 0.05 && min_slope >= -1e-3,
            detail: format!(
                "|Ψ + 7.5| ≤ {const_err:.1e}; dΨ/dr fd {:.5} vs formula {:.5} (rel {:.2}%); collapsing min slope {min_slope:.3}",
                chk.dpsi_fd,
                chk.dpsi_formula,
                100.0 * chk.rel_err
            ),
        })
    })
}

/// Derivative identities on `x_n + 0.1 sin x_1` (65²) and `λ_min(A) > 0` on
/// rescaled collapsing data with M = 20.
pub fn hodograph_identities() -> CriterionResult {
    run(8, "hodograph identities", 20.0, || {
        let g = Grid::new(2, -1.0, 1.0, 65, 0.0, 1.0, 3)?;
        let u = SpaceTimeField::from_fn(g, |x, _| x[1] + 0.1 * x[0].sin())?;
        let h = hodograph_transform(&u, 0.5)?;
        let ids = derivative_identities(&u, &h)?;

        let col = shared(collapsing_runs())?;
        let (v, _) = col.at(401);
        let graph = extract_graph(v, 1.0)?;
        let points: Vec<(Point, f64)> = graph.valid_nodes().map(|s| (graph.x(s), graph.h[s])).collect();
        let params = select_rescale_point(v, &points, 20.0, 0.5, 0.25).ok_or_else(|| Error::Precondition("no admissible free-boundary point".into()))?;
        let (study, _) = hodograph_study(v, &params, 0.5)?;
        Ok(Outcome {
            pass: ids.max() < 1e-5 && study.lambda_min > 0.0,
            detail: format!(
                "max identity residual {:.1e} over {} nodes; λ(A) ∈ [{:.4}, {:.4}] at x = {:.3}, t = {:.5} (a-priori [{:.3}, {:.3}])",
                ids.max(),
                ids.nodes,
                study.lambda_min,
                study.lambda_max,
                params.center[0],
                params.t,
                study.interval.0,
                study.interval.1
            ),
        })
    })
}

/// `sup |u_t|` near the collapse point grows with resolution and as ρ
/// shrinks; `max{t,0}` saturates.
pub fn blowup_trend() -> CriterionResult {
    run(9, "blow-up trend", 300.0, || {
        let col = shared(collapsing_runs())?;
        let inputs: Vec<(&SpaceTimeField, Point, f64)> = col.fields.iter().zip(&col.locations).map(|(u, l)| (u, l.x_star, l.t_star)).collect();
        let trend = ut_blowup_trend(&inputs, &TREND_RHOS)?;

        let controls: Vec<SpaceTimeField> = TREND_NX
            .iter()
            .map(|&nx| Grid::new(1, -1.0, 1.0, nx, -0.5, 0.5, 1001).and_then(|g| SpaceTimeField::from_fn(g, |_, t| t.max(0.0))))
            .collect::<Result<_>>()?;
        let control_inputs: Vec<(&SpaceTimeField, Point, f64)> = controls.iter().map(|u| (u, [0.0, 0.0], 0.0)).collect();
        let control = ut_blowup_trend(&control_inputs, &TREND_RHOS)?;

        let sups: Vec<String> = trend
            .tables
            .iter()
            .map(|t| format!("{}: {:.3}", t.nx, t.rows[0].cylinder_sup.unwrap_or(f64::NAN)))
            .collect();
        Ok(Outcome {
            pass: trend.verdict == TrendVerdict::UnboundedConsistent && trend.slope.is_some_and(|s| s < 0.0) && control.verdict == TrendVerdict::Saturated,
            detail: format!(
                "collapsing: {:?}, sup|u_t| {}, slope {:.3}; control max{{t,0}}: {:?}",
                trend.verdict,
                sups.join(", "),
                trend.slope.unwrap_or(f64::NAN),
                control.verdict
            ),
        })
    })
}

/// Pinching exponent of `H` at the collapse point, α = 0.5.
pub fn pinching_exponent() -> CriterionResult {
    run(10, "pinching exponent", 300.0, || {
        let col = shared(collapsing_runs())?;
        let mut pass = true;
        let mut notes = Vec::new();
        for (u, loc) in col.fields.iter().zip(&col.locations) {
            let graph = extract_graph(u, 1.0)?;
            let rep = pinching_check(&graph, u, &loc.x_star, 0.5)?;
            pass &= rep.status == PinchingStatus::Pass && rep.exponent.is_some_and(|p| p >= 1.35);
            notes.push(format!("nx {}: exponent {:.3}", u.grid().nx(), rep.exponent.unwrap_or(f64::NAN)));
        }
        Ok(Outcome { pass, detail: format!("{} (need ≥ 1.35)", notes.join(", ")) })
    })
}

const CRITERIA: [fn() -> CriterionResult; 10] = [
    series_anchors,
    sign_propagation,
    eventual_negativity,
    exact_solution_residuals,
    least_solution_convergence,
    time_slope_propagation,
    weiss_anchors,
    hodograph_identities,
    blowup_trend,
    pinching_exponent,
];

pub const CRITERION_COUNT: u32 = CRITERIA.len() as u32;

/// Runs one criterion by its 1-based id.
pub fn run_criterion(id: u32) -> Option<CriterionResult> {
    let f = CRITERIA.get((id as usize).checked_sub(1)?)?;
    Some(f())
}

/// All criteria in order.
pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().map(|f| f()).collect()
}

/// Criteria that cannot pass as stated; they still run and print FAIL.
/// Criterion 5: the tail differences of the ε-sweep on collapsing_interval
/// track ≈ 0.56 ε (the O(ε) gap between `u^ε` and the least solution), so
/// with ε_min = 0.1 · 2^-12 the last difference is ≈ 1.4e-5, not < 1e-6.
pub const KNOWN_UNATTAINABLE: [u32; 1] = [5];
