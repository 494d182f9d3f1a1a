//! Semi-implicit solver for the regularized problem `u_t - Δu = f_ε(u)` and the
//! monotone limit `ε ↓ 0` that produces the least solution.

pub mod linalg;
pub mod scenario;

pub use scenario::{elliptic_cross_field, levels_for, PolynomialData, ScenarioLabel, ScenarioSpec};

use crate::error::{param, Error, Result};
use crate::grid::{Grid, LocalDerivatives, SpaceTimeField};
use linalg::ImplicitStep;
use serde::{Deserialize, Serialize};

/// Piecewise-linear regularization of the indicator of `{x > 0}`.
pub fn f_eps(x: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(param("eps", format!("must be positive, got {eps}")));
    }
    Ok(f_eps_unchecked(x, eps))
}

#[inline]
pub(crate) fn f_eps_unchecked(x: f64, eps: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x <= eps {
        x / eps
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSchedule {
    pub eps_values: Vec<f64>,
    pub stop_tol: f64,
    pub max_picard: usize,
    pub picard_tol: f64,
}

impl Default for RegularizationSchedule {
    /// `ε_k = 0.1 · 2^{-k}`, `k = 0..=12`.
    fn default() -> Self {
        RegularizationSchedule::geometric(0.1, 13)
    }
}

impl RegularizationSchedule {
    pub fn geometric(eps0: f64, count: usize) -> Self {
        RegularizationSchedule {
            eps_values: (0..count).map(|k| eps0 * 0.5f64.powi(k as i32)).collect(),
            stop_tol: 1e-6,
            max_picard: 200,
            picard_tol: 1e-12,
        }
    }

    /// Geometric schedule from 0.1 down to (at least) `eps_min`.
    pub fn down_to(eps_min: f64) -> Self {
        let count = ((0.1 / eps_min).log2().round().max(0.0) as usize) + 1;
        RegularizationSchedule::geometric(0.1, count)
    }

    pub fn eps_min(&self) -> f64 {
        self.eps_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_values.is_empty() || self.eps_values.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(param("eps_values", "must be a nonempty list of positive numbers"));
        }
        if self.eps_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(param("eps_values", "must be strictly decreasing"));
        }
        if !(self.stop_tol > 0.0) {
            return Err(param("stop_tol", "must be positive"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(param("picard_tol", "must be positive"));
        }
        if self.max_picard == 0 {
            return Err(param("max_picard", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-solve iteration counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub max_picard: usize,
    pub total_picard: usize,
}

/// Right-hand side of the time step.
#[derive(Clone, Copy)]
enum Forcing {
    Regularized(f64),
    Constant(f64),
}

impl Forcing {
    #[inline]
    fn eval(self, u: f64) -> f64 {
        match self {
            Forcing::Regularized(eps) => f_eps_unchecked(u, eps),
            Forcing::Constant(v) => v,
        }
    }
}

fn march(spec: &ScenarioSpec, sched: &RegularizationSchedule, forcing: Forcing) -> Result<(SpaceTimeField, SolveStats)> {
    let g = *spec.grid();
    let ns = g.n_space();
    let ht = g.ht();
    let boundary = spec.boundary_nodes();
    let interior = g.interior_nodes();
    let mut values = Vec::with_capacity(g.len());
    values.extend_from_slice(spec.initial());
    let mut step = ImplicitStep::new(&g);
    let (mut scratch, mut guess) = (Vec::new(), Vec::new());
    let mut rhs = vec![0.0; ns];
    let mut ustar = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut stats = SolveStats::default();
    for n in 1..g.nt() {
        let old_start = (n - 1) * ns;
        // linear extrapolation in time as the first Picard iterate
        for s in 0..ns {
            let old = values[old_start + s];
            ustar[s] = if n >= 2 { 2.0 * old - values[old_start - ns + s] } else { old };
        }
        for (k, &s) in boundary.iter().enumerate() {
            ustar[s] = spec.lateral_level(n)[k];
        }
        next.copy_from_slice(&ustar);
        let mut iterations = 0;
        let mut change = f64::INFINITY;
        while iterations < sched.max_picard {
            iterations += 1;
            for &s in &interior {
                rhs[s] = values[old_start + s] + ht * forcing.eval(ustar[s]);
            }
            step.solve(&g, &rhs, &mut next, &mut scratch, &mut guess)?;
            change = interior.iter().fold(0.0f64, |m, &s| m.max((next[s] - ustar[s]).abs()));
            ustar.copy_from_slice(&next);
            if change < sched.picard_tol || matches!(forcing, Forcing::Constant(_)) {
                break;
            }
        }
        if change >= sched.picard_tol && !matches!(forcing, Forcing::Constant(_)) {
            return Err(Error::PicardNonConvergence { level: n, iterations, change, last_iterate: next });
        }
        stats.max_picard = stats.max_picard.max(iterations);
        stats.total_picard += iterations;
        values.extend_from_slice(&next);
    }
    Ok((SpaceTimeField::new(g, values)?, stats))
}

fn step_precheck(grid: &Grid, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(param("eps", format!("must be positive, got {eps}")));
    }
    if grid.ht() >= eps / 2.0 {
        return Err(Error::Precondition(format!(
            "time step {:e} must be below eps/2 = {:e}; raise nt or the smallest eps",
            grid.ht(),
            eps / 2.0
        )));
    }
    Ok(())
}

/// Solves `u_t - Δu = f_ε(u)` with the scenario's data.
pub fn solve_regularized(spec: &ScenarioSpec, eps: f64, sched: &RegularizationSchedule) -> Result<SpaceTimeField> {
    solve_regularized_with_stats(spec, eps, sched).map(|(u, _)| u)
}

pub fn solve_regularized_with_stats(spec: &ScenarioSpec, eps: f64, sched: &RegularizationSchedule) -> Result<(SpaceTimeField, SolveStats)> {
    step_precheck(spec.grid(), eps)?;
    march(spec, sched, Forcing::Regularized(eps))
}

/// Solves `u_t - Δu = 1` with the scenario's data (the positive, non-least
/// solution of the zero-data cap problem).
pub fn solve_forced(spec: &ScenarioSpec, sched: &RegularizationSchedule) -> Result<SpaceTimeField> {
    march(spec, sched, Forcing::Constant(1.0)).map(|(u, _)| u)
}

/// Which intermediate solutions [`sweep`] keeps in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    /// Keep every `u^ε` (memory grows with the schedule length).
    All,
    /// Keep only the final field.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRecord {
    pub eps: f64,
    /// `sup |u^{ε_k} - u^{ε_{k-1}}|`.
    pub sup_diff_prev: Option<f64>,
    /// `min (u^{ε_k} - u^{ε_{k-1}})`; nonnegative up to round-off by monotonicity.
    pub min_gap_prev: Option<f64>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone)]
pub struct LeastSolutionResult {
    pub u: SpaceTimeField,
    pub eps_used: Vec<f64>,
    pub records: Vec<EpsRecord>,
    /// Populated only with [`Retention::All`].
    pub per_eps_solutions: Vec<SpaceTimeField>,
    pub converged: bool,
}

/// Tolerance for `u^{ε₂} ≤ u^{ε₁}` when `ε₁ < ε₂`.
pub const MONOTONICITY_TOL: f64 = 1e-10;

impl LeastSolutionResult {
    pub fn tail(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.sup_diff_prev).collect()
    }

    pub fn chi(&self) -> SpaceTimeField {
        chi(&self.u)
    }

    pub fn residual(&self) -> SpaceTimeField {
        residual(&self.u)
    }
}

/// Indicator of `{u > 0}` (zero where `u = 0`).
pub fn chi(u: &SpaceTimeField) -> SpaceTimeField {
    let v = u.values().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
    SpaceTimeField::new(*u.grid(), v).expect("indicator is finite")
}

/// `u_t - Δ_h u - χ_{u>0}` at one interior node, backward difference in time.
pub fn residual_at(u: &SpaceTimeField, n: usize, s: usize) -> f64 {
    let chi = if u.get(n, s) > 0.0 { 1.0 } else { 0.0 };
    u.dt_backward(n, s) - u.laplacian_at(n, s) - chi
}

/// Residual field; zero on the spatial boundary and the initial level.
pub fn residual(u: &SpaceTimeField) -> SpaceTimeField {
    let g = *u.grid();
    let mut out = SpaceTimeField::zeros(g);
    let interior = g.interior_nodes();
    for n in 1..g.nt() {
        let level = out.level_mut(n);
        for &s in &interior {
            level[s] = residual_at(u, n, s);
        }
    }
    out
}

/// Whether the residual stencil at interior node `(n, s)` (the node, its
/// predecessor in time and its spatial neighbours) lies in one phase,
/// `{u > 0}` or `{u ≤ 0}`, so that it does not straddle the free boundary.
pub fn single_phase_stencil(u: &SpaceTimeField, n: usize, s: usize) -> bool {
    let g = u.grid();
    let phase = u.get(n, s) > 0.0;
    if n == 0 || g.is_boundary(s) || (u.get(n - 1, s) > 0.0) != phase {
        return false;
    }
    let a = g.axes(s);
    (0..g.dim()).all(|k| {
        [a[k] - 1, a[k] + 1].into_iter().all(|i| {
            let mut b = a;
            b[k] = i;
            (u.get(n, g.space_index(b)) > 0.0) == phase
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Max `|residual|` over interior nodes (levels `n >= 1`) with `|u| > threshold`.
    pub max_abs: f64,
    pub nodes: usize,
    pub threshold: f64,
    /// `max_abs / (hx² + ht)`.
    pub consistency_constant: f64,
}

/// Residual statistics over interior nodes passing `keep(n, s)` and `|u| > threshold`.
pub fn residual_stats(u: &SpaceTimeField, threshold: f64, keep: impl Fn(usize, usize) -> bool) -> ResidualStats {
    let g = *u.grid();
    let interior = g.interior_nodes();
    let mut max_abs: f64 = 0.0;
    let mut nodes = 0;
    for n in 1..g.nt() {
        for &s in &interior {
            if u.get(n, s).abs() > threshold && keep(n, s) {
                max_abs = max_abs.max(residual_at(u, n, s).abs());
                nodes += 1;
            }
        }
    }
    let scale = g.hx() * g.hx() + g.ht();
    ResidualStats { max_abs, nodes, threshold, consistency_constant: max_abs / scale }
}

fn compare(prev: &SpaceTimeField, cur: &SpaceTimeField) -> (f64, f64, usize) {
    let mut sup: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut at = 0;
    for (k, (a, b)) in prev.values().iter().zip(cur.values()).enumerate() {
        let d = b - a;
        sup = sup.max(d.abs());
        if d < min_gap {
            min_gap = d;
            at = k;
        }
    }
    (sup, min_gap, at)
}

/// Runs the schedule, checking ε-monotonicity after every solve and stopping
/// once successive solutions differ by less than `stop_tol`. Unlike
/// [`least_solution`] a schedule that runs out is reported through
/// `converged = false` instead of an error.
pub fn sweep(spec: &ScenarioSpec, sched: &RegularizationSchedule, retention: Retention) -> Result<LeastSolutionResult> {
    sched.validate()?;
    if sched.eps_values.len() < 2 {
        return Err(param("eps_values", "need at least two values"));
    }
    step_precheck(spec.grid(), sched.eps_min())?;
    let ns = spec.grid().n_space();
    let mut records = Vec::new();
    let mut kept = Vec::new();
    let mut prev: Option<SpaceTimeField> = None;
    let mut eps_used = Vec::new();
    let mut converged = false;
    for (k, &eps) in sched.eps_values.iter().enumerate() {
        let (u, stats) = solve_regularized_with_stats(spec, eps, sched)?;
        let mut rec = EpsRecord { eps, sup_diff_prev: None, min_gap_prev: None, stats };
        if let Some(p) = &prev {
            let (sup, min_gap, at) = compare(p, &u);
            if min_gap < -MONOTONICITY_TOL {
                return Err(Error::MonotonicityViolation {
                    level: at / ns,
                    node: at % ns,
                    eps_small: eps,
                    eps_large: sched.eps_values[k - 1],
                    gap: min_gap,
                });
            }
            rec.sup_diff_prev = Some(sup);
            rec.min_gap_prev = Some(min_gap);
            converged = sup < sched.stop_tol;
        }
        records.push(rec);
        eps_used.push(eps);
        if retention == Retention::All {
            kept.push(u.clone());
        }
        prev = Some(u);
        if converged {
            break;
        }
    }
    Ok(LeastSolutionResult {
        u: prev.expect("schedule is nonempty"),
        eps_used,
        records,
        per_eps_solutions: kept,
        converged,
    })
}

/// Least solution as the monotone limit of `u^ε`; errors when the schedule is
/// exhausted before successive solutions agree to `stop_tol`.
pub fn least_solution(spec: &ScenarioSpec, sched: &RegularizationSchedule) -> Result<LeastSolutionResult> {
    let res = sweep(spec, sched, Retention::All)?;
    if !res.converged {
        return Err(Error::NotConverged { tail: res.tail() });
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMonotonicityReport {
    /// `min (u(x, t₂) - u(x, t₁)) / (t₂ - t₁)` over the admitted pairs.
    pub min_slope: f64,
    /// `(level, node)` of the later endpoint of the minimizing pair.
    pub at: Option<(usize, usize)>,
    pub pairs: usize,
    pub c: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Minimum time slope over all pairs `t₁ < t₂` at fixed `x`.
///
/// Any such slope is an average of consecutive-level slopes, so the minimum
/// over all pairs is attained by a consecutive pair and only those are scanned.
pub fn check_time_monotonicity(u: &SpaceTimeField, c: f64, tol: f64) -> TimeMonotonicityReport {
    check_time_monotonicity_where(u, c, tol, |_, _| true)
}

/// As [`check_time_monotonicity`], restricted to consecutive pairs `(n-1, n)`
/// at node `s` for which `keep(n, s)` holds.
pub fn check_time_monotonicity_where(u: &SpaceTimeField, c: f64, tol: f64, keep: impl Fn(usize, usize) -> bool) -> TimeMonotonicityReport {
    let g = u.grid();
    let ht = g.ht();
    let mut min_slope = f64::INFINITY;
    let mut at = None;
    let mut pairs = 0;
    for n in 1..g.nt() {
        for s in 0..g.n_space() {
            if !keep(n, s) {
                continue;
            }
            pairs += 1;
            let slope = (u.get(n, s) - u.get(n - 1, s)) / ht;
            if slope < min_slope {
                min_slope = slope;
                at = Some((n, s));
            }
        }
    }
    TimeMonotonicityReport { min_slope, at, pairs, c, tol, pass: pairs > 0 && min_slope >= c - tol }
}

/// Restriction to pairs with both endpoints in `{u > 0}`.
pub fn check_time_monotonicity_positive(u: &SpaceTimeField, c: f64, tol: f64) -> TimeMonotonicityReport {
    check_time_monotonicity_where(u, c, tol, |n, s| u.get(n - 1, s) > 0.0 && u.get(n, s) > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f_eps_branches() {
        assert_eq!(f_eps(-1.0, 0.1).unwrap(), 0.0);
        assert_eq!(f_eps(0.05, 0.1).unwrap(), 0.5);
        assert_eq!(f_eps(0.2, 0.1).unwrap(), 1.0);
        assert_eq!(f_eps(0.0, 0.1).unwrap(), 0.0);
        assert_eq!(f_eps(0.1, 0.1).unwrap(), 1.0);
        assert!(f_eps(1.0, 0.0).is_err());
        assert!(f_eps(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn f_eps_is_monotone_and_lipschitz(a in -1.0..1.0f64, b in -1.0..1.0f64, eps in 1e-4..1.0f64) {
            let (fa, fb) = (f_eps(a, eps).unwrap(), f_eps(b, eps).unwrap());
            prop_assert!((fa - fb).abs() <= (a - b).abs() / eps * (1.0 + 1e-12));
            if a <= b { prop_assert!(fa <= fb); }
            prop_assert!((0.0..=1.0).contains(&fa));
        }
    }

    #[test]
    fn default_schedule_is_the_geometric_one() {
        let s = RegularizationSchedule::default();
        assert_eq!(s.eps_values.len(), 13);
        assert_eq!(s.eps_values[0], 0.1);
        assert!((s.eps_min() - 0.1 / 4096.0).abs() < 1e-18);
        s.validate().unwrap();
        let mut bad = s.clone();
        bad.eps_values.swap(0, 1);
        assert!(bad.validate().is_err());
    }

    fn small_sched() -> RegularizationSchedule {
        RegularizationSchedule::geometric(0.1, 4)
    }

    #[test]
    fn negative_data_stays_caloric() {
        let g = Grid::new(1, -1.0, 1.0, 21, 0.0, 0.1, levels_for(0.1, 0.0125)).unwrap();
        let spec = ScenarioSpec::from_fn(ScenarioLabel::Custom, g, 0.0, |_, _| -1.0).unwrap();
        let u = solve_regularized(&spec, 0.0125, &small_sched()).unwrap();
        assert!(u.values().iter().all(|v| (v + 1.0).abs() < 1e-13));
    }

    #[test]
    fn step_precheck_rejects_coarse_time_steps() {
        let spec = ScenarioSpec::builtin(ScenarioLabel::CollapsingInterval, 1, 11, 11).unwrap();
        assert!(matches!(solve_regularized(&spec, 0.01, &small_sched()), Err(Error::Precondition(_))));
    }

    #[test]
    fn picard_failure_carries_the_last_iterate() {
        let spec = ScenarioSpec::builtin_for_eps(ScenarioLabel::CollapsingInterval, 1, 21, 0.0125).unwrap();
        let mut sched = small_sched();
        sched.max_picard = 1;
        match solve_regularized(&spec, 0.0125, &sched) {
            Err(Error::PicardNonConvergence { last_iterate, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last_iterate.len(), 21);
            }
            other => panic!("expected Picard failure, got {other:?}"),
        }
    }

    #[test]
    fn constant_solution_of_positive_region_has_zero_residual() {
        // u = t + 1 > 0 solves u_t - u_xx = 1 exactly and the scheme reproduces it
        let g = Grid::new(1, -1.0, 1.0, 11, 0.0, 0.05, levels_for(0.05, 0.0125)).unwrap();
        let spec = ScenarioSpec::custom(g, 1.0, PolynomialData { a0: 1.0, a1: 1.0, a2: 0.0 }).unwrap();
        let u = solve_regularized(&spec, 0.0125, &small_sched()).unwrap();
        let exact = SpaceTimeField::from_fn(g, |_, t| t + 1.0).unwrap();
        assert!(u.lin_comb(1.0, &exact, -1.0).unwrap().sup_abs() < 1e-12);
        assert!(residual_stats(&u, 0.0, |_, _| true).max_abs < 1e-8);
    }

    #[test]
    fn two_d_collapsing_is_symmetric_and_monotone() {
        let spec = ScenarioSpec::builtin_for_eps(ScenarioLabel::CollapsingInterval, 2, 11, 0.0125).unwrap();
        let res = sweep(&spec, &small_sched(), Retention::Final).unwrap();
        let g = *spec.grid();
        let n = g.nt() - 1;
        for s in 0..g.n_space() {
            let a = g.axes(s);
            let mirrored = g.space_index([a[1], a[0]]);
            assert!((res.u.get(n, s) - res.u.get(n, mirrored)).abs() < 1e-10);
        }
        for r in &res.records[1..] {
            assert!(r.min_gap_prev.unwrap() >= -MONOTONICITY_TOL);
        }
        assert!(check_time_monotonicity(&res.u, 1.0, 1e-3).pass);
    }

    #[test]
    fn time_monotonicity_examples() {
        let g = Grid::new(1, -1.0, 1.0, 5, -1.0, 1.0, 9).unwrap();
        let tplus = SpaceTimeField::from_fn(g, |_, t| t.max(0.0)).unwrap();
        assert!(check_time_monotonicity(&tplus, 0.0, 0.0).pass);
        let r = check_time_monotonicity(&tplus, 1.0, 1e-3);
        assert!(!r.pass);
        assert_eq!(r.min_slope, 0.0);
        let two_t = SpaceTimeField::from_fn(g, |_, t| 2.0 * t).unwrap();
        let r = check_time_monotonicity(&two_t, 1.0, 0.0);
        assert!(r.pass && (r.min_slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chi_is_strict() {
        let g = Grid::new(1, -1.0, 1.0, 3, 0.0, 1.0, 3).unwrap();
        let u = SpaceTimeField::new(g, vec![-1.0, 0.0, 1e-300, 0.0, 0.0, 0.0, 2.0, -0.0, 0.5]).unwrap();
        assert_eq!(chi(&u).values(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn comparison_principle(a0 in -1.0..0.5f64, a2 in 0.0..2.0f64, bump in 0.0..0.5f64) {
            let g = Grid::new(1, -1.0, 1.0, 17, 0.0, 0.05, levels_for(0.05, 0.0125)).unwrap();
            let lo = ScenarioSpec::custom(g, 1.0, PolynomialData { a0, a1: 1.0, a2 }).unwrap();
            let hi = lo.offset(bump);
            let sched = small_sched();
            let ulo = solve_regularized(&lo, 0.0125, &sched).unwrap();
            let uhi = solve_regularized(&hi, 0.0125, &sched).unwrap();
            for (a, b) in ulo.values().iter().zip(uhi.values()) {
                prop_assert!(*a <= *b + 1e-10);
            }
        }
    }

    #[test]
    fn time_translation_shifts_the_solution() {
        // zero data is stationary, so delaying the switch-on by k levels delays the solution by k levels
        let eps = 0.0125;
        let g = Grid::new(1, -1.0, 1.0, 17, -0.05, 0.05, levels_for(0.1, eps)).unwrap();
        let k = 8;
        let tau = k as f64 * g.ht();
        let spec = ScenarioSpec::from_fn(ScenarioLabel::Custom, g, 0.0, |_, t| t.max(0.0)).unwrap();
        let delayed = ScenarioSpec::from_fn(ScenarioLabel::Custom, g, 0.0, |_, t| (t - tau).max(0.0)).unwrap();
        let sched = small_sched();
        let u = solve_regularized(&spec, eps, &sched).unwrap();
        let v = solve_regularized(&delayed, eps, &sched).unwrap();
        for n in 0..g.nt() - k {
            for s in 0..g.n_space() {
                assert!((u.get(n, s) - v.get(n + k, s)).abs() < 1e-12);
            }
        }
    }
}
