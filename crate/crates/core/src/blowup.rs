//! Collapse of the negative set and the growth of `u_t` near the last
//! free-boundary point.

use crate::boundary::{extract_graph, pinching_check, FreeBoundaryGraph, PinchingReport};
use crate::error::{Error, Result};
use crate::grid::{visit, Grid, ParabolicCylinder, Point, SpaceTimeField};
use crate::hodograph::{rho_scaling, RhoScalingReport};
use crate::stats::{fit_log_log, LineFit};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Where and when the negative set `{u(·, t) < 0}` disappears.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseLocation {
    pub x_star: Point,
    /// Zero crossing of `min_x u(·, t)`, interpolated linearly between the
    /// bracketing levels.
    pub t_star: f64,
    /// Times of the last level with a negative value and of the next level.
    pub bracket: (f64, f64),
    pub last_negative_level: usize,
    pub hx: f64,
    pub ht: f64,
}

fn level_min(u: &SpaceTimeField, n: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (s, &v) in u.level(n).iter().enumerate() {
        if v < best.1 {
            best = (s, v);
        }
    }
    best
}

/// Locates the last time level with a negative value and the spatial
/// minimiser on it.
pub fn locate_collapse(u: &SpaceTimeField) -> Result<CollapseLocation> {
    let g = *u.grid();
    if level_min(u, 0).1 >= 0.0 {
        return Err(Error::Precondition("the initial level has no negative values".into()));
    }
    let last = g.nt() - 1;
    if level_min(u, last).1 < 0.0 {
        return Err(Error::NoCollapse { t_end: g.t1() });
    }
    let n = (0..last).rev().find(|&n| level_min(u, n).1 < 0.0).unwrap_or(0);
    let (s, m_lo) = level_min(u, n);
    let m_hi = level_min(u, n + 1).1;
    let (t_lo, t_hi) = (g.t(n), g.t(n + 1));
    let t_star = t_lo + (t_hi - t_lo) * (-m_lo) / (m_hi - m_lo);
    Ok(CollapseLocation {
        x_star: g.coords(s),
        t_star,
        bracket: (t_lo, t_hi),
        last_negative_level: n,
        hx: g.hx(),
        ht: g.ht(),
    })
}

/// Per-level check that the negative set is a single interval (1D) or a
/// single 4-connected component (2D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeSetReport {
    pub levels_checked: usize,
    /// Levels whose negative set has more than one component.
    pub violations: Vec<usize>,
    /// Width of the negative set (number of nodes) per level, 1D only.
    pub lengths: Vec<usize>,
}

impl NegativeSetReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether the node count of the negative set never grows in time.
    pub fn shrinking(&self) -> bool {
        self.lengths.windows(2).all(|w| w[1] <= w[0])
    }
}

fn components(grid: &Grid, negative: &[bool]) -> usize {
    let mut seen = vec![false; negative.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..negative.len() {
        if !negative[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(s) = stack.pop() {
            let a = grid.axes(s);
            for k in 0..grid.dim() {
                for d in [-1isize, 1] {
                    let i = a[k] as isize + d;
                    if i < 0 || i >= grid.nx() as isize {
                        continue;
                    }
                    let mut b = a;
                    b[k] = i as usize;
                    let q = grid.space_index(b);
                    if negative[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    count
}

pub fn negative_set_report(u: &SpaceTimeField) -> NegativeSetReport {
    let g = *u.grid();
    let mut violations = Vec::new();
    let mut lengths = Vec::new();
    for n in 0..g.nt() {
        let negative: Vec<bool> = u.level(n).iter().map(|v| *v < 0.0).collect();
        if components(&g, &negative) > 1 {
            violations.push(n);
        }
        if g.dim() == 1 {
            lengths.push(negative.iter().filter(|b| **b).count());
        }
    }
    NegativeSetReport { levels_checked: g.nt(), violations, lengths }
}

/// One row of a `sup |u_t|` table around the collapse point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtSupRow {
    pub rho: f64,
    /// `ρ ≥ 2 hx`.
    pub resolvable: bool,
    /// `sup |u_t|` over `Q_ρ` restricted to `{u > ht}`.
    pub cylinder_sup: Option<f64>,
    /// The same over the shell `Q_ρ \ Q_{ρ/2}`.
    pub shell_sup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtSupTable {
    pub nx: usize,
    pub hx: f64,
    pub ht: f64,
    pub center: Point,
    pub t: f64,
    pub rows: Vec<UtSupRow>,
    /// Fit of `log shell_sup` against `log ρ` over resolvable rows.
    pub shell_fit: Option<LineFit>,
}

impl UtSupTable {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "nx,rho,resolvable,cylinder_sup,shell_sup")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        for r in &self.rows {
            writeln!(w, "{},{:e},{},{},{}", self.nx, r.rho, r.resolvable, opt(r.cylinder_sup), opt(r.shell_sup))?;
        }
        Ok(())
    }
}

/// Forward time differences `(u^{n+1} - u^n)/ht` on `{u^n > ht}` around
/// `(center, t)`; differences straddling the free boundary never enter.
pub fn ut_sup_table(u: &SpaceTimeField, center: &Point, t: f64, rhos: &[f64]) -> Result<UtSupTable> {
    if rhos.is_empty() || rhos.windows(2).any(|w| !(w[1] < w[0])) || rhos.iter().any(|r| !(*r > 0.0)) {
        return Err(crate::error::param("rhos", "radii must be positive and strictly decreasing"));
    }
    let g = *u.grid();
    let dim = g.dim();
    let ht = g.ht();
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let q = ParabolicCylinder::new(*center, t, rho)?;
        let (mut cyl, mut shell): (Option<f64>, Option<f64>) = (None, None);
        visit(&g, &q, |n, s| {
            if n + 1 >= g.nt() || u.get(n, s) <= ht {
                return;
            }
            let d = ((u.get(n + 1, s) - u.get(n, s)) / ht).abs();
            cyl = Some(cyl.map_or(d, |m| m.max(d)));
            if q.distance(&g.coords(s), g.t(n), dim) >= 0.5 * rho {
                shell = Some(shell.map_or(d, |m| m.max(d)));
            }
        });
        rows.push(UtSupRow { rho, resolvable: rho >= 2.0 * g.hx(), cylinder_sup: cyl, shell_sup: shell });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.resolvable)
        .filter_map(|r| r.shell_sup.map(|s| (r.rho, s)))
        .unzip();
    Ok(UtSupTable { nx: g.nx(), hx: g.hx(), ht, center: *center, t, rows, shell_fit: fit_log_log(&xs, &ys) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum TrendVerdict {
    UnboundedConsistent,
    Saturated,
    Inconclusive { reason: String },
}

/// Relative spread below which all measured sups count as one value.
pub const SATURATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupTrend {
    /// One table per resolution, in the order given (coarse to fine).
    pub tables: Vec<UtSupTable>,
    /// Radii resolvable on every grid.
    pub common_rhos: Vec<f64>,
    /// At every common radius the cylinder sup grows with resolution.
    pub grows_with_resolution: bool,
    /// At every resolution the shell sup grows as `ρ` decreases.
    pub grows_as_rho_shrinks: bool,
    /// Shell fit slope on the finest grid.
    pub slope: Option<f64>,
    pub verdict: TrendVerdict,
}

/// Builds the `sup |u_t|` tables for fields ordered from coarse to fine,
/// each with its own collapse point, and classifies the trend.
///
/// Cylinder sups over `Q_ρ` are nested in `ρ`, so they can only be used for
/// the resolution trend; the `ρ` trend and the slope use the shells
/// `Q_ρ \ Q_{ρ/2}`, which see how large `u_t` is at distance `≈ ρ`.
pub fn ut_blowup_trend(fields: &[(&SpaceTimeField, Point, f64)], rhos: &[f64]) -> Result<BlowupTrend> {
    if fields.len() < 2 {
        return Err(crate::error::param("fields", "at least two resolutions are needed"));
    }
    let tables = std::thread::scope(|scope| {
        let handles: Vec<_> = fields
            .iter()
            .map(|(u, c, t)| scope.spawn(move || ut_sup_table(u, c, *t, rhos)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sup table worker panicked")).collect::<Result<Vec<_>>>()
    })?;
    Ok(classify(tables))
}

fn classify(tables: Vec<UtSupTable>) -> BlowupTrend {
    let rhos: Vec<f64> = tables[0].rows.iter().map(|r| r.rho).collect();
    let common: Vec<usize> = (0..rhos.len()).filter(|&i| tables.iter().all(|t| t.rows[i].resolvable)).collect();
    let common_rhos: Vec<f64> = common.iter().map(|&i| rhos[i]).collect();

    let all: Vec<f64> = tables
        .iter()
        .flat_map(|t| t.rows.iter().filter(|r| r.resolvable).flat_map(|r| [r.cylinder_sup, r.shell_sup]))
        .flatten()
        .collect();
    let slope = tables.last().and_then(|t| t.shell_fit).map(|f| f.slope);

    let grows_with_resolution = !common.is_empty()
        && common.iter().all(|&i| {
            let col: Vec<Option<f64>> = tables.iter().map(|t| t.rows[i].cylinder_sup).collect();
            col.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a))
        });
    let grows_as_rho_shrinks = tables.iter().all(|t| {
        let shell: Vec<Option<f64>> = t.rows.iter().filter(|r| r.resolvable).map(|r| r.shell_sup).collect();
        shell.len() >= 2 && shell.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a))
    });
    let slopes_negative = tables.iter().all(|t| t.shell_fit.is_some_and(|f| f.slope < 0.0));

    let verdict = if all.is_empty() {
        TrendVerdict::Inconclusive { reason: "no node of {u > ht} inside the resolvable cylinders".into() }
    } else {
        let (lo, hi) = all.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        if hi - lo <= SATURATION_TOL * hi {
            TrendVerdict::Saturated
        } else if grows_with_resolution && grows_as_rho_shrinks && slopes_negative {
            TrendVerdict::UnboundedConsistent
        } else {
            let mut why = Vec::new();
            if !grows_with_resolution {
                why.push("cylinder sup does not grow with resolution at every common radius");
            }
            if !grows_as_rho_shrinks {
                why.push("shell sup is not monotone in the radius");
            }
            if !slopes_negative {
                why.push("a fitted log-log slope is not negative");
            }
            TrendVerdict::Inconclusive { reason: why.join("; ") }
        }
    };
    BlowupTrend { tables, common_rhos, grows_with_resolution, grows_as_rho_shrinks, slope, verdict }
}

/// Along the free boundary, `sup_{Q_{ρ/2}} |u_t|` against `ρ^{1-γ} = |∇u|/M`
/// and the smallest `C` with `sup |u_t| ≤ C ρ^{-γ}` at every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub scaling: RhoScalingReport,
    /// `max sup |u_t| ρ^γ` over the samples.
    pub c_fit: f64,
    /// `min sup |u_t| ρ^γ`; `c_fit / c_min` measures how tight the envelope is.
    pub c_min: f64,
}

/// Uses every `stride`-th valid graph sample with `|x - x_star| ≥ margin`
/// (the critical point itself has `∇u = 0` and no finite `ρ`).
pub fn envelope_check(u: &SpaceTimeField, graph: &FreeBoundaryGraph, x_star: &Point, margin: f64, stride: usize, m: f64, alpha: f64, gamma: f64) -> Result<EnvelopeReport> {
    let dim = u.grid().dim();
    let points: Vec<(Point, f64)> = graph
        .valid_nodes()
        .filter(|&s| crate::grid::space_dist(&graph.x(s), x_star, dim) >= margin)
        .step_by(stride.max(1))
        .map(|s| (graph.x(s), graph.h[s]))
        .collect();
    let scaling = rho_scaling(u, &points, m, alpha, gamma)?;
    if scaling.rows.is_empty() {
        return Err(Error::EmptyRegion("no free-boundary sample with a usable gradient".into()));
    }
    let consts: Vec<f64> = scaling.rows.iter().map(|r| r.sup_ut * r.rho.powf(gamma)).collect();
    let c_fit = consts.iter().cloned().fold(0.0, f64::max);
    let c_min = consts.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EnvelopeReport { scaling, c_fit, c_min })
}

/// Everything measured about one collapsing solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub location: CollapseLocation,
    pub negative_set: NegativeSetReport,
    pub ut_sup_per_rho: UtSupTable,
    pub pinching: Option<PinchingReport>,
    /// Why the pinching check could not run, if it did not.
    pub pinching_error: Option<String>,
    pub grid: Grid,
}

pub fn collapse_report(u: &SpaceTimeField, c: f64, rhos: &[f64], alpha: f64) -> Result<CollapseReport> {
    let location = locate_collapse(u)?;
    let negative_set = negative_set_report(u);
    let ut_sup_per_rho = ut_sup_table(u, &location.x_star, location.t_star, rhos)?;
    let (pinching, pinching_error) = match extract_graph(u, c).and_then(|g| pinching_check(&g, u, &location.x_star, alpha)) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CollapseReport { location, negative_set, ut_sup_per_rho, pinching, pinching_error, grid: *u.grid() })
}

/// Whether the brackets `[t_n, t_{n+1}]` of several resolutions agree: every
/// pair of collapse times differs by at most `2 ht` of the coarser grid.
pub fn brackets_nested(locations: &[CollapseLocation]) -> bool {
    locations.iter().enumerate().all(|(i, a)| {
        locations[i + 1..].iter().all(|b| (a.t_star - b.t_star).abs() <= 2.0 * a.ht.max(b.ht) + 1e-12)
    })
}
