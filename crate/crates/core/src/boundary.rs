//! Free boundary `Γ = ∂{u > 0}` as a time graph `t = H(x)`, with Lipschitz,
//! pinching and normal-angle diagnostics.

use crate::error::{Error, Result};
use crate::grid::{holder_from_samples, space_dist, visit, Grid, HolderMode, LocalDerivatives, ParabolicCylinder, Point, Sample, SpaceTimeField, EXACT_NODE_LIMIT};
use crate::solver::check_time_monotonicity;
use crate::stats::{fit_log_log, LineFit};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Relative slack on `u_t ≥ c` accepted before extraction.
pub const SLOPE_TOL: f64 = 1e-3;

/// Crossing times `H(x)` sampled at every spatial node.
#[derive(Debug, Clone)]
pub struct FreeBoundaryGraph {
    pub grid: Grid,
    /// `H` per spatial node; `NaN` where `valid` is false.
    pub h: Vec<f64>,
    pub valid: Vec<bool>,
    /// First time level with `u > 0` after the crossing.
    pub positive_level: Vec<Option<usize>>,
    pub grad_h: Vec<Option<Point>>,
}

impl FreeBoundaryGraph {
    pub fn valid_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid.iter().enumerate().filter(|(_, v)| **v).map(|(s, _)| s)
    }

    pub fn len_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len_valid() == 0
    }

    pub fn x(&self, s: usize) -> Point {
        self.grid.coords(s)
    }

    /// Valid sample with the latest crossing time.
    pub fn top(&self) -> Option<usize> {
        self.valid_nodes().max_by(|&a, &b| self.h[a].total_cmp(&self.h[b]))
    }

    /// `sup |H_self - H_other|` over nodes valid in both graphs whose
    /// coordinates coincide (e.g. a grid and its 2x refinement).
    pub fn sup_difference(&self, other: &FreeBoundaryGraph) -> Option<f64> {
        let dim = self.grid.dim();
        let mut best: Option<f64> = None;
        for s in self.valid_nodes() {
            let p = self.x(s);
            let q = other.grid.nearest_node(&p);
            if other.valid[q] && space_dist(&p, &other.x(q), dim) < 1e-9 {
                let d = (self.h[s] - other.h[q]).abs();
                best = Some(best.map_or(d, |b| b.max(d)));
            }
        }
        best
    }
}

/// Extracts `H` by linear-in-time interpolation of the unique sign change of
/// `u` from `≤ 0` to `> 0` in every spatial column.
///
/// With `c > 0` the field must first pass the discrete slope check `u_t ≥ c`.
pub fn extract_graph(u: &SpaceTimeField, c: f64) -> Result<FreeBoundaryGraph> {
    if c > 0.0 {
        let rep = check_time_monotonicity(u, c, SLOPE_TOL * c);
        if !rep.pass {
            return Err(Error::Precondition(format!(
                "time slope {} falls below c = {c}; the crossing is not unique",
                rep.min_slope
            )));
        }
    }
    let g = *u.grid();
    let ns = g.n_space();
    let mut h = vec![f64::NAN; ns];
    let mut valid = vec![false; ns];
    let mut positive_level = vec![None; ns];
    for s in 0..ns {
        let mut crossed = false;
        for n in 1..g.nt() {
            let (a, b) = (u.get(n - 1, s), u.get(n, s));
            if a <= 0.0 && b > 0.0 {
                if crossed {
                    return Err(Error::MultipleCrossings { x: g.coords(s) });
                }
                crossed = true;
                h[s] = g.t(n - 1) + (g.t(n) - g.t(n - 1)) * (-a) / (b - a);
                valid[s] = true;
                positive_level[s] = Some(n);
            } else if crossed && b <= 0.0 {
                return Err(Error::MultipleCrossings { x: g.coords(s) });
            }
        }
    }
    let grad_h = graph_gradient(&g, &h, &valid);
    Ok(FreeBoundaryGraph { grid: g, h, valid, positive_level, grad_h })
}

fn graph_gradient(g: &Grid, h: &[f64], valid: &[bool]) -> Vec<Option<Point>> {
    let hx = g.hx();
    (0..g.n_space())
        .map(|s| {
            if !valid[s] {
                return None;
            }
            let a = g.axes(s);
            let mut out = [0.0; 2];
            for k in 0..g.dim() {
                let nb = |d: isize| -> Option<f64> {
                    let i = a[k] as isize + d;
                    if i < 0 || i >= g.nx() as isize {
                        return None;
                    }
                    let mut b = a;
                    b[k] = i as usize;
                    let q = g.space_index(b);
                    valid[q].then_some(h[q])
                };
                out[k] = match (nb(-1), nb(1)) {
                    (Some(l), Some(r)) => (r - l) / (2.0 * hx),
                    (None, Some(r)) => (r - h[s]) / hx,
                    (Some(l), None) => (h[s] - l) / hx,
                    (None, None) => return None,
                };
            }
            Some(out)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `max |H(y) - H(x)| / |x - y|` over sample pairs.
    pub lip: f64,
    /// `sup |∇u|` over the nodes of `region`.
    pub sup_grad: f64,
    pub c: f64,
    /// `sup_grad / c`.
    pub bound: f64,
    pub region: ParabolicCylinder,
    pub exact_pairs: bool,
    pub pass: bool,
}

/// Smallest cylinder around the graph's center that holds every graph point.
pub fn enclosing_cylinder(g: &FreeBoundaryGraph) -> Option<ParabolicCylinder> {
    let dim = g.grid.dim();
    let nodes: Vec<usize> = g.valid_nodes().collect();
    if nodes.is_empty() {
        return None;
    }
    let mut center = [0.0; 2];
    let mut tc = 0.0;
    for &s in &nodes {
        let p = g.x(s);
        for k in 0..dim {
            center[k] += p[k] / nodes.len() as f64;
        }
        tc += g.h[s] / nodes.len() as f64;
    }
    let mut q = ParabolicCylinder { center, t: tc, r: 0.0 };
    let r = nodes.iter().map(|&s| q.distance(&g.x(s), g.h[s], dim)).fold(0.0, f64::max);
    q.r = r + g.grid.hx();
    Some(q)
}

/// `sup |∇u|` (central differences) over the nodes inside `region`.
pub fn sup_gradient(u: &SpaceTimeField, region: &ParabolicCylinder) -> f64 {
    let mut best: f64 = 0.0;
    visit(u.grid(), region, |n, s| {
        let gr = u.grad_at(n, s);
        best = best.max((gr[0] * gr[0] + gr[1] * gr[1]).sqrt());
    });
    best
}

/// Compares `Lip(H)` with `C_r / c`, `C_r = sup_{Q_r} |∇u|`; passes when
/// `Lip(H) ≤ 1.1 · C_r / c`. Without an explicit region the enclosing
/// cylinder of the graph is used.
pub fn lipschitz_report(g: &FreeBoundaryGraph, u: &SpaceTimeField, c: f64, region: Option<ParabolicCylinder>) -> Result<LipschitzReport> {
    let region = match region.or_else(|| enclosing_cylinder(g)) {
        Some(r) => r,
        None => return Err(Error::EmptyRegion("free-boundary graph has no valid samples".into())),
    };
    let dim = g.grid.dim();
    let nodes: Vec<usize> = g.valid_nodes().collect();
    let exact_pairs = nodes.len() <= EXACT_NODE_LIMIT;
    let mut lip: f64 = 0.0;
    let reach = 3.0 * g.grid.hx() * (1.0 + 1e-9);
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            let d = space_dist(&g.x(a), &g.x(b), dim);
            if !exact_pairs && d > reach {
                continue;
            }
            lip = lip.max((g.h[a] - g.h[b]).abs() / d);
        }
    }
    let sup_grad = sup_gradient(u, &region);
    let bound = if c > 0.0 { sup_grad / c } else { f64::INFINITY };
    Ok(LipschitzReport { lip, sup_grad, c, bound, region, exact_pairs, pass: lip <= bound * 1.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PinchingStatus {
    Pass,
    Fail,
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchingReport {
    pub x0: Point,
    pub h0: f64,
    /// Gradient size at `(x0, H(x0))`: the larger of the central and the
    /// one-sided difference quotients.
    pub grad_norm: f64,
    pub grad_tol: f64,
    /// `(ρ, sup_{|y - x0| ≤ ρ} |H(y) - H(x0)|)`, with `ρ` the distance of the
    /// farthest sample inside the ball.
    pub scales: Vec<(f64, f64)>,
    pub fit: Option<LineFit>,
    pub exponent: Option<f64>,
    pub required: f64,
    pub status: PinchingStatus,
}

/// Smallest admissible gradient tolerance, used when `∇u` is locally constant.
pub const GRAD_TOL_FLOOR: f64 = 1e-9;

/// Hölder seminorm of `∇u` over each half of `Q_{8hx}(x0, t0)` split by the
/// coordinate hyperplanes through `x0`; the largest is returned. Splitting
/// keeps a gradient jump across `x0` from inflating the modulus.
fn one_sided_gradient_seminorm(u: &SpaceTimeField, x0: &Point, t0: f64, alpha: f64) -> f64 {
    let g = u.grid();
    let dim = g.dim();
    let q = ParabolicCylinder { center: *x0, t: t0, r: 8.0 * g.hx() };
    let mut best: f64 = 0.0;
    for k in 0..dim {
        for side in [-1.0, 1.0] {
            let mut samples = Vec::new();
            visit(g, &q, |n, s| {
                let p = g.coords(s);
                let off = side * (p[k] - x0[k]);
                if off > 0.5 * g.hx() {
                    let gr = u.grad_at(n, s);
                    samples.push(Sample { x: p, t: g.t(n), value: gr[..dim].to_vec() });
                }
            });
            if let Ok(h) = holder_from_samples(&samples, dim, alpha, HolderMode::Parabolic) {
                best = best.max(h.seminorm);
            }
        }
    }
    best
}

/// Pointwise gradient size at a spatial node and time, counting one-sided
/// differences so that a kink at `x0` is not mistaken for a critical point.
fn gradient_size(u: &SpaceTimeField, s: usize, t: f64) -> f64 {
    let g = u.grid();
    let central = u.grad_at_time(s, t);
    let mut size = (central[0] * central[0] + central[1] * central[1]).sqrt();
    let a = g.axes(s);
    let n0 = g.nearest_level(t);
    for k in 0..g.dim() {
        for d in [-1isize, 1] {
            let i = a[k] as isize + d;
            if i < 0 || i >= g.nx() as isize {
                continue;
            }
            let mut b = a;
            b[k] = i as usize;
            let q = g.space_index(b);
            size = size.max(((u.get(n0, q) - u.get(n0, s)) / g.hx()).abs());
        }
    }
    size
}

/// Fits `sup_{|y - x0| ≤ ρ} |H(y) - H(x0)| ~ ρ^p` over dyadic `ρ` and passes
/// when `p ≥ 1 + α - 0.15`. Requires `x0` to be a spatial critical point.
pub fn pinching_check(g: &FreeBoundaryGraph, u: &SpaceTimeField, x0: &Point, alpha: f64) -> Result<PinchingReport> {
    let grid = g.grid;
    let dim = grid.dim();
    let s0 = grid.nearest_node(x0);
    if !g.valid[s0] {
        return Err(Error::Precondition(format!("no free-boundary sample at {:?}", &x0[..dim])));
    }
    let x0 = grid.coords(s0);
    let h0 = g.h[s0];
    let required = 1.0 + alpha - 0.15;
    let seminorm = one_sided_gradient_seminorm(u, &x0, h0, alpha);
    let grad_tol = (10.0 * seminorm * grid.hx().powf(alpha)).max(GRAD_TOL_FLOOR);
    let grad_norm = gradient_size(u, s0, h0);
    let mut report = PinchingReport {
        x0,
        h0,
        grad_norm,
        grad_tol,
        scales: Vec::new(),
        fit: None,
        exponent: None,
        required,
        status: PinchingStatus::Inconclusive { reason: String::new() },
    };
    if grad_norm >= grad_tol {
        report.status = PinchingStatus::Inconclusive {
            reason: format!("|∇u| = {grad_norm:.3e} is not below the critical-point tolerance {grad_tol:.3e}"),
        };
        return Ok(report);
    }
    // largest radius whose ball stays inside the valid part of the graph
    let nodes: Vec<usize> = g.valid_nodes().collect();
    let mut rho_max = nodes
        .iter()
        .map(|&s| space_dist(&g.x(s), &x0, dim))
        .fold(0.0, f64::max);
    for s in 0..grid.n_space() {
        if !g.valid[s] {
            rho_max = rho_max.min(space_dist(&grid.coords(s), &x0, dim) - grid.hx());
        }
    }
    let rho_min = 4.0 * grid.hx();
    let mut rho = rho_max.min(0.5);
    while rho >= rho_min {
        // the realized radius (farthest sample inside the ball) is what the sup sees
        let (mut reach, mut sup) = (0.0f64, 0.0f64);
        for &s in &nodes {
            let d = space_dist(&g.x(s), &x0, dim);
            if d <= rho * (1.0 + 1e-12) {
                reach = reach.max(d);
                sup = sup.max((g.h[s] - h0).abs());
            }
        }
        report.scales.push((reach, sup));
        rho /= 2.0;
    }
    let usable: Vec<(f64, f64)> = report.scales.iter().copied().filter(|(_, s)| *s > 0.0).collect();
    if usable.len() < 3 {
        report.status = PinchingStatus::Inconclusive {
            reason: format!("only {} dyadic scale(s) between 4hx and the graph extent", usable.len()),
        };
        return Ok(report);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    report.fit = fit_log_log(&xs, &ys);
    report.exponent = report.fit.map(|f| f.slope);
    report.status = match report.exponent {
        Some(p) if p >= required => PinchingStatus::Pass,
        Some(_) => PinchingStatus::Fail,
        None => PinchingStatus::Inconclusive { reason: "degenerate regression".into() },
    };
    Ok(report)
}

/// Space-time normal at one free-boundary sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalSample {
    pub node: usize,
    pub x: Point,
    pub h: f64,
    pub grad: Point,
    pub grad_norm: f64,
    /// Forward time difference from the first positive level.
    pub ut_plus: f64,
    /// `(∇u, u_t) / |(∇u, u_t)|`; the last used entry is the time component.
    pub nu: [f64; 3],
    /// Angle between `ν` and the time axis.
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct NormalField {
    pub dim: usize,
    pub samples: Vec<NormalSample>,
}

/// Unit normals `F(∇u, u_t)` with `F(ξ) = ξ / |ξ|` at every graph sample.
pub fn normal_field(g: &FreeBoundaryGraph, u: &SpaceTimeField) -> NormalField {
    let grid = u.grid();
    let dim = grid.dim();
    let mut samples = Vec::new();
    for s in g.valid_nodes() {
        let Some(np) = g.positive_level[s] else { continue };
        let grad = u.grad_at_time(s, g.h[s]);
        let ut_plus = u.dt_forward(np, s);
        let grad_norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        let mut xi = [0.0; 3];
        xi[..dim].copy_from_slice(&grad[..dim]);
        xi[dim] = ut_plus;
        let len = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nu = xi.map(|v| v / len);
        let theta = grad_norm.atan2(ut_plus);
        samples.push(NormalSample { node: s, x: g.x(s), h: g.h[s], grad, grad_norm, ut_plus, nu, theta });
    }
    NormalField { dim, samples }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalHolderReport {
    pub alpha: f64,
    /// `sup |ν_x - ν_y| / |x - y|^{α/2}`.
    pub seminorm: f64,
    /// `max (sin θ - |∇u| / sqrt(|∇u|² + c²))`; `≤ 1e-6` means the cone bound holds.
    pub cone_excess: f64,
    pub cone_pass: bool,
    pub samples: usize,
}

pub const CONE_TOL: f64 = 1e-6;

pub fn normal_holder_report(nf: &NormalField, alpha: f64, c: f64) -> Result<NormalHolderReport> {
    if nf.samples.len() < 2 {
        return Err(Error::EmptyRegion(format!("{} boundary sample(s); need 2", nf.samples.len())));
    }
    let samples: Vec<Sample> = nf
        .samples
        .iter()
        .map(|n| Sample { x: n.x, t: 0.0, value: n.nu[..=nf.dim].to_vec() })
        .collect();
    // spatial separation only: every sample carries the same time stamp
    let seminorm = holder_from_samples(&samples, nf.dim, alpha / 2.0, HolderMode::Isotropic)?.seminorm;
    let cone_excess = nf
        .samples
        .iter()
        .map(|n| n.theta.sin() - n.grad_norm / (n.grad_norm * n.grad_norm + c * c).sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(NormalHolderReport { alpha, seminorm, cone_excess, cone_pass: cone_excess <= CONE_TOL, samples: nf.samples.len() })
}

/// Writes `x[,x2],H,gradH...,|grad u|,ut_plus,theta` for every normal sample.
pub fn write_boundary_csv(g: &FreeBoundaryGraph, nf: &NormalField, mut w: impl Write) -> std::io::Result<()> {
    if nf.dim == 1 {
        writeln!(w, "x,H,gradH,grad_u_norm,ut_plus,theta")?;
    } else {
        writeln!(w, "x1,x2,H,gradH1,gradH2,grad_u_norm,ut_plus,theta")?;
    }
    for n in &nf.samples {
        let gh = g.grad_h[n.node].map_or([f64::NAN; 2], |v| v);
        if nf.dim == 1 {
            writeln!(w, "{},{},{},{},{},{}", n.x[0], n.h, gh[0], n.grad_norm, n.ut_plus, n.theta)?;
        } else {
            writeln!(w, "{},{},{},{},{},{},{},{}", n.x[0], n.x[1], n.h, gh[0], gh[1], n.grad_norm, n.ut_plus, n.theta)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(nx: usize, nt: usize, t0: f64, t1: f64, f: impl Fn(f64, f64) -> f64) -> SpaceTimeField {
        let g = Grid::new(1, -1.0, 1.0, nx, t0, t1, nt).unwrap();
        SpaceTimeField::from_fn(g, |p, t| f(p[0], t)).unwrap()
    }

    #[test]
    fn time_only_graph_is_flat() {
        let u = field(21, 41, -1.0, 1.0, |_, t| t.max(0.0));
        let g = extract_graph(&u, 0.0).unwrap();
        assert_eq!(g.len_valid(), 21);
        for s in g.valid_nodes() {
            assert!(g.h[s].abs() < 1e-12);
            assert!(g.grad_h[s].unwrap()[0].abs() < 1e-9);
        }
        let rep = lipschitz_report(&g, &u, 1.0, None).unwrap();
        assert!(rep.lip < 1e-9);
        assert_eq!(rep.sup_grad, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn cone_graph_has_unit_lipschitz_constant() {
        // t - |x| on a grid where every H(x) = |x| is a time level
        let u = field(41, 81, -0.5, 1.5, |x, t| t - x.abs());
        let g = extract_graph(&u, 1.0).unwrap();
        for s in g.valid_nodes() {
            let x = g.x(s)[0];
            assert!((g.h[s] - x.abs()).abs() < 1e-12);
            if x.abs() > 0.06 {
                assert!((g.grad_h[s].unwrap()[0] - x.signum()).abs() < 1e-9);
            }
        }
        let rep = lipschitz_report(&g, &u, 1.0, None).unwrap();
        assert!((rep.lip - 1.0).abs() < 1e-9);
        assert!((rep.sup_grad - 1.0).abs() < 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn second_sign_change_is_reported() {
        let u = field(11, 41, 0.0, 1.0, |_, t| (6.0 * t).sin() - 0.5);
        assert!(matches!(extract_graph(&u, 0.0), Err(Error::MultipleCrossings { .. })));
    }

    #[test]
    fn slope_precondition_is_enforced() {
        let u = field(11, 41, -1.0, 1.0, |_, t| t.max(0.0));
        assert!(matches!(extract_graph(&u, 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn positive_everywhere_gives_empty_graph() {
        let u = field(11, 11, 0.0, 1.0, |_, t| 1.0 + t);
        let g = extract_graph(&u, 1.0).unwrap();
        assert!(g.is_empty());
        assert!(lipschitz_report(&g, &u, 1.0, None).is_err());
    }

    #[test]
    fn parabola_pinches_with_exponent_two() {
        let u = field(401, 801, -0.2, 0.6, |x, t| t - x * x / 2.0);
        let g = extract_graph(&u, 1.0).unwrap();
        let rep = pinching_check(&g, &u, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(rep.status, PinchingStatus::Pass, "{rep:?}");
        assert!((rep.exponent.unwrap() - 2.0).abs() < 0.02);
    }

    #[test]
    fn kink_is_not_a_critical_point() {
        let u = field(201, 401, -0.5, 1.5, |x, t| t - x.abs());
        let g = extract_graph(&u, 1.0).unwrap();
        let rep = pinching_check(&g, &u, &[0.0, 0.0], 0.5).unwrap();
        assert!(matches!(rep.status, PinchingStatus::Inconclusive { .. }), "{rep:?}");
    }

    #[test]
    fn normals_of_a_tilted_plane_are_constant() {
        let u = field(41, 81, -1.0, 1.5, |x, t| t - 0.3 * x);
        let g = extract_graph(&u, 1.0).unwrap();
        let nf = normal_field(&g, &u);
        for n in &nf.samples {
            let len = n.nu.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((len - 1.0).abs() < 1e-12);
            assert!((n.theta - n.grad_norm.atan2(n.ut_plus)).abs() < 1e-10);
            assert!(n.theta >= 0.0 && n.theta < std::f64::consts::FRAC_PI_2);
        }
        let rep = normal_holder_report(&nf, 0.5, 1.0).unwrap();
        assert!(rep.seminorm < 1e-9);
        assert!(rep.cone_pass);
        // a larger c than the true slope breaks the cone bound
        assert!(!normal_holder_report(&nf, 0.5, 2.0).unwrap().cone_pass);
    }

    #[test]
    fn refinement_changes_graph_by_order_h() {
        let f = |x: f64, t: f64| t - 0.5 * (3.0 * x).sin().powi(2) + 0.1;
        let coarse = extract_graph(&field(41, 201, -0.5, 1.0, f), 1.0).unwrap();
        let fine = extract_graph(&field(81, 401, -0.5, 1.0, f), 1.0).unwrap();
        let d = coarse.sup_difference(&fine).unwrap();
        assert!(d < 0.05 * 1.5 / 200.0 * 10.0, "sup difference {d}");
    }

    #[test]
    fn csv_lists_every_sample() {
        let u = field(11, 21, -1.0, 1.5, |x, t| t - x.abs());
        let g = extract_graph(&u, 1.0).unwrap();
        let nf = normal_field(&g, &u);
        let mut buf = Vec::new();
        write_boundary_csv(&g, &nf, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + nf.samples.len());
        assert_eq!(text.lines().next().unwrap().split(',').count(), 6);
    }
}
