//! Rescaling at noncritical free-boundary points, the spatial hodograph
//! transform `u(x', v(x', x_n, t), t) = x_n`, and the diagnostics that go
//! with it: derivative identities between `u` and `v`, the coefficient matrix
//! `A(∇v)` and Hölder/sup measurements of `u_t`.

use crate::error::{param, Error, Result};
use crate::grid::{discrete_holder_norm, finite_differences, visit, Grid, HolderMode, LocalDerivatives, ParabolicCylinder, Point, SpaceTimeField};
use crate::stats::{fit_log_log, LineFit};
use serde::{Deserialize, Serialize};

/// Scales attached to a free-boundary point with `|∇u| > 0`:
/// `r^α = |∇u|/M` and `ρ^{1-γ} = |∇u|/M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleParams {
    pub center: Point,
    pub t: f64,
    pub m: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub grad: Point,
    pub grad_norm: f64,
    pub r: f64,
    pub rho: f64,
}

impl RescaleParams {
    pub fn new(center: Point, t: f64, grad: Point, dim: usize, m: f64, alpha: f64, gamma: f64) -> Result<Self> {
        if !(m > 1.0 && m.is_finite()) {
            return Err(param("M", format!("must exceed 1, got {m}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(param("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        if !(gamma > 0.0 && gamma < 1.0 - alpha) {
            return Err(param("gamma", format!("must lie in (0, 1 - alpha) = (0, {}), got {gamma}", 1.0 - alpha)));
        }
        let grad_norm = grad[..dim].iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(grad_norm > 0.0 && grad_norm.is_finite()) {
            return Err(Error::Degenerate { node: 0, level: 0, value: grad_norm });
        }
        let ratio = grad_norm / m;
        Ok(RescaleParams {
            center,
            t,
            m,
            alpha,
            gamma,
            grad,
            grad_norm,
            r: ratio.powf(1.0 / alpha),
            rho: ratio.powf(1.0 / (1.0 - gamma)),
        })
    }

    /// Measures `∇u` at `(center, t)` by interpolating the discrete gradient.
    pub fn at(u: &SpaceTimeField, center: Point, t: f64, m: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let grad = u
            .grad_sample(&center, t)
            .ok_or_else(|| Error::OutsideDomain(format!("({center:?}, {t}) is outside the grid")))?;
        Self::new(center, t, grad, u.grid().dim(), m, alpha, gamma)
    }

    /// Same point with a prescribed radius, for guard tests.
    pub fn with_radius(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    /// Right-hand side `r^{1-α}/M` of the rescaled equation on `{u_r > 0}`.
    pub fn forcing(&self) -> f64 {
        self.r.powf(1.0 - self.alpha) / self.m
    }
}

/// Orthogonal `R` with `R e_n = g/|g|`, by a Householder reflection (a sign
/// flip in one dimension).
pub fn householder_to_last_axis(g: &Point, dim: usize) -> [[f64; 2]; 2] {
    let norm = g[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut w = [0.0; 2];
    for k in 0..dim {
        w[k] = -g[k] / norm;
    }
    w[dim - 1] += 1.0;
    let ww: f64 = w[..dim].iter().map(|v| v * v).sum();
    let mut r = [[0.0; 2]; 2];
    for i in 0..dim {
        r[i][i] = 1.0;
    }
    if ww > 1e-30 {
        for i in 0..dim {
            for j in 0..dim {
                r[i][j] -= 2.0 * w[i] * w[j] / ww;
            }
        }
    }
    r
}

/// `u_r(y, s) = u(x + r R y, t + r² s) / (|∇u| r)` sampled on a grid over
/// `[-1, 1]^n × [-1, 1]`.
#[derive(Debug, Clone)]
pub struct RescaledField {
    pub field: SpaceTimeField,
    pub params: RescaleParams,
    pub rotation: [[f64; 2]; 2],
    /// Set when the rescaled spacing is finer than the source grid's.
    pub under_resolved: bool,
}

pub const RESCALED_NODES_MIN: usize = 5;
pub const RESCALED_NODES_MAX: usize = 65;

fn rescaled_count(extent_over_spacing: f64) -> usize {
    let k = (extent_over_spacing.floor() as usize).max(1);
    (2 * k + 1).clamp(RESCALED_NODES_MIN, RESCALED_NODES_MAX)
}

/// Resamples `u` (multilinearly) on the rescaled cylinder. The rescaled
/// spacing is kept no finer than the source spacing unless that would leave
/// fewer than five nodes per axis.
pub fn rescale(u: &SpaceTimeField, p: &RescaleParams) -> Result<RescaledField> {
    let g = *u.grid();
    let dim = g.dim();
    let r = p.r;
    if !(r > 0.0 && r.is_finite()) {
        return Err(param("r", format!("must be positive, got {r}")));
    }
    for k in 0..dim {
        if p.center[k] - 2.0 * r < g.lo() - 1e-12 || p.center[k] + 2.0 * r > g.hi() + 1e-12 {
            return Err(Error::OutsideDomain(format!("Q_2r around {:?} leaves the spatial box (r = {r})", p.center)));
        }
    }
    if p.t - 4.0 * r * r < g.t0() - 1e-12 || p.t + 4.0 * r * r > g.t1() + 1e-12 {
        return Err(Error::OutsideDomain(format!("Q_2r around t = {} leaves the time range (r = {r})", p.t)));
    }
    let nx = rescaled_count(r / g.hx());
    let nt = rescaled_count(r * r / g.ht());
    let under_resolved = 2.0 / (nx - 1) as f64 * r < g.hx() * (1.0 - 1e-12) || 2.0 / (nt - 1) as f64 * r * r < g.ht() * (1.0 - 1e-12);
    let rg = Grid::new(dim, -1.0, 1.0, nx, -1.0, 1.0, nt)?;
    let rot = householder_to_last_axis(&p.grad, dim);
    let scale = p.grad_norm * r;
    let mut values = Vec::with_capacity(rg.len());
    for n in 0..nt {
        let t = p.t + r * r * rg.t(n);
        for s in 0..rg.n_space() {
            let y = rg.coords(s);
            let mut x = p.center;
            for i in 0..dim {
                for j in 0..dim {
                    x[i] += r * rot[i][j] * y[j];
                }
            }
            let v = u.sample(&x, t).ok_or_else(|| Error::OutsideDomain(format!("rescaled node maps to {x:?}, t = {t}")))?;
            values.push(v / scale);
        }
    }
    Ok(RescaledField { field: SpaceTimeField::new(rg, values)?, params: *p, rotation: rot, under_resolved })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    /// Measured quantity (a maximum deviation or a maximum modulus).
    pub value: f64,
    /// Bound it is compared against, slack included.
    pub bound: f64,
    pub pass: bool,
}

impl PropertyCheck {
    fn upper(value: f64, bound: f64) -> Self {
        PropertyCheck { value, bound, pass: value <= bound }
    }
}

/// The five rescaling properties on `Q_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleReport {
    /// `|∇u_r(0,0) - e_n|`.
    pub gradient_at_origin: PropertyCheck,
    /// `max | |∇u_r| - 1 |` against `1/M`.
    pub gradient_band: PropertyCheck,
    /// `max |∂_i u_r|, i < n` against `2/M`.
    pub tangential: PropertyCheck,
    /// `max |u_r|` against `1 + 2/M`.
    pub sup: PropertyCheck,
    /// `max |(∂_s - Δ)u_r - (r^{1-α}/M) χ|` away from `{u_r = 0}`.
    pub equation: PropertyCheck,
    /// Allowance added to each bound: `0.5/M` plus the measured discretization
    /// error `|∇u_r(0,0) - e_n|`.
    pub slack: f64,
    pub nodes: usize,
    pub equation_nodes: usize,
}

impl RescaleReport {
    pub fn all_pass(&self) -> bool {
        [self.gradient_at_origin, self.gradient_band, self.tangential, self.sup, self.equation].iter().all(|c| c.pass)
    }
}

/// Checks the rescaled field against the gradient, tangential, sup and
/// equation bounds. The equation is checked with the forcing `r^{1-α}/M`
/// that the rescaling produces.
pub fn verify_rescale_properties(ur: &RescaledField) -> Result<RescaleReport> {
    let u = &ur.field;
    let g = *u.grid();
    let dim = g.dim();
    let m = ur.params.m;
    let origin_level = g.nearest_level(0.0);
    let origin_node = g.nearest_node(&[0.0, 0.0]);
    let g0 = u.grad_at(origin_level, origin_node);
    let mut dev: f64 = 0.0;
    for k in 0..dim {
        let target = if k == dim - 1 { 1.0 } else { 0.0 };
        dev = dev.max((g0[k] - target).abs());
    }
    let slack = 0.5 / m + dev;
    let gradient_at_origin = PropertyCheck::upper(dev, 0.5 / m);

    let q1 = ParabolicCylinder::new([0.0, 0.0], 0.0, 1.0)?;
    let (mut band, mut tang, mut sup) = (0.0f64, 0.0f64, 0.0f64);
    let nodes = visit(&g, &q1, |n, s| {
        let gr = u.grad_at(n, s);
        let norm = gr[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        band = band.max((norm - 1.0).abs());
        for k in 0..dim - 1 {
            tang = tang.max(gr[k].abs());
        }
        sup = sup.max(u.get(n, s).abs());
    });
    if nodes == 0 {
        return Err(Error::EmptyRegion("rescaled grid has no node inside Q_1".into()));
    }

    let forcing = ur.params.forcing();
    let ht = g.ht();
    let (mut eq, mut eq_nodes) = (0.0f64, 0usize);
    for n in 1..g.nt() {
        for s in g.interior_nodes() {
            let here = u.get(n, s);
            if here == 0.0 {
                continue;
            }
            let positive = here > 0.0;
            let a = g.axes(s);
            let mut same = u.get(n - 1, s) > 0.0 && positive || u.get(n - 1, s) < 0.0 && !positive;
            for k in 0..dim {
                for d in [-1i64, 1] {
                    let mut b = a;
                    b[k] = (a[k] as i64 + d) as usize;
                    let w = u.get(n, g.space_index(b));
                    same &= w > 0.0 && positive || w < 0.0 && !positive;
                }
            }
            if !same {
                continue;
            }
            let chi = if positive { 1.0 } else { 0.0 };
            let res = (here - u.get(n - 1, s)) / ht - u.laplacian_at(n, s) - forcing * chi;
            eq = eq.max(res.abs());
            eq_nodes += 1;
        }
    }
    Ok(RescaleReport {
        gradient_at_origin,
        gradient_band: PropertyCheck::upper(band, 1.0 / m + slack),
        tangential: PropertyCheck::upper(tang, 2.0 / m + slack),
        sup: PropertyCheck::upper(sup, 1.0 + 2.0 / m + slack),
        equation: PropertyCheck::upper(eq, slack),
        slack,
        nodes,
        equation_nodes: eq_nodes,
    })
}

/// `v` with `u(x', v(x', x_n, t), t) = x_n`, sampled on the grid of `u`.
#[derive(Debug, Clone)]
pub struct HodographField {
    /// `NaN` at invalid nodes.
    pub v: SpaceTimeField,
    pub valid: Vec<bool>,
    pub delta: f64,
    /// `max |u(x', v, t) - x_n|` over valid nodes, with `u` interpolated by
    /// the column cubic used for the inversion.
    pub roundtrip: f64,
}

impl HodographField {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Tolerance on the column inversion.
pub const INVERSION_TOL: f64 = 1e-10;

/// Cubic through the four column nodes around cell `k`, evaluated at `x`.
fn column_cubic(col: &[f64], lo: f64, h: f64, k: usize, x: f64) -> f64 {
    let n = col.len();
    if n < 4 {
        let f = (x - (lo + k as f64 * h)) / h;
        return col[k] + f * (col[k + 1] - col[k]);
    }
    let j0 = k.saturating_sub(1).min(n - 4);
    let xs: [f64; 4] = std::array::from_fn(|m| lo + (j0 + m) as f64 * h);
    let mut acc = 0.0;
    for m in 0..4 {
        let mut w = 1.0;
        for q in 0..4 {
            if q != m {
                w *= (x - xs[q]) / (xs[m] - xs[q]);
            }
        }
        acc += w * col[j0 + m];
    }
    acc
}

/// Root of `column_cubic(x) = target` in cell `k`, by secant steps
/// safeguarded with bisection.
fn invert_cell(col: &[f64], lo: f64, h: f64, k: usize, target: f64) -> (f64, f64) {
    let f = |x: f64| column_cubic(col, lo, h, k, x) - target;
    let (mut a, mut b) = (lo + k as f64 * h, lo + (k + 1) as f64 * h);
    let (mut fa, mut fb) = (col[k] - target, col[k + 1] - target);
    if fa == 0.0 {
        return (a, 0.0);
    }
    if fb == 0.0 {
        return (b, 0.0);
    }
    let mut x = a;
    let mut fx = fa;
    for _ in 0..200 {
        let secant = a - fa * (b - a) / (fb - fa);
        x = if secant > a && secant < b { secant } else { 0.5 * (a + b) };
        fx = f(x);
        if fx.abs() < 1e-14 || b - a < 1e-15 {
            break;
        }
        if (fx < 0.0) == (fa < 0.0) {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        // keep the bracket shrinking when secant steps stall at one end
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
    }
    (x, fx.abs())
}

/// Inverts `u` along the last spatial axis, column by column, using the
/// local cubic interpolant of each column (a piecewise-linear inverse would
/// put an `O(1)` error into the second differences of `v`). Every column must
/// satisfy the difference-quotient bound `∂_n u ≥ delta`; targets outside a
/// column's range are marked invalid.
pub fn hodograph_transform(u: &SpaceTimeField, delta: f64) -> Result<HodographField> {
    if !(delta > 0.0) {
        return Err(param("delta", format!("must be positive, got {delta}")));
    }
    let g = *u.grid();
    let dim = g.dim();
    let nx = g.nx();
    let h = g.hx();
    let columns = if dim == 1 { 1 } else { nx };
    let col_node = |c: usize, j: usize| if dim == 1 { j } else { g.space_index([c, j]) };
    let mut v = vec![f64::NAN; g.len()];
    let mut valid = vec![false; g.len()];
    let mut roundtrip: f64 = 0.0;
    let mut col = vec![0.0; nx];
    for n in 0..g.nt() {
        for c in 0..columns {
            for (j, cv) in col.iter_mut().enumerate() {
                *cv = u.get(n, col_node(c, j));
            }
            for j in 0..nx - 1 {
                if (col[j + 1] - col[j]) / h < delta {
                    return Err(Error::NotMonotone { node: col_node(c, j), level: n });
                }
            }
            for j in 0..nx {
                let target = g.x(j);
                if target < col[0] || target > col[nx - 1] {
                    continue;
                }
                let k = col.partition_point(|&w| w <= target).clamp(1, nx - 1) - 1;
                let (value, miss) = invert_cell(&col, g.lo(), h, k, target);
                let idx = g.index(n, col_node(c, j));
                v[idx] = value;
                valid[idx] = true;
                roundtrip = roundtrip.max(miss);
            }
        }
    }
    if roundtrip > INVERSION_TOL {
        return Err(Error::Precondition(format!("column inversion misses by {roundtrip:e}")));
    }
    Ok(HodographField { v: SpaceTimeField::from_raw(g, v), valid, delta, roundtrip })
}

/// Maximum residuals of the six first- and second-order relations between
/// the derivatives of `u` and `v`, with `u`'s derivatives taken at
/// `(x', v, t)`. Index `i` ranges over the tangential axis; the relations
/// involving it are `None` in one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// `u_n v_n - 1`.
    pub normal: f64,
    /// `u_i + u_n v_i`.
    pub tangential: Option<f64>,
    /// `u_t + u_n v_t`.
    pub time: f64,
    /// `u_nn v_n² + u_n v_nn`.
    pub normal_second: f64,
    /// `u_in v_n + u_nn v_i v_n + u_n v_in`.
    pub mixed_second: Option<f64>,
    /// `u_ii + 2 u_ni v_i + u_nn v_i² + u_n v_ii`.
    pub tangential_second: Option<f64>,
    pub nodes: usize,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        [Some(self.normal), self.tangential, Some(self.time), Some(self.normal_second), self.mixed_second, self.tangential_second]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

/// Interior nodes whose difference stencils only touch valid `v` values.
fn clean_nodes(h: &HodographField) -> Vec<(usize, usize)> {
    let g = *h.v.grid();
    let dim = g.dim();
    let mut out = Vec::new();
    for n in 0..g.nt() {
        let other = if n == 0 { 1 } else { n - 1 };
        'node: for s in g.interior_nodes() {
            let a = g.axes(s);
            let span: Vec<[usize; 2]> = if dim == 1 {
                (a[0] - 1..=a[0] + 1).map(|i| [i, 0]).collect()
            } else {
                (a[0] - 1..=a[0] + 1).flat_map(|i| (a[1] - 1..=a[1] + 1).map(move |j| [i, j])).collect()
            };
            for b in span {
                if !h.valid[g.index(n, g.space_index(b))] {
                    continue 'node;
                }
            }
            if !h.valid[g.index(other, s)] {
                continue;
            }
            out.push((n, s));
        }
    }
    out
}

fn filled(h: &HodographField) -> SpaceTimeField {
    let vals = h.v.values().iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
    SpaceTimeField::from_raw(*h.v.grid(), vals)
}

pub fn derivative_identities(u: &SpaceTimeField, h: &HodographField) -> Result<IdentityResiduals> {
    let g = *u.grid();
    if *h.v.grid() != g {
        return Err(Error::InvalidGrid("u and v live on different grids".into()));
    }
    let dim = g.dim();
    let nn = dim - 1;
    let du = finite_differences(u)?;
    let dv = finite_differences(&filled(h))?;
    let nodes = clean_nodes(h);
    if nodes.is_empty() {
        return Err(Error::EmptyRegion("no node with a fully valid hodograph stencil".into()));
    }
    let at = |f: &SpaceTimeField, p: &Point, t: f64| f.sample(p, t).expect("image point inside the grid");
    let mut r = [0.0f64; 6];
    for &(n, s) in &nodes {
        let t = g.t(n);
        let mut p = g.coords(s);
        p[nn] = h.v.get(n, s);
        let un = at(&du.grad[nn], &p, t);
        let unn = at(du.hess(nn, nn), &p, t);
        let ut = at(&du.ut, &p, t);
        let vn = dv.grad[nn].get(n, s);
        let vnn = dv.hess(nn, nn).get(n, s);
        let vt = dv.ut.get(n, s);
        r[0] = r[0].max((un * vn - 1.0).abs());
        r[2] = r[2].max((ut + un * vt).abs());
        r[3] = r[3].max((unn * vn * vn + un * vnn).abs());
        if dim == 2 {
            let ui = at(&du.grad[0], &p, t);
            let uin = at(du.hess(0, 1), &p, t);
            let uii = at(du.hess(0, 0), &p, t);
            let vi = dv.grad[0].get(n, s);
            let vin = dv.hess(0, 1).get(n, s);
            let vii = dv.hess(0, 0).get(n, s);
            r[1] = r[1].max((ui + un * vi).abs());
            r[4] = r[4].max((uin * vn + unn * vi * vn + un * vin).abs());
            r[5] = r[5].max((uii + 2.0 * uin * vi + unn * vi * vi + un * vii).abs());
        }
    }
    let opt = |x: f64| if dim == 2 { Some(x) } else { None };
    Ok(IdentityResiduals {
        normal: r[0],
        tangential: opt(r[1]),
        time: r[2],
        normal_second: r[3],
        mixed_second: opt(r[4]),
        tangential_second: opt(r[5]),
        nodes: nodes.len(),
    })
}

/// `A(∇v)`: `1/v_n` on the tangential diagonal, `-v_i/v_n²` in the last
/// row and column, `(1 + Σ v_i²)/v_n³` in the corner. In one dimension only
/// the corner `1/v_n³` remains.
pub fn coefficient_entries(grad_v: &Point, dim: usize) -> [[f64; 2]; 2] {
    let vn = grad_v[dim - 1];
    if dim == 1 {
        return [[1.0 / (vn * vn * vn), 0.0], [0.0, 0.0]];
    }
    let vi = grad_v[0];
    let off = -vi / (vn * vn);
    [[1.0 / vn, off], [off, (1.0 + vi * vi) / (vn * vn * vn)]]
}

/// Eigenvalues `(λ_min, λ_max)` of a symmetric matrix of size `dim ≤ 2`.
pub fn symmetric_eigen_bounds(a: &[[f64; 2]; 2], dim: usize) -> (f64, f64) {
    if dim == 1 {
        return (a[0][0], a[0][0]);
    }
    let mean = 0.5 * (a[0][0] + a[1][1]);
    let half = 0.5 * (a[0][0] - a[1][1]);
    let rad = (half * half + a[0][1] * a[0][1]).sqrt();
    (mean - rad, mean + rad)
}

/// Eigenvalue range of `A(∇v)` implied by `|∇u_r| ∈ [1 - 1/M, 1 + 1/M]` and
/// `|∂_i u_r| ≤ 2/M`, by interval evaluation of the entries (using
/// `1/v_n = u_n`, `v_i = -u_i/u_n`) and Gershgorin discs.
pub fn ellipticity_interval(m: f64, dim: usize) -> (f64, f64) {
    let hi_n = 1.0 + 1.0 / m;
    if dim == 1 {
        let lo_n = 1.0 - 1.0 / m;
        return (lo_n.powi(3), hi_n.powi(3));
    }
    let ui = 2.0 / m;
    let lo_n = ((1.0 - 1.0 / m).powi(2) - ui * ui).max(0.0).sqrt();
    // entries in u terms: u_n, u_n³ + u_i² u_n on the diagonal, u_i u_n off it
    let off = ui * hi_n;
    let d1 = (lo_n, hi_n);
    let d2 = (lo_n.powi(3), hi_n.powi(3) + ui * ui * hi_n);
    (d1.0.min(d2.0) - off, d1.1.max(d2.1) + off)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    pub dim: usize,
    /// `(level, spatial node, matrix)` at every clean node.
    pub entries: Vec<(usize, usize, [[f64; 2]; 2])>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl CoefficientMatrix {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "level,node,a11,a12,a22")?;
        for (n, s, a) in &self.entries {
            writeln!(w, "{n},{s},{},{},{}", a[0][0], a[0][1], a[1][1])?;
        }
        Ok(())
    }
}

/// Evaluates `A(∇v)` at every node with a clean difference stencil.
pub fn coefficient_matrix(h: &HodographField) -> Result<CoefficientMatrix> {
    let g = *h.v.grid();
    let dim = g.dim();
    let dv = finite_differences(&filled(h))?;
    let nodes = clean_nodes(h);
    if nodes.is_empty() {
        return Err(Error::EmptyRegion("no node with a fully valid hodograph stencil".into()));
    }
    let mut entries = Vec::with_capacity(nodes.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (n, s) in nodes {
        let mut gv = [0.0; 2];
        for k in 0..dim {
            gv[k] = dv.grad[k].get(n, s);
        }
        if !(gv[dim - 1] > 0.0) {
            return Err(Error::Degenerate { node: s, level: n, value: gv[dim - 1] });
        }
        let a = coefficient_entries(&gv, dim);
        let (l0, l1) = symmetric_eigen_bounds(&a, dim);
        lo = lo.min(l0);
        hi = hi.max(l1);
        entries.push((n, s, a));
    }
    Ok(CoefficientMatrix { dim, entries, lambda_min: lo, lambda_max: hi })
}

/// `sup |u_t|` over nodes of `region` with `u > ht`, by forward differences.
/// Differences that start on the zero set are excluded since `u_t` jumps
/// across the free boundary.
pub fn sup_forward_ut(u: &SpaceTimeField, region: &ParabolicCylinder) -> Option<f64> {
    let g = *u.grid();
    let ht = g.ht();
    let mut sup: Option<f64> = None;
    visit(&g, region, |n, s| {
        if n + 1 < g.nt() && u.get(n, s) > ht {
            let d = ((u.get(n + 1, s) - u.get(n, s)) / ht).abs();
            sup = Some(sup.map_or(d, |m: f64| m.max(d)));
        }
    });
    sup
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtHolderReport {
    pub region: ParabolicCylinder,
    pub alpha: f64,
    /// Smallest `|∇u|` over the region.
    pub min_grad: f64,
    /// Discrete `C^{α,α/2}` norm of `u_t` on the half cylinder.
    pub norm_half: f64,
    pub seminorm_half: f64,
    /// `sup |u_t|` on the full cylinder.
    pub sup_full: f64,
    /// `norm_half / sup_full`, the measured constant.
    pub ratio: f64,
}

/// Measures `‖u_t‖_{C^{α,α/2}(Q_{r/2})}` against `sup_{Q_r} |u_t|` on a
/// cylinder where `|∇u| ≥ delta`. `u_t` is the centered time difference.
/// The parabolic denominator `|x-y|^α + |t-s|^{α/2}` is used: with the
/// isotropic one, level-to-level noise in `u_t` is amplified by `ht^{-α}`.
pub fn ut_holder_diagnostic(u: &SpaceTimeField, region: &ParabolicCylinder, alpha: f64, delta: f64) -> Result<UtHolderReport> {
    let g = *u.grid();
    let mut min_grad = f64::INFINITY;
    let mut sup_full: f64 = 0.0;
    let count = visit(&g, region, |n, s| {
        let gr = u.grad_at(n, s);
        min_grad = min_grad.min((gr[0] * gr[0] + gr[1] * gr[1]).sqrt());
        sup_full = sup_full.max(u.dt_central(n, s).abs());
    });
    if count == 0 {
        return Err(Error::EmptyRegion("cylinder holds no node".into()));
    }
    if min_grad < delta {
        return Err(Error::Precondition(format!("region is not noncritical: min |∇u| = {min_grad:e} < {delta:e}")));
    }
    let half = ParabolicCylinder::new(region.center, region.t, 0.5 * region.r)?;
    let ut_vals: Vec<f64> = (0..g.nt())
        .flat_map(|n| (0..g.n_space()).map(move |s| (n, s)))
        .map(|(n, s)| u.dt_central(n, s))
        .collect();
    let ut = SpaceTimeField::new(g, ut_vals)?;
    let est = discrete_holder_norm(&ut, alpha, &half, HolderMode::Parabolic)?;
    let ratio = if sup_full > 0.0 { est.norm / sup_full } else { 1.0 };
    Ok(UtHolderReport { region: *region, alpha, min_grad, norm_half: est.norm, seminorm_half: est.seminorm, sup_full, ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoScalingRow {
    pub center: Point,
    pub t: f64,
    pub grad_norm: f64,
    pub rho: f64,
    pub sup_ut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoScalingReport {
    pub m: f64,
    pub gamma: f64,
    pub rows: Vec<RhoScalingRow>,
    /// Fit of `log sup_{Q_{ρ/2}} |u_t|` against `log ρ`.
    pub fit: Option<LineFit>,
    /// Passes when the fitted slope is at least `-γ - 0.2`.
    pub pass: bool,
}

/// `sup_{Q_{ρ/2}} |u_t|` against `ρ^{1-γ} = |∇u|/M` along a sequence of
/// free-boundary points.
pub fn rho_scaling(u: &SpaceTimeField, points: &[(Point, f64)], m: f64, alpha: f64, gamma: f64) -> Result<RhoScalingReport> {
    let mut rows = Vec::new();
    for &(c, t) in points {
        let p = match RescaleParams::at(u, c, t, m, alpha, gamma) {
            Ok(p) => p,
            Err(Error::Degenerate { .. }) => continue,
            Err(e) => return Err(e),
        };
        let q = ParabolicCylinder::new(c, t, 0.5 * p.rho)?;
        if let Some(sup) = sup_forward_ut(u, &q) {
            rows.push(RhoScalingRow { center: c, t, grad_norm: p.grad_norm, rho: p.rho, sup_ut: sup });
        }
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_ut).collect();
    let fit = fit_log_log(&xs, &ys);
    let pass = fit.is_some_and(|f| f.slope >= -gamma - 0.2);
    Ok(RhoScalingReport { m, gamma, rows, fit, pass })
}

/// Free-boundary point with the largest `|∇u|` whose doubled rescaling
/// cylinder stays inside the grid (space and time).
pub fn select_rescale_point(u: &SpaceTimeField, points: &[(Point, f64)], m: f64, alpha: f64, gamma: f64) -> Option<RescaleParams> {
    let g = *u.grid();
    let dim = g.dim();
    let mut best: Option<RescaleParams> = None;
    for &(x, t) in points {
        let Ok(p) = RescaleParams::at(u, x, t, m, alpha, gamma) else { continue };
        let r = p.r;
        let inside_time = t - 4.0 * r * r >= g.t0() && t + 4.0 * r * r <= g.t1();
        let inside_space = (0..dim).all(|k| x[k] - 2.0 * r >= g.lo() && x[k] + 2.0 * r <= g.hi());
        if inside_time && inside_space && best.is_none_or(|b| p.grad_norm > b.grad_norm) {
            best = Some(p);
        }
    }
    best
}

/// Rescaling, hodograph inversion, derivative identities and ellipticity of
/// `A(∇v)` at one free-boundary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HodographStudy {
    pub params: RescaleParams,
    pub rescaled_grid: Grid,
    pub rescale: RescaleReport,
    pub valid_nodes: usize,
    pub roundtrip: f64,
    pub identities: IdentityResiduals,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// A-priori eigenvalue interval implied by the gradient bounds.
    pub interval: (f64, f64),
    /// Rescaling properties hold, `λ_min > 0` and the eigenvalues lie in the
    /// a-priori interval.
    pub pass: bool,
}

pub fn hodograph_study(u: &SpaceTimeField, params: &RescaleParams, delta: f64) -> Result<(HodographStudy, CoefficientMatrix)> {
    let ur = rescale(u, params)?;
    let rescale_report = verify_rescale_properties(&ur)?;
    let h = hodograph_transform(&ur.field, delta)?;
    let identities = derivative_identities(&ur.field, &h)?;
    let cm = coefficient_matrix(&h)?;
    let interval = ellipticity_interval(params.m, ur.field.grid().dim());
    let pass = rescale_report.all_pass() && cm.lambda_min > 0.0 && cm.lambda_min >= interval.0 && cm.lambda_max <= interval.1;
    let study = HodographStudy {
        params: *params,
        rescaled_grid: *ur.field.grid(),
        rescale: rescale_report,
        valid_nodes: h.valid_count(),
        roundtrip: h.roundtrip,
        identities,
        lambda_min: cm.lambda_min,
        lambda_max: cm.lambda_max,
        interval,
        pass,
    };
    Ok((study, cm))
}
