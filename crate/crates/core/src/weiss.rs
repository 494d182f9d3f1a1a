//! Weiss-type energy `Ψ(r, u)` over the strips `R^n × (-4r², -r²)` weighted
//! by the backward heat kernel, its derivative formula, homogeneity defects
//! and the growth quantity `S_r`.

use crate::error::{param, Error, Result};
use crate::grid::{visit, LocalDerivatives, ParabolicCylinder, Point, SpaceTimeField};
use crate::stats::{fit_log_log, LineFit};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

/// Weight of the `max{u, 0}` term in the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WeissVariant {
    /// `|∇u|² - max{u, 0} + u²/t`.
    #[serde(rename = "paper-def")]
    PaperDefinition,
    /// `|∇u|² - 2 max{u, 0} + u²/t`, the weighting under which the derivative
    /// formula holds.
    #[default]
    #[serde(rename = "proof-2x")]
    ProofFactorTwo,
}

impl WeissVariant {
    pub fn max_weight(self) -> f64 {
        match self {
            WeissVariant::PaperDefinition => 1.0,
            WeissVariant::ProofFactorTwo => 2.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeissVariant::PaperDefinition => "paper-def",
            WeissVariant::ProofFactorTwo => "proof-2x",
        }
    }
}

impl fmt::Display for WeissVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeissVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-def" => Ok(WeissVariant::PaperDefinition),
            "proof-2x" => Ok(WeissVariant::ProofFactorTwo),
            _ => Err(param("weiss_variant", format!("expected `paper-def` or `proof-2x`, got `{s}`"))),
        }
    }
}

/// `G(x, t) = (4π(-t))^{-n/2} exp(-|x|² / (-4t))` for `t < 0`.
pub fn backward_heat_kernel(x: &Point, t: f64, dim: usize) -> Result<f64> {
    if !(t < 0.0) {
        return Err(Error::OutsideDomain(format!("backward heat kernel needs t < 0, got {t}")));
    }
    Ok(kernel(x, t, dim))
}

#[inline]
fn kernel(x: &Point, t: f64, dim: usize) -> f64 {
    let r2: f64 = x[..dim].iter().map(|v| v * v).sum();
    (4.0 * PI * (-t)).powf(-(dim as f64) / 2.0) * (r2 / (4.0 * t)).exp()
}

/// Spatial truncation radius per unit of `sqrt(4r²)`.
pub const CUTOFF_FACTOR: f64 = 12.0;

/// `R^n × (-4r², -r²)` truncated to `|x_k| ≤ r_cut`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicStrip {
    pub r: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub r_cut: f64,
}

impl ParabolicStrip {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(param("r", format!("must be positive, got {r}")));
        }
        Ok(ParabolicStrip { r, t_lo: -4.0 * r * r, t_hi: -r * r, r_cut: CUTOFF_FACTOR * 2.0 * r })
    }
}

/// Space-time point that plays the role of the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: Point,
    pub t: f64,
}

impl Anchor {
    pub const ORIGIN: Anchor = Anchor { x: [0.0, 0.0], t: 0.0 };
}

struct StripIntegral {
    value: f64,
    min_mass: f64,
    levels: usize,
}

/// Trapezoid quadrature of `integrand · G` over the strip, using every
/// `stride`-th node in space and time. The time integral is taken of the
/// piecewise-linear interpolant of the level integrals, clipped to the strip.
fn strip_integral(
    u: &SpaceTimeField,
    anchor: &Anchor,
    strip: &ParabolicStrip,
    stride: usize,
    integrand: &dyn Fn(usize, usize, f64, &Point) -> f64,
) -> Result<StripIntegral> {
    let g = u.grid();
    let dim = g.dim();
    let (a, b) = (anchor.t + strip.t_lo, anchor.t + strip.t_hi);
    if a < g.t0() - 1e-12 || b > g.t1() + 1e-12 {
        return Err(Error::OutsideDomain(format!(
            "strip [{a}, {b}] leaves the time range [{}, {}]",
            g.t0(),
            g.t1()
        )));
    }
    if strip.r * strip.r < 4.0 * g.ht() * stride as f64 {
        return Err(Error::Precondition(format!("r = {} is below the time resolution (r² < 4ht)", strip.r)));
    }
    // levels on the stride lattice bracketing [a, b]
    let ht = g.ht() * stride as f64;
    let last = (g.nt() - 1) / stride;
    let k_lo = (((a - g.t0()) / ht).floor().max(0.0) as usize).min(last);
    let k_hi = (((b - g.t0()) / ht).ceil().max(0.0) as usize).min(last);
    // spatial index window per axis on the stride lattice
    let hx = g.hx() * stride as f64;
    let last_x = (g.nx() - 1) / stride;
    let mut win = [(0usize, 0usize); 2];
    for k in 0..dim {
        let lo = ((anchor.x[k] - strip.r_cut - g.lo()) / hx).ceil().max(0.0) as usize;
        let hi = (((anchor.x[k] + strip.r_cut - g.lo()) / hx).floor().max(0.0) as usize).min(last_x);
        win[k] = (lo.min(hi), hi);
    }
    let weight = |k: usize, i: usize| -> f64 {
        let (lo, hi) = win[k];
        if lo == hi {
            0.0
        } else if i == lo || i == hi {
            0.5 * hx
        } else {
            hx
        }
    };
    let mut level_t = Vec::new();
    let mut level_val = Vec::new();
    let mut min_mass = f64::INFINITY;
    for kk in k_lo..=k_hi {
        let n = kk * stride;
        let t = g.t(n);
        let tau = t - anchor.t;
        if tau >= 0.0 {
            // only reachable when the strip's upper end touches the anchor level
            continue;
        }
        let mut acc = 0.0;
        let mut mass = 0.0;
        let (i2_lo, i2_hi) = if dim == 2 { win[1] } else { (0, 0) };
        for i1 in win[0].0..=win[0].1 {
            for i2 in i2_lo..=i2_hi {
                let w = weight(0, i1) * if dim == 2 { weight(1, i2) } else { 1.0 };
                if w == 0.0 {
                    continue;
                }
                let s = g.space_index([i1 * stride, i2 * stride]);
                let x = g.coords(s);
                let y = [x[0] - anchor.x[0], x[1] - anchor.x[1]];
                let gk = kernel(&y, tau, dim);
                mass += w * gk;
                acc += w * gk * integrand(n, s, tau, &y);
            }
        }
        min_mass = min_mass.min(mass);
        level_t.push(tau);
        level_val.push(acc);
    }
    if level_t.len() < 2 {
        return Err(Error::Precondition("strip holds fewer than two time levels".into()));
    }
    let (ta, tb) = (strip.t_lo, strip.t_hi);
    let mut value = 0.0;
    for w in 0..level_t.len() - 1 {
        let (t0, t1, f0, f1) = (level_t[w], level_t[w + 1], level_val[w], level_val[w + 1]);
        let (c0, c1) = (t0.max(ta), t1.min(tb));
        if c1 <= c0 {
            continue;
        }
        let lerp = |t: f64| f0 + (f1 - f0) * (t - t0) / (t1 - t0);
        value += 0.5 * (lerp(c0) + lerp(c1)) * (c1 - c0);
    }
    Ok(StripIntegral { value, min_mass, levels: level_t.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeissValue {
    pub r: f64,
    pub psi: f64,
    pub variant: WeissVariant,
    /// Smallest captured kernel mass over the strip's time levels.
    pub min_kernel_mass: f64,
    pub levels: usize,
    /// Same quadrature on every second node in space and time, when resolvable.
    pub psi_half_resolution: Option<f64>,
}

fn energy_integrand(u: &SpaceTimeField, weight: f64) -> impl Fn(usize, usize, f64, &Point) -> f64 + '_ {
    move |n, s, tau, _y| {
        let v = u.get(n, s);
        let gr = u.grad_at(n, s);
        gr[0] * gr[0] + gr[1] * gr[1] - weight * v.max(0.0) + v * v / tau
    }
}

/// `Ψ(r, u) = r^{-4} ∫_{T_r} (|∇u|² - k max{u,0} + u²/t) G`, coordinates
/// relative to `anchor`; `k` is 1 or 2 depending on `variant`.
pub fn weiss_energy(u: &SpaceTimeField, anchor: &Anchor, r: f64, variant: WeissVariant) -> Result<WeissValue> {
    let strip = ParabolicStrip::new(r)?;
    let f = energy_integrand(u, variant.max_weight());
    let fine = strip_integral(u, anchor, &strip, 1, &f)?;
    let scale = r.powi(-4);
    let half = strip_integral(u, anchor, &strip, 2, &f).ok().map(|q| q.value * scale);
    Ok(WeissValue {
        r,
        psi: fine.value * scale,
        variant,
        min_kernel_mass: fine.min_mass,
        levels: fine.levels,
        psi_half_resolution: half,
    })
}

/// `r^{-5} ∫_{T_r} (1/(-t)) (2t u_t + x·∇u - 2u)² G`; nonnegative by construction.
pub fn weiss_derivative_formula(u: &SpaceTimeField, anchor: &Anchor, r: f64) -> Result<f64> {
    let strip = ParabolicStrip::new(r)?;
    let dim = u.grid().dim();
    let f = |n: usize, s: usize, tau: f64, y: &Point| {
        let gr = u.grad_at(n, s);
        let radial: f64 = (0..dim).map(|k| y[k] * gr[k]).sum();
        let q = 2.0 * tau * u.dt_central(n, s) + radial - 2.0 * u.get(n, s);
        q * q / (-tau)
    };
    Ok(strip_integral(u, anchor, &strip, 1, &f)?.value * r.powi(-5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub r: f64,
    pub dr: f64,
    pub psi_minus: f64,
    pub psi_plus: f64,
    pub dpsi_fd: f64,
    pub dpsi_formula: f64,
    /// `|fd - formula| / max(|formula|, tiny)`.
    pub rel_err: f64,
    pub monotone: bool,
    pub variant: WeissVariant,
}

/// Centered difference of `Ψ` against the derivative formula at `r`.
pub fn weiss_derivative_check(u: &SpaceTimeField, anchor: &Anchor, r: f64, dr: f64, variant: WeissVariant, slope_tol: f64) -> Result<DerivativeCheck> {
    if !(dr > 0.0 && dr < r) {
        return Err(param("dr", format!("need 0 < dr < r, got dr = {dr}, r = {r}")));
    }
    let psi_minus = weiss_energy(u, anchor, r - dr, variant)?.psi;
    let psi_plus = weiss_energy(u, anchor, r + dr, variant)?.psi;
    let dpsi_fd = (psi_plus - psi_minus) / (2.0 * dr);
    let dpsi_formula = weiss_derivative_formula(u, anchor, r)?;
    let rel_err = (dpsi_fd - dpsi_formula).abs() / dpsi_formula.abs().max(1e-300);
    Ok(DerivativeCheck { r, dr, psi_minus, psi_plus, dpsi_fd, dpsi_formula, rel_err, monotone: dpsi_fd >= -slope_tol, variant })
}

/// `Ψ` sampled on a set of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeissCurve {
    /// Decreasing radii.
    pub rs: Vec<f64>,
    pub psi: Vec<f64>,
    /// Centered (one-sided at the ends) difference of `psi` in `r`.
    pub dpsi_fd: Vec<f64>,
    pub dpsi_formula: Vec<f64>,
    pub min_kernel_mass: f64,
    pub variant: WeissVariant,
}

impl WeissCurve {
    /// Smallest finite-difference slope.
    pub fn min_slope(&self) -> f64 {
        self.dpsi_fd.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "r,psi,dpsi_fd,dpsi_formula,variant")?;
        for k in 0..self.rs.len() {
            writeln!(w, "{},{},{},{},{}", self.rs[k], self.psi[k], self.dpsi_fd[k], self.dpsi_formula[k], self.variant)?;
        }
        Ok(())
    }
}

pub fn weiss_curve(u: &SpaceTimeField, anchor: &Anchor, rs: &[f64], variant: WeissVariant) -> Result<WeissCurve> {
    let mut rs = rs.to_vec();
    rs.sort_by(|a, b| b.total_cmp(a));
    rs.dedup();
    if rs.len() < 2 {
        return Err(param("rs", "need at least two distinct radii"));
    }
    let mut psi = Vec::new();
    let mut mass = f64::INFINITY;
    let mut formula = Vec::new();
    for &r in &rs {
        let v = weiss_energy(u, anchor, r, variant)?;
        mass = mass.min(v.min_kernel_mass);
        psi.push(v.psi);
        formula.push(weiss_derivative_formula(u, anchor, r)?);
    }
    let m = rs.len();
    let dpsi_fd = (0..m)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(m - 1));
            (psi[a] - psi[b]) / (rs[a] - rs[b])
        })
        .collect();
    Ok(WeissCurve { rs, psi, dpsi_fd, dpsi_formula: formula, min_kernel_mass: mass, variant })
}

/// `sup |u(rx, r²t) - r² u(x, t)| / (1 + r² sup|u|)` over grid nodes `(x, t)`
/// (relative to `anchor`) whose image `(rx, r²t)` also lies in the grid.
/// With `radius`, only nodes in `Q_radius(anchor)` are sampled.
pub fn homogeneity_defect(u: &SpaceTimeField, anchor: &Anchor, r: f64, radius: Option<f64>) -> Result<f64> {
    if !(r > 0.0) {
        return Err(param("r", format!("must be positive, got {r}")));
    }
    let g = *u.grid();
    let dim = g.dim();
    let region = ParabolicCylinder { center: anchor.x, t: anchor.t, r: radius.unwrap_or(f64::INFINITY) };
    let mut worst: f64 = 0.0;
    let mut sup_u: f64 = 0.0;
    let mut count = 0;
    visit(&g, &region, |n, s| {
        let x = g.coords(s);
        let mut img = anchor.x;
        for k in 0..dim {
            img[k] += r * (x[k] - anchor.x[k]);
        }
        let ti = anchor.t + r * r * (g.t(n) - anchor.t);
        if let Some(v) = u.sample(&img, ti) {
            let here = u.get(n, s);
            sup_u = sup_u.max(here.abs());
            worst = worst.max((v - r * r * here).abs());
            count += 1;
        }
    });
    if count == 0 {
        return Err(Error::EmptyRegion("no node has its rescaled image inside the grid".into()));
    }
    Ok(worst / (1.0 + r * r * sup_u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub rs: Vec<f64>,
    /// `S_r = sup_{Q_r(anchor)} u / r²`.
    pub s: Vec<f64>,
    /// `max S / min S`.
    pub spread: f64,
    /// Fit of `log S` against `log r`, when every `S` is positive.
    pub trend: Option<LineFit>,
}

/// `S_r = sup_{Q_1} u(rx, r²t) / r² = sup_{Q_r} u / r²` around `anchor`. The
/// sup over the open cylinder equals the max over its closure for continuous
/// `u`, so nodes on the rim are included.
pub fn growth_series(u: &SpaceTimeField, anchor: &Anchor, rs: &[f64]) -> Result<GrowthSeries> {
    let g = *u.grid();
    let dim = g.dim();
    let mut s_vals = Vec::new();
    for &r in rs {
        let q = ParabolicCylinder::new(anchor.x, anchor.t, r * (1.0 + 1e-9))?;
        let inside_space = (0..dim).all(|k| anchor.x[k] - r >= g.lo() - 1e-12 && anchor.x[k] + r <= g.hi() + 1e-12);
        let inside_time = anchor.t - r * r >= g.t0() - 1e-12 && anchor.t + r * r <= g.t1() + 1e-12;
        if !(inside_space && inside_time) {
            return Err(Error::OutsideDomain(format!("Q_{r} around the anchor leaves the grid")));
        }
        let mut sup = f64::NEG_INFINITY;
        visit(&g, &q, |n, s| sup = sup.max(u.get(n, s)));
        if !sup.is_finite() {
            return Err(Error::EmptyRegion(format!("Q_{r} holds no node")));
        }
        s_vals.push(sup / (r * r));
    }
    let max = s_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = s_vals.iter().copied().fold(f64::INFINITY, f64::min);
    let trend = if min > 0.0 { fit_log_log(rs, &s_vals) } else { None };
    Ok(GrowthSeries { rs: rs.to_vec(), s: s_vals, spread: max / min, trend })
}
