//! One-dimensional self-similar profiles `u(x, t) = -t f(x / sqrt(-t))`.
//!
//! Inside `|ξ| < √2` the profile is `c(-1 + ξ²/2)`; outside it solves
//! `-f'' + (ξ/2) f' - f = 1` with `f(√2) = 0`. The outer solution is computed
//! twice: as a power series about `√2` in double-double arithmetic and by
//! RK4 integration. Coefficient signs are certified exactly in `Q(√2)`.

use crate::error::{param, Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use twofloat::TwoFloat;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Initial slope of the outer profile at `√2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SlopeConvention {
    /// `f'(√2) = c`, as the outer initial condition is written.
    #[default]
    #[serde(rename = "literal")]
    Literal,
    /// `f'(√2) = √2 c`, the inner profile's slope at `√2`; makes `f` C¹.
    #[serde(rename = "matched")]
    Matched,
}

impl SlopeConvention {
    pub fn slope(self, c: f64) -> f64 {
        match self {
            SlopeConvention::Literal => c,
            SlopeConvention::Matched => SQRT_2 * c,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlopeConvention::Literal => "literal",
            SlopeConvention::Matched => "matched",
        }
    }
}

impl fmt::Display for SlopeConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlopeConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(SlopeConvention::Literal),
            "matched" => Ok(SlopeConvention::Matched),
            _ => Err(param("slope_convention", format!("expected `literal` or `matched`, got `{s}`"))),
        }
    }
}

/// `c(-1 + ξ²/2)`.
pub fn inner_profile(c: f64, xi: f64) -> f64 {
    c * (-1.0 + 0.5 * xi * xi)
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(param("c", format!("must be positive and finite, got {c}")));
    }
    Ok(())
}

fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// Taylor coefficients of the outer profile about `√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSolution {
    pub c: f64,
    pub convention: SlopeConvention,
    coeffs: Vec<TwoFloat>,
    /// `a_{N+1}`, kept for the truncation estimate.
    next: TwoFloat,
}

/// `a_{n+2}` from `a_n` and `a_{n+1}`, for `n ≥ 1`.
fn recursion_step(n: usize, an: TwoFloat, an1: TwoFloat) -> TwoFloat {
    let nf = n as f64;
    let lhs = dd(nf / 2.0 - 1.0) * an + twofloat::consts::FRAC_1_SQRT_2 * dd(nf + 1.0) * an1;
    // divide by the exact f64 integer: twofloat's TwoFloat / TwoFloat path
    // loses the low word
    lhs / ((nf + 2.0) * (nf + 1.0))
}

/// `a_0..a_order` with `a_0 = 0`, `a_1` from the slope convention,
/// `a_2 = (√2/4) a_1 - 1/2` and the three-term recursion beyond.
pub fn series_coefficients(c: f64, order: usize, convention: SlopeConvention) -> Result<SeriesSolution> {
    check_c(c)?;
    if order < 4 {
        return Err(param("order", format!("must be at least 4, got {order}")));
    }
    let a1 = match convention {
        SlopeConvention::Literal => dd(c),
        SlopeConvention::Matched => twofloat::consts::SQRT_2 * dd(c),
    };
    let a2 = twofloat::consts::SQRT_2 * a1 / 4.0 - dd(0.5);
    let mut coeffs = vec![dd(0.0), a1, a2];
    for n in 1..order {
        let v = recursion_step(n, coeffs[n], coeffs[n + 1]);
        coeffs.push(v);
    }
    let next = coeffs.pop().expect("order + 2 coefficients computed");
    debug_assert_eq!(coeffs.len(), order + 1);
    let a3 = f64::from(coeffs[3]);
    let a4 = f64::from(coeffs[4]);
    assert!((a3 + SQRT_2 / 12.0).abs() < 1e-14, "a_3 = {a3}");
    assert!((a4 + 1.0 / 48.0).abs() < 1e-14, "a_4 = {a4}");
    Ok(SeriesSolution { c, convention, coeffs, next })
}

impl SeriesSolution {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, n: usize) -> f64 {
        f64::from(self.coeffs[n])
    }

    pub fn coeff_dd(&self, n: usize) -> TwoFloat {
        self.coeffs[n]
    }

    pub fn coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|&a| f64::from(a)).collect()
    }

    /// Largest `|(n/2-1) a_n + (√2/2)(n+1) a_{n+1} - (n+2)(n+1) a_{n+2}|`
    /// relative to the size of its terms, over `1 ≤ n ≤ N-2`.
    pub fn recursion_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 1..self.order() - 1 {
            let nf = n as f64;
            let t1 = dd(nf / 2.0 - 1.0) * self.coeffs[n];
            let t2 = twofloat::consts::FRAC_1_SQRT_2 * dd(nf + 1.0) * self.coeffs[n + 1];
            let t3 = dd((nf + 2.0) * (nf + 1.0)) * self.coeffs[n + 2];
            let scale = f64::from(t1.abs()).max(f64::from(t2.abs())).max(f64::from(t3.abs()));
            if scale > 0.0 {
                worst = worst.max(f64::from((t1 + t2 - t3).abs()) / scale);
            }
        }
        worst
    }

    /// First index `n ≥ 3` with `a_n ≥ 0`, in double-double.
    pub fn first_nonnegative_tail(&self) -> Option<usize> {
        (3..=self.order()).find(|&n| !(f64::from(self.coeffs[n]) < 0.0))
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,a_n")?;
        for (n, a) in self.coeffs.iter().enumerate() {
            writeln!(w, "{n},{:e}", f64::from(*a))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub x: f64,
    pub value: f64,
    /// Ten times the first omitted term.
    pub error_estimate: f64,
    /// Set when the estimate exceeds the requested tolerance.
    pub flagged: bool,
}

/// Horner evaluation of the truncated series at `x ≥ √2`.
pub fn evaluate_series(s: &SeriesSolution, x: f64, tol: f64) -> Result<SeriesValue> {
    if !(x >= SQRT_2) {
        return Err(param("x", format!("series is evaluated for x ≥ √2, got {x}")));
    }
    // the f64 nearest √2 stands for √2, so `x = SQRT_2` evaluates to exactly a_0
    let z = TwoFloat::new_add(x, -SQRT_2);
    let mut acc = dd(0.0);
    for a in s.coeffs.iter().rev() {
        acc = acc * z + *a;
    }
    let zf = f64::from(z);
    let error_estimate = 10.0 * (f64::from(s.next) * zf.powi(s.order() as i32 + 1)).abs();
    Ok(SeriesValue { x, value: f64::from(acc), error_estimate, flagged: !(error_estimate <= tol) })
}

/// Exact element `p + q√2` of `Q(√2)`.
#[derive(Debug, Clone, PartialEq)]
struct Surd {
    p: BigRational,
    q: BigRational,
}

impl Surd {
    fn rational(p: BigRational) -> Self {
        Surd { p, q: BigRational::zero() }
    }

    fn scale(&self, k: &BigRational) -> Self {
        Surd { p: &self.p * k, q: &self.q * k }
    }

    /// Multiply by `√2 / 2`.
    fn half_sqrt2(&self) -> Self {
        Surd { p: self.q.clone(), q: &self.p / BigRational::from_integer(BigInt::from(2)) }
    }

    fn add(&self, o: &Surd) -> Self {
        Surd { p: &self.p + &o.p, q: &self.q + &o.q }
    }

    /// Sign of `p + q√2`: compares `p²` with `2q²` when the signs differ.
    fn signum(&self) -> i8 {
        let sp = sign_of(&self.p);
        let sq = sign_of(&self.q);
        if sq == 0 || sp == sq {
            return if sp != 0 { sp } else { sq };
        }
        if sp == 0 {
            return sq;
        }
        let p2 = &self.p * &self.p;
        let q2 = &self.q * &self.q * BigRational::from_integer(BigInt::from(2));
        match p2.cmp(&q2) {
            std::cmp::Ordering::Greater => sp,
            std::cmp::Ordering::Less => sq,
            std::cmp::Ordering::Equal => 0,
        }
    }

    fn to_f64(&self) -> f64 {
        use num_traits::ToPrimitive;
        self.p.to_f64().unwrap_or(f64::NAN) + SQRT_2 * self.q.to_f64().unwrap_or(f64::NAN)
    }
}

fn sign_of(x: &BigRational) -> i8 {
    if x.is_positive() {
        1
    } else if x.is_negative() {
        -1
    } else {
        0
    }
}

/// Outcome of the exact sign check of `a_3..a_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCertificate {
    pub c: f64,
    pub convention: SlopeConvention,
    pub order: usize,
    /// First `n ≥ 3` with `a_n ≥ 0`; `None` certifies `a_n < 0` throughout.
    pub first_violation: Option<usize>,
    /// Largest relative gap between the exact and the double-double coefficients.
    pub max_relative_gap: f64,
}

impl SignCertificate {
    pub fn all_negative(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Runs the recursion in exact `Q(√2)` arithmetic with `c` taken as the
/// exact rational value of the given double, and records signs of `a_3..a_N`.
pub fn certify_negative_coefficients(c: f64, order: usize, convention: SlopeConvention) -> Result<SignCertificate> {
    let series = series_coefficients(c, order, convention)?;
    let cr = BigRational::from_float(c).ok_or_else(|| param("c", "not representable"))?;
    let a1 = match convention {
        SlopeConvention::Literal => Surd::rational(cr),
        SlopeConvention::Matched => Surd { p: BigRational::zero(), q: cr },
    };
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    // (√2/4) a1 = (1/2)(√2/2) a1
    let a2 = a1.half_sqrt2().scale(&half).add(&Surd::rational(-half.clone()));
    let mut a: Vec<Surd> = vec![Surd::rational(BigRational::zero()), a1, a2];
    for n in 1..order - 1 {
        let k1 = BigRational::new(BigInt::from(n as i64 - 2), BigInt::from(2));
        let k2 = BigRational::from_integer(BigInt::from(n as i64 + 1));
        let denom = BigRational::from_integer(BigInt::from(((n + 2) * (n + 1)) as i64));
        let next = a[n].scale(&k1).add(&a[n + 1].half_sqrt2().scale(&k2)).scale(&denom.recip());
        a.push(next);
    }
    let first_violation = (3..=order).find(|&n| a[n].signum() >= 0);
    let mut gap: f64 = 0.0;
    for (n, exact) in a.iter().enumerate().skip(1) {
        let e = exact.to_f64();
        let d = series.coeff(n);
        if e.is_finite() && e != 0.0 {
            gap = gap.max(((e - d) / e).abs());
        }
    }
    Ok(SignCertificate { c, convention, order, first_violation, max_relative_gap: gap })
}

/// RK4 samples of the outer profile on a uniform grid starting at `√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeProfile {
    pub c: f64,
    pub convention: SlopeConvention,
    pub h: f64,
    pub xs: Vec<f64>,
    pub f: Vec<f64>,
    pub fp: Vec<f64>,
}

#[inline]
fn rhs(x: f64, f: f64, g: f64) -> (f64, f64) {
    (g, 0.5 * x * g - f - 1.0)
}

fn rk4(x: f64, f: f64, g: f64, h: f64) -> (f64, f64) {
    let (k1f, k1g) = rhs(x, f, g);
    let (k2f, k2g) = rhs(x + 0.5 * h, f + 0.5 * h * k1f, g + 0.5 * h * k1g);
    let (k3f, k3g) = rhs(x + 0.5 * h, f + 0.5 * h * k2f, g + 0.5 * h * k2g);
    let (k4f, k4g) = rhs(x + h, f + h * k3f, g + h * k3g);
    (f + h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f), g + h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g))
}

pub const MAX_STEP: f64 = 1e-3;

/// Integrates `f'' = (x/2) f' - f - 1` from `f(√2) = 0` with the slope given
/// by `convention`, using steps of at most `h` up to `x_max`.
pub fn ode_integrate(c: f64, x_max: f64, h: f64, convention: SlopeConvention) -> Result<OdeProfile> {
    check_c(c)?;
    if !(h > 0.0 && h <= MAX_STEP) {
        return Err(param("h", format!("need 0 < h ≤ {MAX_STEP}, got {h}")));
    }
    if !(x_max > SQRT_2 && x_max.is_finite()) {
        return Err(param("x_max", format!("must exceed √2, got {x_max}")));
    }
    let steps = ((x_max - SQRT_2) / h).ceil() as usize;
    let h = (x_max - SQRT_2) / steps as f64;
    let mut xs = Vec::with_capacity(steps + 1);
    let mut f = Vec::with_capacity(steps + 1);
    let mut fp = Vec::with_capacity(steps + 1);
    let (mut fv, mut gv) = (0.0, convention.slope(c));
    xs.push(SQRT_2);
    f.push(fv);
    fp.push(gv);
    for k in 0..steps {
        let x = SQRT_2 + k as f64 * h;
        let (nf, ng) = rk4(x, fv, gv, h);
        if !(nf.abs() < 1e300 && ng.abs() < 1e300) {
            return Err(Error::Overflow { last_x: x });
        }
        fv = nf;
        gv = ng;
        xs.push(SQRT_2 + (k + 1) as f64 * h);
        f.push(fv);
        fp.push(gv);
    }
    Ok(OdeProfile { c, convention, h, xs, f, fp })
}

impl OdeProfile {
    pub fn x_max(&self) -> f64 {
        *self.xs.last().expect("at least one sample")
    }

    /// `(f, f')` at `x` by one RK4 substep from the sample at or left of `x`.
    pub fn eval(&self, x: f64) -> Option<(f64, f64)> {
        if !(x >= SQRT_2 && x <= self.x_max() + 1e-12) {
            return None;
        }
        let k = (((x - SQRT_2) / self.h).floor() as usize).min(self.xs.len() - 1);
        let dx = x - self.xs[k];
        if dx == 0.0 {
            return Some((self.f[k], self.fp[k]));
        }
        Some(rk4(self.xs[k], self.f[k], self.fp[k], dx))
    }

    pub fn value(&self, x: f64) -> Option<f64> {
        self.eval(x).map(|p| p.0)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x,f")?;
        for (x, f) in self.xs.iter().zip(&self.f) {
            writeln!(w, "{x},{f:e}")?;
        }
        Ok(())
    }
}

/// Largest `x` such that the series agrees with the ODE samples to `tol` on
/// all of `[√2, x]`.
pub fn convergence_window(s: &SeriesSolution, ode: &OdeProfile, tol: f64) -> f64 {
    let mut last = SQRT_2;
    for (x, f) in ode.xs.iter().zip(&ode.f) {
        match evaluate_series(s, *x, f64::INFINITY) {
            Ok(v) if (v.value - f).abs() <= tol => last = *x,
            _ => break,
        }
    }
    last
}

/// `max |series - ODE|` over `samples` equispaced points of `[a, b]`.
pub fn series_ode_gap(s: &SeriesSolution, ode: &OdeProfile, a: f64, b: f64, samples: usize) -> Result<f64> {
    if !(a >= SQRT_2 && b > a && b <= ode.x_max()) || samples < 2 {
        return Err(param("window", format!("[{a}, {b}] must lie in [√2, {}] with at least two samples", ode.x_max())));
    }
    let mut gap: f64 = 0.0;
    for k in 0..samples {
        let x = a + (b - a) * k as f64 / (samples - 1) as f64;
        let f = ode.value(x).ok_or_else(|| param("x", format!("{x} outside the ODE profile")))?;
        gap = gap.max((evaluate_series(s, x, f64::INFINITY)?.value - f).abs());
    }
    Ok(gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativityVerdict {
    #[serde(rename = "negativity confirmed")]
    Confirmed,
    #[serde(rename = "not found below X_max")]
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativityReport {
    pub c: f64,
    pub convention: SlopeConvention,
    pub x_max: f64,
    /// First zero of the outer profile beyond `√2`.
    pub x_zero: Option<f64>,
    /// Whether every sample past `x_zero` is negative.
    pub stays_negative: bool,
    pub verdict: NegativityVerdict,
}

pub const BISECTION_TOL: f64 = 1e-8;

/// Locates the first sign change of the outer profile and bisects it to
/// [`BISECTION_TOL`].
pub fn negativity_finder(c: f64, x_max: f64, convention: SlopeConvention) -> Result<NegativityReport> {
    let ode = ode_integrate(c, x_max, MAX_STEP, convention)?;
    let crossing = (1..ode.f.len()).find(|&k| ode.f[k - 1] > 0.0 && ode.f[k] <= 0.0);
    let Some(k) = crossing else {
        return Ok(NegativityReport { c, convention, x_max, x_zero: None, stays_negative: false, verdict: NegativityVerdict::NotFound });
    };
    let (mut lo, mut hi) = (ode.xs[k - 1], ode.xs[k]);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let v = rk4(ode.xs[k - 1], ode.f[k - 1], ode.fp[k - 1], mid - ode.xs[k - 1]).0;
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let stays_negative = ode.f[k + 1..].iter().all(|&v| v < 0.0);
    Ok(NegativityReport {
        c,
        convention,
        x_max,
        x_zero: Some(0.5 * (lo + hi)),
        stays_negative,
        verdict: NegativityVerdict::Confirmed,
    })
}

/// Inner parabola glued to the outer solution at `√2`.
#[derive(Debug, Clone)]
pub struct ProfilePair {
    pub c: f64,
    pub series: SeriesSolution,
    pub outer: OdeProfile,
}

impl ProfilePair {
    pub fn new(c: f64, order: usize, x_max: f64, convention: SlopeConvention) -> Result<Self> {
        Ok(ProfilePair {
            c,
            series: series_coefficients(c, order, convention)?,
            outer: ode_integrate(c, x_max, MAX_STEP, convention)?,
        })
    }

    /// `f(|ξ|)`: inner parabola below `√2`, ODE solution above.
    pub fn value(&self, xi: f64) -> Option<f64> {
        let a = xi.abs();
        if a < SQRT_2 {
            Some(inner_profile(self.c, a))
        } else {
            self.outer.value(a)
        }
    }

    /// `u(x, t) = -t f(x / sqrt(-t))` for `t < 0`.
    pub fn self_similar(&self, x: f64, t: f64) -> Option<f64> {
        if !(t < 0.0) {
            return None;
        }
        self.value(x / (-t).sqrt()).map(|f| -t * f)
    }

    /// Mismatch of the one-sided slopes at `√2`.
    pub fn slope_jump(&self) -> f64 {
        self.outer.fp[0] - SQRT_2 * self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CS: [f64; 3] = [0.1, 1.0, 10.0];

    #[test]
    fn low_order_coefficients_match_closed_forms() {
        for c in CS {
            let s = series_coefficients(c, 10, SlopeConvention::Literal).unwrap();
            assert_eq!(s.coeff(0), 0.0);
            assert_eq!(s.coeff(1), c);
            let a2 = SQRT_2 / 4.0 * c - 0.5;
            assert!((s.coeff(2) - a2).abs() <= 2.0 * f64::EPSILON * a2.abs().max(c), "{}", s.coeff(2));
            assert!((s.coeff(3) + SQRT_2 / 12.0).abs() < 1e-15);
            assert!((s.coeff(4) + 1.0 / 48.0).abs() < 1e-15);
        }
        let s = series_coefficients(1.0, 10, SlopeConvention::Literal).unwrap();
        assert!((s.coeff(2) + 0.146_446_609_406_726_2).abs() < 1e-15);
        let m = series_coefficients(1.0, 10, SlopeConvention::Matched).unwrap();
        assert!((m.coeff(1) - SQRT_2).abs() < 1e-16);
        assert!((m.coeff(3) + SQRT_2 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn order_and_c_preconditions() {
        assert!(series_coefficients(1.0, 3, SlopeConvention::Literal).is_err());
        assert!(series_coefficients(0.0, 10, SlopeConvention::Literal).is_err());
        assert!(series_coefficients(f64::NAN, 10, SlopeConvention::Literal).is_err());
    }

    #[test]
    fn recursion_residual_is_round_off() {
        for c in CS {
            let s = series_coefficients(c, 200, SlopeConvention::Literal).unwrap();
            assert!(s.recursion_residual() < 1e-28, "{}", s.recursion_residual());
        }
    }

    #[test]
    fn exact_sign_certificate_for_all_tested_slopes() {
        for conv in [SlopeConvention::Literal, SlopeConvention::Matched] {
            for c in CS {
                let cert = certify_negative_coefficients(c, 200, conv).unwrap();
                assert!(cert.all_negative(), "{cert:?}");
                let s = series_coefficients(c, 200, conv).unwrap();
                assert_eq!(s.first_nonnegative_tail(), None);
            }
        }
    }

    #[test]
    fn exact_and_double_double_agree_on_early_terms() {
        let cert = certify_negative_coefficients(1.0, 30, SlopeConvention::Literal).unwrap();
        assert!(cert.max_relative_gap < 1e-13, "{cert:?}");
    }

    #[test]
    fn integer_division_keeps_double_double_accuracy() {
        let third = dd(1.0) / 3.0;
        assert!(f64::from((third * dd(3.0) - dd(1.0)).abs()) < 1e-31);
    }

    #[test]
    fn surd_signs() {
        let r = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
        // 3 - 2√2 ≈ 0.17, 1 - √2 < 0, -7 + 5√2 ≈ 0.07
        assert_eq!(Surd { p: r(3, 1), q: r(-2, 1) }.signum(), 1);
        assert_eq!(Surd { p: r(1, 1), q: r(-1, 1) }.signum(), -1);
        assert_eq!(Surd { p: r(-7, 1), q: r(5, 1) }.signum(), 1);
        assert_eq!(Surd { p: r(0, 1), q: r(0, 1) }.signum(), 0);
    }

    #[test]
    fn series_at_expansion_point_is_zero() {
        let s = series_coefficients(1.0, 40, SlopeConvention::Literal).unwrap();
        let v = evaluate_series(&s, SQRT_2, 1e-12).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(!v.flagged);
        assert!(evaluate_series(&s, 1.0, 1e-12).is_err());
    }

    #[test]
    fn ode_start_is_consistent_with_a2() {
        // f''(√2) = (√2/2) f'(√2) - 1 = 2 a_2
        for c in CS {
            let p = ode_integrate(c, 2.0, 1e-3, SlopeConvention::Literal).unwrap();
            let (_, g) = rhs(SQRT_2, p.f[0], p.fp[0]);
            let s = series_coefficients(c, 6, SlopeConvention::Literal).unwrap();
            assert!((g / 2.0 - s.coeff(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn inner_profile_solves_homogeneous_equation() {
        for c in CS {
            for k in 0..50 {
                let x = k as f64 * 0.03;
                // f = c(-1 + x²/2): f' = c x, f'' = c
                let residual = -c + 0.5 * x * (c * x) - inner_profile(c, x);
                assert!(residual.abs() < 1e-12 * c.max(1.0));
            }
        }
        assert!(inner_profile(3.0, SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn series_and_ode_agree_near_expansion_point() {
        for conv in [SlopeConvention::Literal, SlopeConvention::Matched] {
            for c in CS {
                let s = series_coefficients(c, 60, conv).unwrap();
                let p = ode_integrate(c, SQRT_2 + 0.6, 1e-3, conv).unwrap();
                for k in 0..=50 {
                    let x = SQRT_2 + 0.01 * k as f64;
                    let sv = evaluate_series(&s, x, 1e-12).unwrap();
                    assert!(!sv.flagged);
                    let ov = p.value(x).unwrap();
                    assert!((sv.value - ov).abs() < 1e-8 * c.max(1.0), "c={c} x={x}: {} vs {ov}", sv.value);
                }
                assert!(convergence_window(&s, &p, 1e-6) >= SQRT_2 + 0.5);
            }
        }
    }

    #[test]
    fn negativity_found_for_all_slopes() {
        for conv in [SlopeConvention::Literal, SlopeConvention::Matched] {
            for c in CS {
                let r = negativity_finder(c, 20.0, conv).unwrap();
                assert_eq!(r.verdict, NegativityVerdict::Confirmed, "{r:?}");
                let x0 = r.x_zero.unwrap();
                assert!(x0 > SQRT_2 && x0 < 20.0);
                assert!(r.stays_negative);
                let p = ode_integrate(c, 20.0, 1e-3, conv).unwrap();
                assert!(p.value(x0 - 1e-6).unwrap() > 0.0 && p.value(x0 + 1e-6).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn short_horizon_reports_not_found() {
        let r = negativity_finder(1.0, 1.6, SlopeConvention::Literal).unwrap();
        assert_eq!(r.verdict, NegativityVerdict::NotFound);
        assert!(ode_integrate(1.0, 1.6, 0.01, SlopeConvention::Literal).is_err());
    }

    #[test]
    fn ode_overflow_is_reported() {
        match ode_integrate(1.0, 60.0, 1e-3, SlopeConvention::Literal) {
            Err(Error::Overflow { last_x }) => assert!(last_x > 20.0 && last_x < 60.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn self_similar_reconstruction() {
        let pair = ProfilePair::new(1.0, 60, 12.0, SlopeConvention::Matched).unwrap();
        assert!(pair.slope_jump().abs() < 1e-15);
        let x0 = negativity_finder(1.0, 20.0, SlopeConvention::Matched).unwrap().x_zero.unwrap();
        let u = |x: f64, t: f64| pair.self_similar(x, t).unwrap();
        let (hx, ht) = (1e-3, 1e-4);
        let mut checked = [0usize; 2];
        for i in 0..60 {
            for t in [-1.0f64, -0.7, -0.4] {
                let x = -3.0 + 0.1 * i as f64 + 0.0137;
                let xi = x.abs() / (-t).sqrt();
                // stay clear of the glue point, the zero of f, and the origin
                if (xi - SQRT_2).abs() < 0.05 || (xi - x0).abs() < 0.05 || x.abs() < 0.01 {
                    continue;
                }
                let ut = (u(x, t + ht) - u(x, t - ht)) / (2.0 * ht);
                let uxx = (u(x + hx, t) - 2.0 * u(x, t) + u(x - hx, t)) / (hx * hx);
                let expected = if xi < SQRT_2 { 0.0 } else { 1.0 };
                assert!((ut - uxx - expected).abs() < 1e-4, "x={x} t={t}: {}", ut - uxx);
                checked[(xi >= SQRT_2) as usize] += 1;
                for r in [0.5, 0.8] {
                    let scaled = u(r * x, r * r * t);
                    assert!((scaled - r * r * u(x, t)).abs() < 1e-12);
                }
            }
        }
        assert!(checked[0] > 10 && checked[1] > 10, "{checked:?}");
    }

    #[test]
    fn csv_tables() {
        let s = series_coefficients(1.0, 5, SlopeConvention::Literal).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    proptest! {
        #[test]
        fn a3_is_independent_of_slope(c in 1e-3f64..1e3) {
            let s = series_coefficients(c, 6, SlopeConvention::Literal).unwrap();
            prop_assert!((s.coeff(3) + SQRT_2 / 12.0).abs() < 1e-14);
        }

        #[test]
        fn negative_pairs_stay_negative(n in 2usize..400, a in -1e3f64..-1e-6, b in -1e3f64..-1e-6) {
            prop_assert!(recursion_step(n, dd(a), dd(b)) < dd(0.0));
        }
    }
}
