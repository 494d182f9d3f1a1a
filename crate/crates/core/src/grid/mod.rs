//! Uniform space-time grids, parabolic cylinders and the finite-difference
//! machinery shared by every other module.
//!
//! Fields are stored row-major in `(time, x_1, x_2)` order: the spatial index
//! `s` of a node in two dimensions is `i1 * nx + i2`, so the last axis (`x_n`)
//! is the fastest-varying one.

mod diff;
mod holder;
pub mod io;

pub use diff::{finite_differences, DerivativeBundle, LocalDerivatives};
pub use holder::{discrete_holder_norm, holder_from_samples, HolderEstimate, HolderMode, Sample, EXACT_NODE_LIMIT, SUBSAMPLE_PAIRS};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Spatial point; in one dimension only the first coordinate is used.
pub type Point = [f64; 2];

pub fn space_dist(a: &Point, b: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Uniform grid on `[lo, hi]^dim × [t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lo: f64,
    hi: f64,
    nx: usize,
    t0: f64,
    t1: f64,
    nt: usize,
}

impl Grid {
    pub fn new(dim: usize, lo: f64, hi: f64, nx: usize, t0: f64, t1: f64, nt: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("spatial dimension {dim} not in {{1, 2}}")));
        }
        if nx < 3 || nt < 3 {
            return Err(Error::InvalidGrid(format!("need nx >= 3 and nt >= 3, got nx = {nx}, nt = {nt}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("bad spatial extent [{lo}, {hi}]")));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::InvalidGrid(format!("bad time interval [{t0}, {t1}]")));
        }
        let g = Grid { dim, lo, hi, nx, t0, t1, nt };
        if !g.parabolic_ratio().is_finite() {
            return Err(Error::InvalidGrid("parabolic ratio ht/hx^2 is not finite".into()));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lo(&self) -> f64 {
        self.lo
    }
    pub fn hi(&self) -> f64 {
        self.hi
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn t1(&self) -> f64 {
        self.t1
    }
    pub fn hx(&self) -> f64 {
        (self.hi - self.lo) / (self.nx - 1) as f64
    }
    pub fn ht(&self) -> f64 {
        (self.t1 - self.t0) / (self.nt - 1) as f64
    }
    pub fn parabolic_ratio(&self) -> f64 {
        self.ht() / (self.hx() * self.hx())
    }

    /// Number of spatial nodes per time level.
    pub fn n_space(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.n_space() * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.nx - 1) as f64
        }
    }

    pub fn t(&self, n: usize) -> f64 {
        if n + 1 == self.nt {
            self.t1
        } else {
            self.t0 + (self.t1 - self.t0) * n as f64 / (self.nt - 1) as f64
        }
    }

    /// Per-axis indices of spatial node `s` (axis 0 first).
    pub fn axes(&self, s: usize) -> [usize; 2] {
        match self.dim {
            1 => [s, 0],
            _ => [s / self.nx, s % self.nx],
        }
    }

    pub fn space_index(&self, axes: [usize; 2]) -> usize {
        match self.dim {
            1 => axes[0],
            _ => axes[0] * self.nx + axes[1],
        }
    }

    /// Stride of axis `k` in the spatial index.
    pub(crate) fn stride(&self, k: usize) -> usize {
        if self.dim == 2 && k == 0 {
            self.nx
        } else {
            1
        }
    }

    pub fn coords(&self, s: usize) -> Point {
        let a = self.axes(s);
        match self.dim {
            1 => [self.x(a[0]), 0.0],
            _ => [self.x(a[0]), self.x(a[1])],
        }
    }

    pub fn index(&self, n: usize, s: usize) -> usize {
        n * self.n_space() + s
    }

    pub fn is_boundary(&self, s: usize) -> bool {
        let a = self.axes(s);
        (0..self.dim).any(|k| a[k] == 0 || a[k] + 1 == self.nx)
    }

    /// Boundary nodes in ascending spatial index.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_space()).filter(|&s| self.is_boundary(s)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_space()).filter(|&s| !self.is_boundary(s)).collect()
    }

    /// Nearest spatial node to `p` (clamped into the domain).
    pub fn nearest_node(&self, p: &Point) -> usize {
        let mut axes = [0usize; 2];
        for k in 0..self.dim {
            let f = ((p[k] - self.lo) / self.hx()).round();
            axes[k] = f.clamp(0.0, (self.nx - 1) as f64) as usize;
        }
        self.space_index(axes)
    }

    pub fn nearest_level(&self, t: f64) -> usize {
        let f = ((t - self.t0) / self.ht()).round();
        f.clamp(0.0, (self.nt - 1) as f64) as usize
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        (0..self.dim).all(|k| p[k] >= self.lo - 1e-12 && p[k] <= self.hi + 1e-12)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t0 - 1e-12 && t <= self.t1 + 1e-12
    }
}

/// Scalar samples on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: Grid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::RejectedInput(format!(
                "field has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::RejectedInput(format!("non-finite value at flat index {k}")));
        }
        Ok(SpaceTimeField { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        SpaceTimeField { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        SpaceTimeField { grid, values: vec![0.0; grid.len()] }
    }

    /// Samples `f(x, t)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(&Point, f64) -> f64) -> Result<Self> {
        let ns = grid.n_space();
        let coords: Vec<Point> = (0..ns).map(|s| grid.coords(s)).collect();
        let mut values = Vec::with_capacity(grid.len());
        for n in 0..grid.nt() {
            let t = grid.t(n);
            values.extend(coords.iter().map(|p| f(p, t)));
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, n: usize, s: usize) -> f64 {
        self.values[n * self.grid.n_space() + s]
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let ns = self.grid.n_space();
        &self.values[n * ns..(n + 1) * ns]
    }

    pub(crate) fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let ns = self.grid.n_space();
        &mut self.values[n * ns..(n + 1) * ns]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Nodewise `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &SpaceTimeField, b: f64) -> Result<SpaceTimeField> {
        if self.grid != other.grid {
            return Err(Error::RejectedInput("fields live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(SpaceTimeField { grid: self.grid, values })
    }

    /// Multilinear interpolation at `(p, t)`; `None` outside the grid.
    pub fn sample(&self, p: &Point, t: f64) -> Option<f64> {
        let g = &self.grid;
        if !g.contains_point(p) || !g.contains_time(t) {
            return None;
        }
        let (n0, wt) = cell(t, g.t0, g.ht(), g.nt);
        let mut base = [0usize; 2];
        let mut w = [0.0f64; 2];
        for k in 0..g.dim {
            let (i, f) = cell(p[k], g.lo, g.hx(), g.nx);
            base[k] = i;
            w[k] = f;
        }
        let corners = 1usize << g.dim;
        let mut acc = 0.0;
        for (dn, tw) in [(0usize, 1.0 - wt), (1, wt)] {
            if tw == 0.0 {
                continue;
            }
            for c in 0..corners {
                let mut axes = [0usize; 2];
                let mut cw = tw;
                for k in 0..g.dim {
                    let bit = (c >> k) & 1;
                    axes[k] = base[k] + bit;
                    cw *= if bit == 1 { w[k] } else { 1.0 - w[k] };
                }
                if cw == 0.0 {
                    continue;
                }
                acc += cw * self.get(n0 + dn, g.space_index(axes));
            }
        }
        Some(acc)
    }
}

/// Lower cell index and fractional offset of `v` on a uniform axis.
fn cell(v: f64, start: f64, h: f64, n: usize) -> (usize, f64) {
    let f = ((v - start) / h).clamp(0.0, (n - 1) as f64);
    let mut i = f.floor() as usize;
    if i >= n - 1 {
        i = n - 2;
    }
    (i, f - i as f64)
}

/// `Q_r(x, t) = {(y, s) : |x - y| + |t - s|^{1/2} < r}`, open to both past and future.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub center: Point,
    pub t: f64,
    pub r: f64,
}

impl ParabolicCylinder {
    pub fn new(center: Point, t: f64, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(crate::error::param("r", format!("radius must be positive, got {r}")));
        }
        Ok(ParabolicCylinder { center, t, r })
    }

    /// Parabolic distance `|x - y| + |t - s|^{1/2}` from the center.
    pub fn distance(&self, y: &Point, s: f64, dim: usize) -> f64 {
        space_dist(&self.center, y, dim) + (self.t - s).abs().sqrt()
    }

    pub fn contains(&self, y: &Point, s: f64, dim: usize) -> bool {
        self.distance(y, s, dim) < self.r
    }
}

/// Grid nodes inside a cylinder, as `(time level, spatial index)` pairs.
#[derive(Debug, Clone)]
pub struct RegionView {
    pub nodes: Vec<(usize, usize)>,
    /// Set when the region holds no node although its center lies inside the grid.
    pub under_resolved: bool,
}

impl RegionView {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Calls `f(level, spatial index)` for every node of `grid` inside `region`
/// and returns the number of nodes visited.
pub fn visit(grid: &Grid, region: &ParabolicCylinder, mut f: impl FnMut(usize, usize)) -> usize {
    let dim = grid.dim();
    let r = region.r;
    // index-space bounding box of the cylinder, clamped to the grid
    let clamp_idx = |f: f64, n: usize| -> usize { f.clamp(0.0, (n - 1) as f64) as usize };
    let n_lo = clamp_idx(((region.t - r * r - grid.t0()) / grid.ht()).floor(), grid.nt());
    let n_hi = clamp_idx(((region.t + r * r - grid.t0()) / grid.ht()).ceil(), grid.nt());
    let mut ax_lo = [0usize; 2];
    let mut ax_hi = [0usize; 2];
    for k in 0..dim {
        ax_lo[k] = clamp_idx(((region.center[k] - r - grid.lo()) / grid.hx()).floor(), grid.nx());
        ax_hi[k] = clamp_idx(((region.center[k] + r - grid.lo()) / grid.hx()).ceil(), grid.nx());
    }
    let mut count = 0;
    for n in n_lo..=n_hi {
        let s_t = grid.t(n);
        if (region.t - s_t).abs().sqrt() >= r {
            continue;
        }
        for i1 in ax_lo[0]..=ax_hi[0] {
            for i2 in ax_lo[1]..=ax_hi[1] {
                let s = grid.space_index([i1, i2]);
                if region.contains(&grid.coords(s), s_t, dim) {
                    f(n, s);
                    count += 1;
                }
            }
        }
    }
    count
}

/// Nodes of `grid` lying in `region`.
pub fn restrict(grid: &Grid, region: &ParabolicCylinder) -> RegionView {
    let mut nodes = Vec::new();
    visit(grid, region, |n, s| nodes.push((n, s)));
    let under_resolved = nodes.is_empty() && grid.contains_point(&region.center) && grid.contains_time(region.t);
    RegionView { nodes, under_resolved }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(nx: usize, nt: usize) -> Grid {
        Grid::new(1, -1.0, 1.0, nx, -1.0, 1.0, nt).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_inverted() {
        assert!(Grid::new(1, 0.0, 1.0, 2, 0.0, 1.0, 5).is_err());
        assert!(Grid::new(1, 0.0, 1.0, 5, 0.0, 1.0, 2).is_err());
        assert!(Grid::new(3, 0.0, 1.0, 5, 0.0, 1.0, 5).is_err());
        assert!(Grid::new(1, 1.0, 0.0, 5, 0.0, 1.0, 5).is_err());
        let g = Grid::new(2, 0.0, 1.0, 5, 0.0, 1.0, 3).unwrap();
        assert_eq!(g.n_space(), 25);
        assert_eq!(g.hx(), 0.25);
        assert_eq!(g.ht(), 0.5);
        assert_eq!(g.parabolic_ratio(), 8.0);
    }

    #[test]
    fn field_rejects_non_finite() {
        let g = unit_grid(3, 3);
        let mut v = vec![0.0; g.len()];
        v[4] = f64::NAN;
        assert!(matches!(SpaceTimeField::new(g, v), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn two_d_indexing_round_trips() {
        let g = Grid::new(2, -1.0, 1.0, 7, 0.0, 1.0, 3).unwrap();
        for s in 0..g.n_space() {
            assert_eq!(g.space_index(g.axes(s)), s);
            assert_eq!(g.nearest_node(&g.coords(s)), s);
        }
        assert_eq!(g.boundary_nodes().len(), 24);
    }

    #[test]
    fn sample_reproduces_bilinear_functions() {
        let g = Grid::new(2, -1.0, 1.0, 9, 0.0, 2.0, 5).unwrap();
        let f = |p: &Point, t: f64| 1.0 + 2.0 * p[0] - p[1] + 0.5 * t + p[0] * p[1];
        let u = SpaceTimeField::from_fn(g, f).unwrap();
        for &(x, y, t) in &[(0.13, -0.71, 0.33), (1.0, 1.0, 2.0), (-1.0, 0.2, 0.0)] {
            let got = u.sample(&[x, y], t).unwrap();
            assert!((got - f(&[x, y], t)).abs() < 1e-12);
        }
        assert!(u.sample(&[1.5, 0.0], 0.5).is_none());
    }

    #[test]
    fn restrict_infinite_radius_takes_everything() {
        let g = unit_grid(11, 7);
        let q = ParabolicCylinder::new([0.0, 0.0], 0.0, f64::INFINITY).unwrap();
        assert_eq!(restrict(&g, &q).len(), g.len());
    }

    #[test]
    fn restrict_tiny_off_grid_cylinder_is_flagged() {
        let g = unit_grid(11, 11);
        let q = ParabolicCylinder::new([0.05, 0.0], 0.05, 0.01).unwrap();
        let view = restrict(&g, &q);
        assert!(view.is_empty());
        assert!(view.under_resolved);
    }

    #[test]
    fn restrict_matches_brute_force_count() {
        let g = unit_grid(41, 41);
        let q = ParabolicCylinder::new([0.0, 0.0], 0.0, 0.5).unwrap();
        let mut brute = 0;
        for n in 0..g.nt() {
            for i in 0..g.nx() {
                let (x, t) = (g.x(i), g.t(n));
                if x.abs() + t.abs().sqrt() < 0.5 {
                    brute += 1;
                }
            }
        }
        let view = restrict(&g, &q);
        assert_eq!(view.len(), brute);
        assert!(brute > 0);
    }

    #[test]
    fn restrict_grid_centered_cylinder_is_nonempty() {
        let g = unit_grid(21, 21);
        let q = ParabolicCylinder::new([g.x(3), 0.0], g.t(5), g.hx().max(g.ht().sqrt())).unwrap();
        assert!(!restrict(&g, &q).is_empty());
    }

    proptest! {
        #[test]
        fn membership_matches_formula(
            cx in -2.0..2.0f64, ct in -2.0..2.0f64, r in 0.01..3.0f64,
            yx in -2.0..2.0f64, yt in -2.0..2.0f64,
        ) {
            let q = ParabolicCylinder::new([cx, 0.0], ct, r).unwrap();
            let direct = (cx - yx).abs() + (ct - yt).abs().sqrt() < r;
            prop_assert_eq!(q.contains(&[yx, 0.0], yt, 1), direct);
            // symmetric in past and future
            let mirrored = q.contains(&[yx, 0.0], 2.0 * ct - yt, 1);
            prop_assert_eq!(mirrored, direct);
        }
    }

    #[test]
    fn membership_indicator_on_ten_thousand_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (t, s, r) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0));
            let q = ParabolicCylinder { center: c, t, r };
            let direct = ((c[0] - y[0]).powi(2) + (c[1] - y[1]).powi(2)).sqrt() + (t - s).abs().sqrt() < r;
            assert_eq!(q.contains(&y, s, 2), direct);
        }
    }
}
