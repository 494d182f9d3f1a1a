use super::{Grid, Point, SpaceTimeField};
use crate::error::{Error, Result};

/// Spatial gradient, Hessian and time derivative of a field.
///
/// Space: second-order central differences at interior nodes, second-order
/// one-sided differences at the spatial boundary (the three-point second
/// difference is used there for `∂²`, which is still exact on quadratics).
/// Time: backward difference at levels `n >= 1`, forward difference at `n = 0`.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub grad: Vec<SpaceTimeField>,
    /// Upper triangle of `D²u`, ordered `(0,0), (0,1), (1,1)` in two dimensions.
    hess: Vec<SpaceTimeField>,
    pub ut: SpaceTimeField,
}

impl DerivativeBundle {
    pub fn hess(&self, i: usize, j: usize) -> &SpaceTimeField {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let dim = self.grad.len();
        let k = if dim == 1 { 0 } else { i + j };
        &self.hess[k]
    }

    pub fn laplacian_at(&self, n: usize, s: usize) -> f64 {
        (0..self.grad.len()).map(|k| self.hess(k, k).get(n, s)).sum()
    }
}

/// First derivative of a strided line, central inside and second-order one-sided at the ends.
#[inline]
pub(crate) fn d1(line: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if i == 0 {
        (-3.0 * line(0) + 4.0 * line(1) - line(2)) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * line(n - 1) - 4.0 * line(n - 2) + line(n - 3)) / (2.0 * h)
    } else {
        (line(i + 1) - line(i - 1)) / (2.0 * h)
    }
}

#[inline]
pub(crate) fn d2(line: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    let c = i.clamp(1, n - 2);
    (line(c - 1) - 2.0 * line(c) + line(c + 1)) / (h * h)
}

fn axis_derivative(grid: &Grid, level: &[f64], k: usize, second: bool, out: &mut [f64]) {
    let nx = grid.nx();
    let h = grid.hx();
    let stride = grid.stride(k);
    for s in 0..grid.n_space() {
        let i = grid.axes(s)[k];
        let base = s - i * stride;
        let line = |j: usize| level[base + j * stride];
        out[s] = if second { d2(line, i, nx, h) } else { d1(line, i, nx, h) };
    }
}

/// Finite-difference derivatives of `u`.
pub fn finite_differences(u: &SpaceTimeField) -> Result<DerivativeBundle> {
    let g = *u.grid();
    if g.nx() < 3 || g.nt() < 2 {
        return Err(Error::RejectedInput("finite differences need nx >= 3 and nt >= 2".into()));
    }
    if u.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::RejectedInput("field contains non-finite values".into()));
    }
    let ns = g.n_space();
    let dim = g.dim();
    let mut grad: Vec<Vec<f64>> = vec![vec![0.0; g.len()]; dim];
    let n_hess = dim * (dim + 1) / 2;
    let mut hess: Vec<Vec<f64>> = vec![vec![0.0; g.len()]; n_hess];
    let mut scratch = vec![0.0; ns];
    for n in 0..g.nt() {
        let level = u.level(n);
        let r = n * ns..(n + 1) * ns;
        for k in 0..dim {
            axis_derivative(&g, level, k, false, &mut grad[k][r.clone()]);
        }
        // pure second derivatives
        for k in 0..dim {
            let slot = 2 * k;
            axis_derivative(&g, level, k, true, &mut scratch);
            hess[slot][r.clone()].copy_from_slice(&scratch);
        }
        if dim == 2 {
            // mixed derivative as the axis-1 derivative of the axis-0 gradient
            let gx: Vec<f64> = grad[0][r.clone()].to_vec();
            axis_derivative(&g, &gx, 1, false, &mut scratch);
            hess[1][r.clone()].copy_from_slice(&scratch);
        }
    }
    let ht = g.ht();
    let mut ut = vec![0.0; g.len()];
    for n in 0..g.nt() {
        let (a, b) = if n == 0 { (1, 0) } else { (n, n - 1) };
        for s in 0..ns {
            ut[n * ns + s] = (u.get(a, s) - u.get(b, s)) / ht;
        }
    }
    Ok(DerivativeBundle {
        grad: grad.into_iter().map(|v| SpaceTimeField::from_raw(g, v)).collect(),
        hess: hess.into_iter().map(|v| SpaceTimeField::from_raw(g, v)).collect(),
        ut: SpaceTimeField::from_raw(g, ut),
    })
}

/// Pointwise derivative evaluation for fields too large to differentiate wholesale.
pub trait LocalDerivatives {
    fn grad_at(&self, n: usize, s: usize) -> Point;
    fn laplacian_at(&self, n: usize, s: usize) -> f64;
    fn dt_backward(&self, n: usize, s: usize) -> f64;
    fn dt_forward(&self, n: usize, s: usize) -> f64;
    fn dt_central(&self, n: usize, s: usize) -> f64;
    /// Gradient interpolated linearly in time at a spatial node.
    fn grad_at_time(&self, s: usize, t: f64) -> Point;
    /// Gradient interpolated multilinearly at an arbitrary space-time point.
    fn grad_sample(&self, p: &Point, t: f64) -> Option<Point>;
}

impl LocalDerivatives for SpaceTimeField {
    fn grad_at(&self, n: usize, s: usize) -> Point {
        let g = self.grid();
        let level = self.level(n);
        let mut out = [0.0; 2];
        for k in 0..g.dim() {
            let stride = g.stride(k);
            let i = g.axes(s)[k];
            let base = s - i * stride;
            out[k] = d1(|j| level[base + j * stride], i, g.nx(), g.hx());
        }
        out
    }

    fn laplacian_at(&self, n: usize, s: usize) -> f64 {
        let g = self.grid();
        let level = self.level(n);
        let mut acc = 0.0;
        for k in 0..g.dim() {
            let stride = g.stride(k);
            let i = g.axes(s)[k];
            let base = s - i * stride;
            acc += d2(|j| level[base + j * stride], i, g.nx(), g.hx());
        }
        acc
    }

    fn dt_backward(&self, n: usize, s: usize) -> f64 {
        if n == 0 {
            return self.dt_forward(0, s);
        }
        (self.get(n, s) - self.get(n - 1, s)) / self.grid().ht()
    }

    fn dt_forward(&self, n: usize, s: usize) -> f64 {
        if n + 1 >= self.grid().nt() {
            return self.dt_backward(n, s);
        }
        (self.get(n + 1, s) - self.get(n, s)) / self.grid().ht()
    }

    fn dt_central(&self, n: usize, s: usize) -> f64 {
        let nt = self.grid().nt();
        if n == 0 || n + 1 == nt {
            return if n == 0 { self.dt_forward(n, s) } else { self.dt_backward(n, s) };
        }
        (self.get(n + 1, s) - self.get(n - 1, s)) / (2.0 * self.grid().ht())
    }

    fn grad_at_time(&self, s: usize, t: f64) -> Point {
        let g = self.grid();
        let f = ((t - g.t0()) / g.ht()).clamp(0.0, (g.nt() - 1) as f64);
        let n0 = (f.floor() as usize).min(g.nt() - 2);
        let w = f - n0 as f64;
        let a = self.grad_at(n0, s);
        let b = self.grad_at(n0 + 1, s);
        [(1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]]
    }

    fn grad_sample(&self, p: &Point, t: f64) -> Option<Point> {
        let g = self.grid();
        if !g.contains_point(p) || !g.contains_time(t) {
            return None;
        }
        let dim = g.dim();
        let mut base = [0usize; 2];
        let mut w = [0.0f64; 2];
        for k in 0..dim {
            let f = ((p[k] - g.lo()) / g.hx()).clamp(0.0, (g.nx() - 1) as f64);
            let i = (f.floor() as usize).min(g.nx() - 2);
            base[k] = i;
            w[k] = f - i as f64;
        }
        let ft = ((t - g.t0()) / g.ht()).clamp(0.0, (g.nt() - 1) as f64);
        let n0 = (ft.floor() as usize).min(g.nt() - 2);
        let wt = ft - n0 as f64;
        let mut acc = [0.0; 2];
        for (dn, tw) in [(0usize, 1.0 - wt), (1, wt)] {
            for c in 0..(1usize << dim) {
                let mut axes = [0usize; 2];
                let mut cw = tw;
                for k in 0..dim {
                    let bit = (c >> k) & 1;
                    axes[k] = base[k] + bit;
                    cw *= if bit == 1 { w[k] } else { 1.0 - w[k] };
                }
                if cw == 0.0 {
                    continue;
                }
                let gr = self.grad_at(n0 + dn, g.space_index(axes));
                acc[0] += cw * gr[0];
                acc[1] += cw * gr[1];
            }
        }
        Some(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid1(nx: usize, nt: usize) -> Grid {
        Grid::new(1, -1.0, 1.0, nx, 0.0, 1.0, nt).unwrap()
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let g = grid1(11, 4);
        let u = SpaceTimeField::from_fn(g, |p, _| p[0] * p[0]).unwrap();
        let b = finite_differences(&u).unwrap();
        for n in 0..g.nt() {
            for s in 0..g.n_space() {
                assert!((b.hess(0, 0).get(n, s) - 2.0).abs() < 1e-10);
                assert!((b.grad[0].get(n, s) - 2.0 * g.coords(s)[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn time_linear_field() {
        let g = grid1(9, 5);
        let u = SpaceTimeField::from_fn(g, |_, t| t).unwrap();
        let b = finite_differences(&u).unwrap();
        assert!(b.ut.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(b.grad[0].values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_d_quadratic_exact_including_mixed() {
        let g = Grid::new(2, -1.0, 1.0, 7, 0.0, 1.0, 3).unwrap();
        let u = SpaceTimeField::from_fn(g, |p, t| 3.0 * p[0] * p[0] - p[0] * p[1] + 0.5 * p[1] * p[1] + 2.0 * t).unwrap();
        let b = finite_differences(&u).unwrap();
        for s in 0..g.n_space() {
            let p = g.coords(s);
            assert!((b.grad[0].get(1, s) - (6.0 * p[0] - p[1])).abs() < 1e-12);
            assert!((b.grad[1].get(1, s) - (-p[0] + p[1])).abs() < 1e-12);
            assert!((b.hess(0, 0).get(1, s) - 6.0).abs() < 1e-10);
            assert!((b.hess(0, 1).get(1, s) + 1.0).abs() < 1e-10);
            assert!((b.hess(1, 0).get(1, s) + 1.0).abs() < 1e-10);
            assert!((b.hess(1, 1).get(1, s) - 1.0).abs() < 1e-10);
            assert!((b.ut.get(2, s) - 2.0).abs() < 1e-12);
            assert!((u.laplacian_at(1, s) - 7.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_error_is_second_order() {
        // closed-form derivative oracle: d/dx sin(x) e^{-t} = cos(x) e^{-t}
        let err = |nx: usize| {
            let g = grid1(nx, 101);
            let u = SpaceTimeField::from_fn(g, |p, t| p[0].sin() * (-t).exp()).unwrap();
            let b = finite_differences(&u).unwrap();
            let mut e: f64 = 0.0;
            for n in 0..g.nt() {
                for i in 1..nx - 1 {
                    let exact = g.x(i).cos() * (-g.t(n)).exp();
                    e = e.max((b.grad[0].get(n, i) - exact).abs());
                }
            }
            (e, g.hx())
        };
        let (e1, h1) = err(101);
        let (e2, _) = err(201);
        // central difference error is h^2/6 |u'''| <= h^2/6
        assert!(e1 <= h1 * h1 / 6.0 * 1.0001, "e1 = {e1}");
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.05, "observed order {order}");
    }

    #[test]
    fn rejects_non_finite_input() {
        let g = grid1(5, 3);
        let mut v = vec![0.0; g.len()];
        v[3] = f64::INFINITY;
        let u = SpaceTimeField::from_raw(g, v);
        assert!(finite_differences(&u).is_err());
    }

    #[test]
    fn local_derivatives_agree_with_bundle() {
        let g = Grid::new(2, -1.0, 1.0, 9, 0.0, 1.0, 4).unwrap();
        let u = SpaceTimeField::from_fn(g, |p, t| (p[0] * 1.3).sin() * (p[1] - t).cos()).unwrap();
        let b = finite_differences(&u).unwrap();
        for n in 0..g.nt() {
            for s in 0..g.n_space() {
                let gr = u.grad_at(n, s);
                assert_eq!(gr[0], b.grad[0].get(n, s));
                assert_eq!(gr[1], b.grad[1].get(n, s));
                assert_eq!(u.dt_backward(n, s), b.ut.get(n, s));
                assert!((u.laplacian_at(n, s) - b.laplacian_at(n, s)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn bundle_is_linear(a in -3.0..3.0f64, c in -3.0..3.0f64, k in 0.5..4.0f64) {
            let g = Grid::new(2, -1.0, 1.0, 6, 0.0, 1.0, 3).unwrap();
            let u = SpaceTimeField::from_fn(g, |p, t| (k * p[0]).sin() + p[1] * t).unwrap();
            let v = SpaceTimeField::from_fn(g, |p, t| (p[0] * p[1]).exp() - t * t).unwrap();
            let w = u.lin_comb(a, &v, c).unwrap();
            let (bu, bv, bw) = (finite_differences(&u).unwrap(), finite_differences(&v).unwrap(), finite_differences(&w).unwrap());
            let scale = 1.0 + a.abs() + c.abs();
            for idx in 0..g.len() {
                let (n, s) = (idx / g.n_space(), idx % g.n_space());
                for k in 0..2 {
                    prop_assert!((bw.grad[k].get(n, s) - a * bu.grad[k].get(n, s) - c * bv.grad[k].get(n, s)).abs() < 1e-11 * scale * 50.0);
                }
                for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                    prop_assert!((bw.hess(i, j).get(n, s) - a * bu.hess(i, j).get(n, s) - c * bv.hess(i, j).get(n, s)).abs() < 1e-9 * scale);
                }
                prop_assert!((bw.ut.get(n, s) - a * bu.ut.get(n, s) - c * bv.ut.get(n, s)).abs() < 1e-11 * scale * 10.0);
            }
        }
    }
}
