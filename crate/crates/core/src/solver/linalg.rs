//! Linear solves for `(I - ht Δ_h) u = b` with Dirichlet data on the box.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Constant tridiagonal system `(1 + 2λ) u_i - λ (u_{i-1} + u_{i+1}) = b_i`,
/// factored once and reused for every right-hand side.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lambda: f64,
    /// Modified super-diagonal of the forward sweep.
    cprime: Vec<f64>,
    /// Reciprocal pivots.
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(m: usize, lambda: f64) -> Self {
        let (diag, off) = (1.0 + 2.0 * lambda, -lambda);
        let mut cprime = vec![0.0; m];
        let mut inv_pivot = vec![0.0; m];
        let mut prev_c = 0.0;
        for i in 0..m {
            let pivot = diag - off * prev_c;
            inv_pivot[i] = 1.0 / pivot;
            prev_c = off / pivot;
            cprime[i] = prev_c;
        }
        Tridiagonal { lambda, cprime, inv_pivot }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let off = -self.lambda;
        let m = rhs.len();
        debug_assert_eq!(m, self.cprime.len());
        let mut prev = 0.0;
        for i in 0..m {
            prev = (rhs[i] - off * prev) * self.inv_pivot[i];
            rhs[i] = prev;
        }
        for i in (0..m.saturating_sub(1)).rev() {
            rhs[i] -= self.cprime[i] * rhs[i + 1];
        }
    }
}

/// Matrix-free conjugate gradients for the 2D operator on interior nodes.
#[derive(Debug, Clone)]
pub struct ImplicitLaplacian2d {
    /// Interior points per axis.
    m: usize,
    lambda: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    r: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    pub last_iterations: usize,
}

impl ImplicitLaplacian2d {
    pub fn new(m: usize, lambda: f64) -> Self {
        let len = m * m;
        ImplicitLaplacian2d {
            m,
            lambda,
            rel_tol: 1e-12,
            max_iter: 10 * len.max(100),
            r: vec![0.0; len],
            p: vec![0.0; len],
            ap: vec![0.0; len],
            last_iterations: 0,
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        let (lam, diag) = (self.lambda, 1.0 + 4.0 * self.lambda);
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                let mut nb = 0.0;
                if i > 0 {
                    nb += x[k - m];
                }
                if i + 1 < m {
                    nb += x[k + m];
                }
                if j > 0 {
                    nb += x[k - 1];
                }
                if j + 1 < m {
                    nb += x[k + 1];
                }
                out[k] = diag * x[k] - lam * nb;
            }
        }
    }

    /// Solves in place, using the incoming contents of `x` as the initial guess.
    /// Stops once the residual 2-norm is below `rel_tol · max(|b|, 1)`.
    pub fn solve(&mut self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let len = self.m * self.m;
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = self.rel_tol * bnorm.max(1.0);
        let mut ap = std::mem::take(&mut self.ap);
        self.apply(x, &mut ap);
        for k in 0..len {
            self.r[k] = b[k] - ap[k];
            self.p[k] = self.r[k];
        }
        let mut rr: f64 = self.r.iter().map(|v| v * v).sum();
        let mut it = 0;
        while rr.sqrt() > target {
            if it >= self.max_iter {
                self.ap = ap;
                return Err(Error::LinearSolver(format!(
                    "conjugate gradients stalled after {it} iterations at residual {:e}",
                    rr.sqrt()
                )));
            }
            self.apply(&self.p, &mut ap);
            let pap: f64 = self.p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                self.ap = ap;
                return Err(Error::LinearSolver(format!("non-positive curvature p·Ap = {pap:e}")));
            }
            let a = rr / pap;
            for k in 0..len {
                x[k] += a * self.p[k];
                self.r[k] -= a * ap[k];
            }
            let rr_new: f64 = self.r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for k in 0..len {
                self.p[k] = self.r[k] + beta * self.p[k];
            }
            rr = rr_new;
            it += 1;
        }
        self.ap = ap;
        self.last_iterations = it;
        Ok(())
    }
}

/// Backward-Euler diffusion step `(I - ht Δ_h)` on a grid, Dirichlet at the box boundary.
#[derive(Debug, Clone)]
pub enum ImplicitStep {
    OneD(Tridiagonal),
    TwoD(ImplicitLaplacian2d),
}

impl ImplicitStep {
    pub fn new(grid: &Grid) -> Self {
        let m = grid.nx() - 2;
        let lambda = grid.parabolic_ratio();
        match grid.dim() {
            1 => ImplicitStep::OneD(Tridiagonal::new(m, lambda)),
            _ => ImplicitStep::TwoD(ImplicitLaplacian2d::new(m, lambda)),
        }
    }

    /// Solves for interior values given the full right-hand side `b` (on every
    /// spatial node) and the boundary values already stored in `u`.
    /// `u`'s interior entries serve as the initial guess in two dimensions.
    pub fn solve(&mut self, grid: &Grid, b: &[f64], u: &mut [f64], scratch: &mut Vec<f64>, guess: &mut Vec<f64>) -> Result<()> {
        let nx = grid.nx();
        let m = nx - 2;
        match self {
            ImplicitStep::OneD(tri) => {
                let lam = tri.lambda();
                scratch.clear();
                scratch.extend_from_slice(&b[1..nx - 1]);
                scratch[0] += lam * u[0];
                scratch[m - 1] += lam * u[nx - 1];
                tri.solve_in_place(scratch);
                u[1..nx - 1].copy_from_slice(scratch);
            }
            ImplicitStep::TwoD(cg) => {
                let lam = cg.lambda;
                scratch.clear();
                guess.clear();
                for i in 1..nx - 1 {
                    for j in 1..nx - 1 {
                        let s = i * nx + j;
                        let mut v = b[s];
                        if i == 1 {
                            v += lam * u[s - nx];
                        }
                        if i == nx - 2 {
                            v += lam * u[s + nx];
                        }
                        if j == 1 {
                            v += lam * u[s - 1];
                        }
                        if j == nx - 2 {
                            v += lam * u[s + 1];
                        }
                        scratch.push(v);
                        guess.push(u[s]);
                    }
                }
                cg.solve(scratch, guess)?;
                for i in 1..nx - 1 {
                    let row = (i - 1) * m;
                    u[i * nx + 1..i * nx + nx - 1].copy_from_slice(&guess[row..row + m]);
                }
            }
        }
        Ok(())
    }
}
