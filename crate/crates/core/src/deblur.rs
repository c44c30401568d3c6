//! Degradation `v = Hu + η` and constrained TV restoration
//! `argmin TV(u) s.t. ‖Au - v‖² ≤ α` by a first-order primal-dual method.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{dot, norm2, Grid};
use crate::metrics::{psnr, spectral_norm, PowerOptions};
use crate::operator::LinearOperator;

/// `op(u)` plus white Gaussian noise of standard deviation `sigma`, drawn by
/// Box–Muller from a ChaCha stream seeded with `seed`.
pub fn degrade(op: &dyn LinearOperator, u: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut v = op.apply(u);
    if sigma > 0.0 {
        let noise = gaussian_noise(v.len(), seed);
        v.iter_mut().zip(noise).for_each(|(a, z)| *a += sigma * z);
    }
    v
}

/// `len` standard normal samples.
pub fn gaussian_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len + 1);
    while out.len() < len {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        out.push(r * t.cos());
        out.push(r * t.sin());
    }
    out.truncate(len);
    out
}

/// Periodic forward differences along rows (axis 0) and columns (axis 1).
pub fn gradient(u: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut g0 = vec![0.0; n * n];
    let mut g1 = vec![0.0; n * n];
    for i in 0..n {
        let ip = (i + 1) % n;
        for j in 0..n {
            let jp = (j + 1) % n;
            let here = u[i * n + j];
            g0[i * n + j] = u[ip * n + j] - here;
            g1[i * n + j] = u[i * n + jp] - here;
        }
    }
    (g0, g1)
}

/// Negative adjoint of [`gradient`].
pub fn divergence(p0: &[f64], p1: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let im = (i + n - 1) % n;
        for j in 0..n {
            let jm = (j + n - 1) % n;
            out[i * n + j] = p0[i * n + j] - p0[im * n + j] + p1[i * n + j] - p1[i * n + jm];
        }
    }
    out
}

/// Isotropic total variation.
pub fn tv(u: &[f64], n: usize) -> f64 {
    let (g0, g1) = gradient(u, n);
    g0.iter().zip(&g1).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Constraint slack: `α = (1 + ε) σ² N`.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Relative iterate change that ends the iterations.
    pub tol: f64,
    /// Primal and dual steps; `0.95 / L` each when `None`.
    pub steps: Option<(f64, f64)>,
    /// Power iterations used to estimate `L = ‖[∇; A]‖`.
    pub power_iters: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iter: 2000,
            tol: 1e-6,
            steps: None,
            power_iters: 50,
        }
    }
}

/// `α` for noise level `sigma` on `len` pixels; `1e-6 N` without noise.
pub fn constraint_level(sigma: f64, len: usize, epsilon: f64) -> f64 {
    if sigma > 0.0 {
        (1.0 + epsilon) * sigma * sigma * len as f64
    } else {
        1e-6 * len as f64
    }
}

#[derive(Debug, Clone)]
pub struct DeblurResult {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub alpha: f64,
    /// `‖Au - v‖²` at the returned iterate.
    pub residual: f64,
    pub steps: (f64, f64),
}

/// `[∇; A]` seen through `KᵀK = -Δ + AᵀA`, for the step-size estimate.
struct Stacked<'a> {
    op: &'a dyn LinearOperator,
    n: usize,
}

impl LinearOperator for Stacked<'_> {
    fn grid(&self) -> Grid {
        self.op.grid()
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        // returns KᵀK u; paired with an identity adjoint below
        let (g0, g1) = gradient(u, self.n);
        let mut out = divergence(&g0, &g1, self.n);
        out.iter_mut().for_each(|v| *v = -*v);
        let a = self.op.apply_adjoint(&self.op.apply(u));
        out.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        out
    }

    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

/// Estimate of `‖[∇; A]‖`.
pub fn stacked_norm(op: &dyn LinearOperator, iters: usize) -> f64 {
    let n = op.grid().n;
    let est = spectral_norm(
        &Stacked { op, n },
        &PowerOptions {
            tol: 0.0,
            max_iter: iters,
            ..Default::default()
        },
    );
    // the estimate is sqrt(λmax(KᵀK)) = ‖K‖
    est.value
}

/// Constrained TV restoration of `v` with forward model `op`.
pub fn tv_deblur(op: &dyn LinearOperator, v: &[f64], sigma: f64, params: &SolverParams) -> Result<DeblurResult> {
    let grid = op.grid();
    if grid.dim != 2 {
        return Err(Error::BadShape("TV restoration needs 2D images".into()));
    }
    grid.check(v)?;
    if sigma < 0.0 {
        return Err(Error::BadSpec(format!("noise level {sigma} must be >= 0")));
    }
    let n = grid.n;
    let len = grid.len();
    let alpha = constraint_level(sigma, len, params.epsilon);
    let radius = alpha.sqrt();
    let (tau, s) = match params.steps {
        Some(st) => st,
        None => {
            let l = stacked_norm(op, params.power_iters) * 1.01;
            (0.95 / l, 0.95 / l)
        }
    };
    let mut u = v.to_vec();
    let mut ubar = u.clone();
    let mut p0 = vec![0.0; len];
    let mut p1 = vec![0.0; len];
    let mut q = vec![0.0; len];
    let mut converged = false;
    let mut iterations = params.max_iter;
    for it in 1..=params.max_iter {
        // dual ascent on the TV term, projected onto pointwise unit balls
        let (g0, g1) = gradient(&ubar, n);
        for i in 0..len {
            let a = p0[i] + s * g0[i];
            let b = p1[i] + s * g1[i];
            let m = (a * a + b * b).sqrt().max(1.0);
            p0[i] = a / m;
            p1[i] = b / m;
        }
        // dual of the data ball: y - s proj_B(y / s)
        let au = op.apply(&ubar);
        let mut y: Vec<f64> = q.iter().zip(&au).map(|(qi, ai)| qi + s * ai).collect();
        let mut off: Vec<f64> = y.iter().zip(v).map(|(yi, vi)| yi / s - vi).collect();
        let dist = norm2(&off);
        if dist > radius {
            let shrink = radius / dist;
            off.iter_mut().for_each(|o| *o *= shrink);
        }
        for i in 0..len {
            y[i] -= s * (v[i] + off[i]);
        }
        q = y;
        // primal descent
        let div = divergence(&p0, &p1, n);
        let atq = op.apply_adjoint(&q);
        let mut change = 0.0;
        let mut size = 0.0;
        for i in 0..len {
            let next = u[i] + tau * (div[i] - atq[i]);
            ubar[i] = 2.0 * next - u[i];
            change += (next - u[i]) * (next - u[i]);
            size += next * next;
            u[i] = next;
        }
        if change.sqrt() <= params.tol * size.sqrt().max(f64::MIN_POSITIVE) {
            converged = true;
            iterations = it;
            break;
        }
    }
    let r: Vec<f64> = op.apply(&u).iter().zip(v).map(|(a, b)| a - b).collect();
    Ok(DeblurResult {
        u,
        iterations,
        converged,
        alpha,
        residual: dot(&r, &r),
        steps: (tau, s),
    })
}

/// One restoration of a deblurring experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DeblurRow {
    pub method: String,
    /// Stored coefficients over `N`; 0 for the exact operator.
    pub budget_over_n: f64,
    pub psnr: f64,
    pub iterations: usize,
    pub feasible: bool,
    pub wall_ms: f64,
}

/// Degrades `truth` with `exact` and restores it with every operator in
/// `models`; returns one row per model.
pub fn deblur_experiment(
    truth: &[f64],
    exact: &dyn LinearOperator,
    models: &[(String, f64, &dyn LinearOperator)],
    sigma: f64,
    seed: u64,
    params: &SolverParams,
) -> Result<Vec<DeblurRow>> {
    let v = degrade(exact, truth, sigma, seed);
    models
        .iter()
        .map(|(name, budget, op)| {
            let start = Instant::now();
            let res = tv_deblur(*op, &v, sigma, params)?;
            Ok(DeblurRow {
                method: name.clone(),
                budget_over_n: *budget,
                psnr: psnr(&res.u, truth, 1.0)?,
                iterations: res.iterations,
                feasible: res.residual <= 1.01 * res.alpha,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Identity;

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let grid = Grid::square(256).unwrap();
        let id = Identity(grid);
        let u = vec![0.5; grid.len()];
        assert_eq!(degrade(&id, &u, 0.0, 1), u);
        let v = degrade(&id, &u, 0.02, 7);
        assert_eq!(v, degrade(&id, &u, 0.02, 7));
        assert_ne!(v, degrade(&id, &u, 0.02, 8));
        let var = v.iter().map(|x| (x - 0.5).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(var > 0.95 * 0.0004 && var < 1.05 * 0.0004, "{var}");
    }

    #[test]
    fn gradient_divergence_adjointness() {
        for seed in 0..100 {
            let n = 8 + 8 * (seed as usize % 3);
            let u = random(n * n, seed);
            let p0 = random(n * n, 1000 + seed);
            let p1 = random(n * n, 2000 + seed);
            let (g0, g1) = gradient(&u, n);
            let lhs = dot(&g0, &p0) + dot(&g1, &p1);
            let rhs = -dot(&u, &divergence(&p0, &p1, n));
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv(&vec![0.3; 64], 8), 0.0);
        let n = 16;
        let h = 0.7;
        let edge: Vec<f64> = (0..n * n).map(|p| if p % n < 5 { h } else { 0.0 }).collect();
        assert!((tv(&edge, n) - 2.0 * n as f64 * h).abs() < 1e-12);
    }

    #[test]
    fn identity_without_noise_returns_the_data() {
        let grid = Grid::square(32).unwrap();
        let id = Identity(grid);
        let truth: Vec<f64> = (0..1024).map(|p| if (p / 32 / 8 + p % 32 / 8) % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let res = tv_deblur(&id, &truth, 0.0, &SolverParams::default()).unwrap();
        assert!(psnr(&res.u, &truth, 1.0).unwrap() > 60.0);
        assert!(res.residual <= 1.01 * res.alpha);
    }

    #[test]
    fn restoration_smooths_noise_and_is_feasible() {
        let grid = Grid::square(32).unwrap();
        let id = Identity(grid);
        let truth: Vec<f64> = (0..1024).map(|p| ((p / 32) as f64 / 31.0).min(0.8)).collect();
        let v = degrade(&id, &truth, 0.05, 3);
        let res = tv_deblur(&id, &v, 0.05, &SolverParams::default()).unwrap();
        assert!(tv(&res.u, 32) <= tv(&v, 32));
        assert!(res.residual <= 1.01 * res.alpha, "{} vs {}", res.residual, res.alpha);
        assert!(psnr(&res.u, &truth, 1.0).unwrap() > psnr(&v, &truth, 1.0).unwrap());
    }
}
