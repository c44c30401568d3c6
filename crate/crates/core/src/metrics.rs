//! Evaluation quantities: operator norms by power iteration, the weighted
//! `X -> 2` error, pSNR and operation counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{dot, norm2};
use crate::operator::LinearOperator;
use crate::par;
use crate::sparse::SparseTheta;
use crate::sparsify::SigmaWeights;
use crate::theta::{CoeffOperator, ThetaMatrix};
use crate::wavelet::Basis;

pub const POWER_SEED: u64 = 0xC0FFEE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    /// Stop once successive estimates differ by less than `tol` times the
    /// reference norm (or the current estimate when no reference is given).
    pub tol: f64,
    pub max_iter: usize,
    pub reference: Option<f64>,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            reference: None,
            seed: POWER_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of `op` by power iteration on `AᵀA`.
pub fn spectral_norm(op: &dyn LinearOperator, opts: &PowerOptions) -> SpectralEstimate {
    let len = op.grid().len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut prev = f64::NAN;
    for it in 1..=opts.max_iter {
        let y = op.apply_adjoint(&op.apply(&x));
        let lambda = dot(&x, &y).max(0.0);
        let est = lambda.sqrt();
        let ny = norm2(&y);
        let scale = opts.reference.unwrap_or(est);
        if ny == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        if (est - prev).abs() <= opts.tol * scale {
            return SpectralEstimate {
                value: est,
                iterations: it,
                converged: true,
            };
        }
        prev = est;
        x = y.into_iter().map(|v| v / ny).collect();
    }
    SpectralEstimate {
        value: prev,
        iterations: opts.max_iter,
        converged: false,
    }
}

/// `max_i ‖(Θ - S)^{(i)}‖₂ / σ_i`.
pub fn x_to_2_error(theta: &ThetaMatrix, sparse: &SparseTheta, sigma: &SigmaWeights) -> Result<f64> {
    let size = CoeffOperator::size(theta);
    if sparse.size() != size || sigma.len() != size {
        return Err(Error::BadShape(format!(
            "sizes {size}, {} and {} weights disagree",
            sparse.size(),
            sigma.len()
        )));
    }
    let per_col = par::map_range(size, |c| {
        let mut col = theta.column(c).to_vec();
        let (rows, vals) = sparse.column(c);
        for (&r, &v) in rows.iter().zip(vals) {
            col[r as usize] -= v;
        }
        norm2(&col) / sigma.values[c]
    });
    Ok(per_col.into_iter().fold(0.0, f64::max))
}

/// `10 log10(peak² N / ‖a - b‖²)`, `+∞` when the images are equal.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::BadShape(format!("images of {} and {} pixels", a.len(), b.len())));
    }
    if !(peak > 0.0) {
        return Err(Error::BadShape(format!("peak {peak} must be positive")));
    }
    let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak * a.len() as f64 / err).log10())
}

/// Multiply-adds of one forward transform of `basis`.
pub fn transform_ops(basis: &Basis) -> f64 {
    let grid = basis.grid();
    let taps = basis.filter().len() as f64;
    (0..basis.levels())
        .map(|level| {
            // every sample of the level passes through `taps` taps per axis
            let side = (grid.n >> level) as f64;
            taps * grid.dim as f64 * side.powi(grid.dim as i32)
        })
        .sum()
}

/// Cost of `idwt(S dwt(u))`: the number of stored coefficients, plus both
/// transforms when `transforms` is given.
pub fn opcount_sparse(sparse: &SparseTheta, transforms: Option<&Basis>) -> f64 {
    sparse.nnz() as f64 + transforms.map_or(0.0, |b| 2.0 * transform_ops(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::operator::{DenseMatrix, Identity};
    use crate::sparsify::Scheme;
    use crate::theta::{threshold_abs, Selection};

    fn random_matrix(rows: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix {
            grid: Grid::new(rows, 1).unwrap(),
            rows,
            data: (0..rows * rows).map(|_| rng.random::<f64>() - 0.5).collect(),
        }
    }

    #[test]
    fn identity_and_diagonal_norms() {
        let id = Identity(Grid::square(8).unwrap());
        let e = spectral_norm(&id, &PowerOptions::default());
        assert!((e.value - 1.0).abs() < 1e-8 && e.converged);
        let mut diag = DenseMatrix {
            grid: Grid::new(16, 1).unwrap(),
            rows: 16,
            data: vec![0.0; 256],
        };
        for i in 0..16 {
            diag.data[i * 17] = if i == 0 { 3.0 } else { 1.0 };
        }
        let e = spectral_norm(&diag, &PowerOptions::default());
        assert!((e.value - 3.0).abs() < 1e-8);
    }

    #[test]
    fn power_method_matches_svd() {
        for seed in 0..3 {
            let m = random_matrix(32, seed);
            let opts = PowerOptions {
                tol: 1e-12,
                max_iter: 5000,
                ..Default::default()
            };
            let est = spectral_norm(&m, &opts);
            let svd = nalgebra::DMatrix::from_row_slice(32, 32, &m.data).singular_values();
            let top = svd.iter().cloned().fold(0.0, f64::max);
            assert!((est.value - top).abs() < 1e-6 * top, "{} vs {top}", est.value);
            let t = DenseMatrix {
                grid: m.grid,
                rows: 32,
                data: (0..1024).map(|k| m.data[(k % 32) * 32 + k / 32]).collect(),
            };
            let est_t = spectral_norm(&t, &opts);
            assert!((est.value - est_t.value).abs() < 1e-6 * top);
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        let m = random_matrix(32, 4);
        let est = spectral_norm(
            &m,
            &PowerOptions {
                tol: 0.0,
                max_iter: 3,
                ..Default::default()
            },
        );
        assert!(!est.converged && est.iterations == 3 && est.value > 0.0);
    }

    fn theta8(seed: u64) -> ThetaMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = Basis::daubechies(Grid::new(8, 1).unwrap(), 3, 1).unwrap();
        ThetaMatrix::from_columns(&basis, (0..64).map(|_| rng.random::<f64>() - 0.5).collect(), "random")
            .unwrap()
    }

    #[test]
    fn x_to_2_definition() {
        let theta = theta8(1);
        let map = crate::wavelet::index_map(8, 3, 1).unwrap();
        let uniform = crate::sparsify::make_sigma(Scheme::Uniform, &map).unwrap();
        let dyadic = crate::sparsify::make_sigma(Scheme::Dyadic, &map).unwrap();
        assert_eq!(x_to_2_error(&theta, &theta.to_sparse(), &uniform).unwrap(), 0.0);
        let zero = SparseTheta::zero(8);
        let max_col = (0..8).map(|c| norm2(theta.column(c))).fold(0.0, f64::max);
        assert!((x_to_2_error(&theta, &zero, &uniform).unwrap() - max_col).abs() < 1e-15);

        let s = threshold_abs(&theta, Selection::Count(20));
        let value = x_to_2_error(&theta, &s, &dyadic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut lower = 0.0f64;
        for _ in 0..1000 {
            // z with ‖Σz‖₁ = 1
            let mut z: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
            let l1: f64 = z.iter().zip(&dyadic.values).map(|(v, s)| (v * s).abs()).sum();
            z.iter_mut().for_each(|v| *v /= l1);
            let a = theta.mul(&z);
            let b = s.mul(&z);
            let e = norm2(&crate::grid::sub(&a, &b));
            assert!(e <= value * (1.0 + 1e-12));
            lower = lower.max(e);
        }
        // vertices Σ⁻¹e_i attain the value
        let worst = (0..8)
            .map(|i| {
                let mut z = vec![0.0; 8];
                z[i] = 1.0 / dyadic.values[i];
                norm2(&crate::grid::sub(&theta.mul(&z), &s.mul(&z)))
            })
            .fold(0.0, f64::max);
        assert!((worst - value).abs() < 1e-12);
        assert!(lower <= value);
    }

    #[test]
    fn psnr_values() {
        let a = vec![0.3; 100];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..4096).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..4096).map(|_| rng.random()).collect();
        let mse = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 4096.0;
        assert!((psnr(&x, &y, 1.0).unwrap() - (-10.0 * mse.log10())).abs() < 1e-12);
        assert!(psnr(&x, &y[..10], 1.0).is_err());
        let far: Vec<f64> = a.iter().map(|v| v + 0.2).collect();
        assert!(psnr(&a, &far, 1.0).unwrap() < psnr(&a, &b, 1.0).unwrap());
    }

    #[test]
    fn opcounts() {
        let basis = Basis::daubechies(Grid::square(16).unwrap(), 2, 2).unwrap();
        let theta = ThetaMatrix::from_columns(&basis, vec![1.0; 256 * 256], "ones").unwrap();
        let s = threshold_abs(&theta, Selection::Count(30 * 256));
        assert_eq!(opcount_sparse(&s, None), 30.0 * 256.0);
        assert_eq!(opcount_sparse(&SparseTheta::zero(256), None), 0.0);
        assert!(opcount_sparse(&s, Some(&basis)) > 30.0 * 256.0);
    }
}
