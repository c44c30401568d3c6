//! Periodized separable discrete wavelet transform.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::wavelet::filters::{make_daubechies_filter, FilterPair};
use crate::wavelet::index::{IndexMap, WaveletIndex};

/// Layout metadata of a coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoeffMeta {
    pub n: usize,
    pub levels: usize,
    pub dim: usize,
}

/// Wavelet coefficients in subband-major order, coarse first.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub values: Vec<f64>,
    pub meta: CoeffMeta,
}

/// An orthonormal wavelet basis of `R^{n^d}`: filter, depth and index map.
#[derive(Debug, Clone)]
pub struct Basis {
    filter: FilterPair,
    map: Arc<IndexMap>,
}

impl Basis {
    pub fn new(grid: Grid, levels: usize, filter: FilterPair) -> Result<Self> {
        Ok(Self {
            filter,
            map: Arc::new(IndexMap::new(grid, levels)?),
        })
    }

    /// Daubechies basis with `order` vanishing moments.
    pub fn daubechies(grid: Grid, levels: usize, order: usize) -> Result<Self> {
        Self::new(grid, levels, make_daubechies_filter(order)?)
    }

    pub fn grid(&self) -> Grid {
        self.map.grid()
    }

    pub fn levels(&self) -> usize {
        self.map.levels()
    }

    pub fn filter(&self) -> &FilterPair {
        &self.filter
    }

    pub fn order(&self) -> usize {
        self.filter.vanishing_moments
    }

    pub fn index_map(&self) -> &IndexMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn meta(&self) -> CoeffMeta {
        CoeffMeta {
            n: self.grid().n,
            levels: self.levels(),
            dim: self.grid().dim,
        }
    }

    /// Analysis `Ψ*`: image -> coefficients.
    pub fn forward(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.grid().check(image)?;
        let mut buf = image.to_vec();
        self.analyze_in_place(&mut buf);
        let offsets = self.map.pyramid_offsets();
        Ok(offsets.iter().map(|&p| buf[p]).collect())
    }

    /// Synthesis `Ψ`: coefficients -> image.
    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.grid().check(coeffs)?;
        let mut buf = vec![0.0; coeffs.len()];
        for (&p, &c) in self.map.pyramid_offsets().iter().zip(coeffs) {
            buf[p] = c;
        }
        self.synthesize_in_place(&mut buf);
        Ok(buf)
    }

    /// `ψ_λ` sampled on the grid: the inverse transform of a unit coefficient.
    pub fn atom(&self, ix: &WaveletIndex) -> Result<Vec<f64>> {
        let flat = self.map.to_flat(ix)?;
        Ok(self.atom_flat(flat))
    }

    pub(crate) fn atom_flat(&self, flat: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.len()];
        buf[self.map.pyramid_offset(flat)] = 1.0;
        self.synthesize_in_place(&mut buf);
        buf
    }

    fn analyze_in_place(&self, buf: &mut [f64]) {
        let grid = self.grid();
        let mut line = Vec::with_capacity(grid.n);
        let mut out = vec![0.0; grid.n];
        let mut side = grid.n;
        for _ in 0..self.levels() {
            for axis in 0..grid.dim {
                for_each_line(grid, side, axis, |base, stride| {
                    line.clear();
                    line.extend((0..side).map(|i| buf[base + i * stride]));
                    analyze_line(&self.filter, &line, &mut out[..side]);
                    for (i, &v) in out[..side].iter().enumerate() {
                        buf[base + i * stride] = v;
                    }
                });
            }
            side /= 2;
        }
    }

    fn synthesize_in_place(&self, buf: &mut [f64]) {
        let grid = self.grid();
        let mut line = Vec::with_capacity(grid.n);
        let mut out = vec![0.0; grid.n];
        for level in (0..self.levels()).rev() {
            let side = grid.n >> level;
            for axis in (0..grid.dim).rev() {
                for_each_line(grid, side, axis, |base, stride| {
                    line.clear();
                    line.extend((0..side).map(|i| buf[base + i * stride]));
                    synthesize_line(&self.filter, &line, &mut out[..side]);
                    for (i, &v) in out[..side].iter().enumerate() {
                        buf[base + i * stride] = v;
                    }
                });
            }
        }
    }
}

/// Visits every line along `axis` inside the leading `side^d` block.
fn for_each_line(grid: Grid, side: usize, axis: usize, mut f: impl FnMut(usize, usize)) {
    let d = grid.dim;
    let stride = grid.n.pow((d - 1 - axis) as u32);
    let others = side.pow((d - 1) as u32);
    let mut c = [0usize; crate::grid::MAX_DIM];
    for k in 0..others {
        let mut rest = k;
        for a in (0..d).rev() {
            if a == axis {
                c[a] = 0;
                continue;
            }
            c[a] = rest % side;
            rest /= side;
        }
        f(grid.flat(&c), stride);
    }
}

/// One periodic analysis step: `out = [a | d]`, each half the input length.
fn analyze_line(filter: &FilterPair, x: &[f64], out: &mut [f64]) {
    let m = x.len();
    let half = m / 2;
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (t, (&h, &g)) in filter.lowpass.iter().zip(&filter.highpass).enumerate() {
            let v = x[(2 * k + t) % m];
            a += h * v;
            d += g * v;
        }
        out[k] = a;
        out[half + k] = d;
    }
}

/// Adjoint (and inverse) of [`analyze_line`].
fn synthesize_line(filter: &FilterPair, coeffs: &[f64], out: &mut [f64]) {
    let m = coeffs.len();
    let half = m / 2;
    out.fill(0.0);
    for k in 0..half {
        let (a, d) = (coeffs[k], coeffs[half + k]);
        if a == 0.0 && d == 0.0 {
            continue;
        }
        for (t, (&h, &g)) in filter.lowpass.iter().zip(&filter.highpass).enumerate() {
            out[(2 * k + t) % m] += h * a + g * d;
        }
    }
}

/// Forward transform of an `n^d` image with `levels` decomposition levels.
pub fn dwt(image: &[f64], grid: Grid, levels: usize, filter: &FilterPair) -> Result<WaveletCoeffs> {
    let basis = Basis::new(grid, levels, filter.clone())?;
    Ok(WaveletCoeffs {
        values: basis.forward(image)?,
        meta: basis.meta(),
    })
}

/// Inverse of [`dwt`].
pub fn idwt(coeffs: &WaveletCoeffs, filter: &FilterPair) -> Result<Vec<f64>> {
    let meta = coeffs.meta;
    let grid = Grid::new(meta.n, meta.dim)?;
    if coeffs.values.len() != grid.len() {
        return Err(Error::BadShape(format!(
            "{} coefficients do not match {}^{}",
            coeffs.values.len(),
            meta.n,
            meta.dim
        )));
    }
    Basis::new(grid, meta.levels, filter.clone())?.inverse(&coeffs.values)
}

/// `ψ_λ` on the grid of `basis`, unit ℓ₂ norm.
pub fn synthesize_atom(ix: &WaveletIndex, basis: &Basis) -> Result<Vec<f64>> {
    basis.atom(ix)
}
