//! Square periodic sampling grids on `[0,1]^d` and small vector helpers.

use crate::error::{Error, Result};

/// Largest dimension the index arithmetic supports.
pub const MAX_DIM: usize = 3;

/// A grid of `n^dim` samples, row-major, axis 0 slowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub n: usize,
    pub dim: usize,
}

impl Grid {
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::BadShape(format!("side {n} is not a power of two >= 2")));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::BadShape(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        Ok(Self { n, dim })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, 2)
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `log2(n)`.
    pub fn depth(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    pub fn coords(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for a in (0..self.dim).rev() {
            c[a] = flat % self.n;
            flat /= self.n;
        }
        c
    }

    pub fn flat(&self, coords: &[usize]) -> usize {
        coords[..self.dim].iter().fold(0, |acc, &c| acc * self.n + c)
    }

    /// Continuous position `i/n` of sample `flat` in `[0,1)^d`.
    pub fn point(&self, flat: usize) -> [f64; MAX_DIM] {
        let c = self.coords(flat);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = c[a] as f64 / self.n as f64;
        }
        p
    }

    pub fn check(&self, data: &[f64]) -> Result<()> {
        if data.len() != self.len() {
            return Err(Error::BadShape(format!(
                "expected {} samples for {}^{}, got {}",
                self.len(),
                self.n,
                self.dim,
                data.len()
            )));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_round_trip() {
        let g = Grid::new(8, 2).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.flat(&g.coords(i)), i);
        }
        assert_eq!(g.coords(9)[..2], [1, 1]);
    }

    #[test]
    fn rejects_bad_sides() {
        assert!(Grid::new(12, 2).is_err());
        assert!(Grid::new(16, 0).is_err());
    }
}
