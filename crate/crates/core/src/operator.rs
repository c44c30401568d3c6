//! Linear operators on images of a fixed grid.

use crate::grid::Grid;

/// A linear map `R^N -> R^N` on the samples of `grid()` with its adjoint.
///
/// Inputs must have `grid().len()` entries; implementations assert it.
pub trait LinearOperator: Sync {
    fn grid(&self) -> Grid;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn grid(&self) -> Grid {
        (**self).grid()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

impl<T: LinearOperator + ?Sized + Send> LinearOperator for Box<T> {
    fn grid(&self) -> Grid {
        (**self).grid()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub Grid);

impl LinearOperator for Identity {
    fn grid(&self) -> Grid {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
}

/// `A - B`.
pub struct Difference<A, B>(pub A, pub B);

impl<A: LinearOperator, B: LinearOperator> LinearOperator for Difference<A, B> {
    fn grid(&self) -> Grid {
        self.0.grid()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.0.apply(x);
        for (v, b) in a.iter_mut().zip(self.1.apply(x)) {
            *v -= b;
        }
        a
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut a = self.0.apply_adjoint(y);
        for (v, b) in a.iter_mut().zip(self.1.apply_adjoint(y)) {
            *v -= b;
        }
        a
    }
}

/// Dense row-major matrix acting on flattened images.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub grid: Grid,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.rows + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.rows..(r + 1) * self.rows]
    }
}

impl LinearOperator for DenseMatrix {
    fn grid(&self) -> Grid {
        self.grid
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        crate::par::map_range(self.rows, |r| crate::grid::dot(self.row(r), x))
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.rows];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }
}
