//! Sparse wavelet-domain approximation of spatially varying blur operators.

pub mod bounds;
pub mod cli;
pub mod deblur;
pub mod error;
pub mod grid;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod operator;
pub mod par;
pub mod sparse;
pub mod sparsify;
pub mod theta;
pub mod wavelet;
pub mod wc;

pub use error::{Error, Result};
pub use grid::Grid;
