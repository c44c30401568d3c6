//! Orthogonal separable Daubechies transforms on periodic `n^d` grids.

pub mod filters;
pub mod index;
pub mod transform;

pub use filters::{make_daubechies_filter, FilterPair};
pub use index::{index_map, IndexMap, WaveletIndex};
pub use transform::{dwt, idwt, synthesize_atom, Basis, CoeffMeta, WaveletCoeffs};
