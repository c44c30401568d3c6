//! Multiscale index bookkeeping: flat coefficient position <-> `(j, m, e)`.
//!
//! Coefficients are laid out subband-major. The coarse scaling block comes
//! first (scale `j0 = log2(n) - J`, orientation 0), then for every scale
//! `j = j0..log2(n)` the detail blocks in orientation order `1..2^d`, each
//! block row-major over `m`. Orientation code `o` holds `e_a` in bit
//! `d-1-a`, so in 2D the order is `(0,1), (1,0), (1,1)`.
//!
//! Scales are absolute: a subband at scale `j` has `2^j` positions per axis,
//! its wavelets have characteristic size `2^-j` on `[0,1]`.

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};

/// `λ = (j, m, e)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WaveletIndex {
    pub scale: usize,
    pub pos: [usize; MAX_DIM],
    /// Orientation bits, 0 only for the coarse scaling block.
    pub orient: u8,
}

impl WaveletIndex {
    pub fn new(scale: usize, pos: &[usize], orient: u8) -> Self {
        let mut p = [0; MAX_DIM];
        p[..pos.len()].copy_from_slice(pos);
        Self {
            scale,
            pos: p,
            orient,
        }
    }

    /// `e_a` for axis `a` in a `dim`-dimensional basis.
    pub fn orient_bit(&self, axis: usize, dim: usize) -> usize {
        ((self.orient >> (dim - 1 - axis)) & 1) as usize
    }
}

/// Bijection between flat coefficient positions and wavelet indices for a
/// given `(n, J, d)`.
#[derive(Debug, Clone)]
pub struct IndexMap {
    grid: Grid,
    levels: usize,
    coarse_scale: usize,
    indices: Vec<WaveletIndex>,
    /// Position of each flat coefficient in the in-place pyramid layout.
    pyramid: Vec<usize>,
}

impl IndexMap {
    pub fn new(grid: Grid, levels: usize) -> Result<Self> {
        let depth = grid.depth();
        if levels > depth {
            return Err(Error::BadShape(format!(
                "{levels} levels exceed log2({}) = {depth}",
                grid.n
            )));
        }
        let d = grid.dim;
        let coarse_scale = depth - levels;
        let mut indices = Vec::with_capacity(grid.len());
        let side = 1usize << coarse_scale;
        push_block(&mut indices, d, coarse_scale, side, 0);
        for j in coarse_scale..depth {
            for o in 1..(1u8 << d) {
                push_block(&mut indices, d, j, 1 << j, o);
            }
        }
        debug_assert_eq!(indices.len(), grid.len());
        let pyramid = indices
            .iter()
            .map(|ix| {
                let mut c = [0; MAX_DIM];
                for (a, ca) in c.iter_mut().enumerate().take(d) {
                    *ca = ix.orient_bit(a, d) * (1 << ix.scale) + ix.pos[a];
                }
                grid.flat(&c)
            })
            .collect();
        Ok(Self {
            grid,
            levels,
            coarse_scale,
            indices,
            pyramid,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Scale of the coarse scaling block (and of the coarsest details).
    pub fn coarse_scale(&self) -> usize {
        self.coarse_scale
    }

    /// Finest detail scale, `log2(n) - 1`.
    pub fn finest_scale(&self) -> usize {
        self.grid.depth() - 1
    }

    pub fn indices(&self) -> &[WaveletIndex] {
        &self.indices
    }

    pub fn from_flat(&self, i: usize) -> WaveletIndex {
        self.indices[i]
    }

    pub fn scale_of(&self, i: usize) -> usize {
        self.indices[i].scale
    }

    pub(crate) fn pyramid_offsets(&self) -> &[usize] {
        &self.pyramid
    }

    /// Position of `ix` in the in-place pyramid layout.
    pub fn pyramid_offset(&self, i: usize) -> usize {
        self.pyramid[i]
    }

    pub fn to_flat(&self, ix: &WaveletIndex) -> Result<usize> {
        self.validate(ix)?;
        let d = self.grid.dim;
        let side = 1usize << ix.scale;
        let local = ix.pos[..d].iter().fold(0, |acc, &p| acc * side + p);
        if ix.orient == 0 {
            return Ok(local);
        }
        let block = side.pow(d as u32);
        Ok(block + (ix.orient as usize - 1) * block + local)
    }

    pub fn validate(&self, ix: &WaveletIndex) -> Result<()> {
        let d = self.grid.dim;
        let bad = |why: &str| Err(Error::BadIndex(format!("{ix:?}: {why}")));
        if ix.scale < self.coarse_scale || ix.scale > self.finest_scale().max(self.coarse_scale) {
            return bad("scale out of range");
        }
        if ix.orient as usize >= 1 << d {
            return bad("orientation out of range");
        }
        if ix.orient == 0 && ix.scale != self.coarse_scale {
            return bad("scaling functions only live at the coarse scale");
        }
        if ix.pos[..d].iter().any(|&p| p >= 1 << ix.scale) || ix.pos[d..].iter().any(|&p| p != 0)
        {
            return bad("position out of range");
        }
        Ok(())
    }

    /// Number of coefficients at scale `j`, all orientations included.
    pub fn count_at_scale(&self, j: usize) -> usize {
        let per = 1usize << (j * self.grid.dim);
        let orients = (1 << self.grid.dim) - 1 + usize::from(j == self.coarse_scale);
        per * orients
    }

    /// Flat range `[2^{jd}, 2^{(j+1)d})` holding the details of scale `j`.
    pub fn detail_range(&self, j: usize) -> std::ops::Range<usize> {
        let d = self.grid.dim;
        (1 << (j * d))..(1 << ((j + 1) * d))
    }
}

fn push_block(out: &mut Vec<WaveletIndex>, d: usize, scale: usize, side: usize, orient: u8) {
    let count = side.pow(d as u32);
    for flat in 0..count {
        let mut pos = [0; MAX_DIM];
        let mut rest = flat;
        for a in (0..d).rev() {
            pos[a] = rest % side;
            rest /= side;
        }
        out.push(WaveletIndex { scale, pos, orient });
    }
}

/// All wavelet indices of `(n, J, d)` in flat order.
pub fn index_map(n: usize, levels: usize, dim: usize) -> Result<IndexMap> {
    IndexMap::new(Grid::new(n, dim)?, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_one_dimensional_map() {
        let map = index_map(2, 1, 1).unwrap();
        assert_eq!(
            map.indices(),
            &[WaveletIndex::new(0, &[0], 0), WaveletIndex::new(0, &[0], 1)]
        );
    }

    #[test]
    fn subband_counts_in_two_dimensions() {
        let map = index_map(4, 2, 2).unwrap();
        assert_eq!(map.len(), 16);
        let coarse = map.indices().iter().filter(|ix| ix.orient == 0).count();
        let j0 = map.indices().iter().filter(|ix| ix.orient != 0 && ix.scale == 0).count();
        let j1 = map.indices().iter().filter(|ix| ix.scale == 1).count();
        assert_eq!((coarse, j0, j1), (1, 3, 12));
        for i in map.detail_range(1) {
            assert_eq!(map.scale_of(i), 1);
        }
    }

    #[test]
    fn orientation_order_is_01_10_11() {
        let map = index_map(4, 1, 2).unwrap();
        // coarse 2x2 block, then three 2x2 detail blocks at scale 1
        let orients: Vec<u8> = map.indices().iter().map(|ix| ix.orient).collect();
        assert_eq!(&orients[4..8], &[1; 4]);
        assert_eq!(&orients[8..12], &[2; 4]);
        assert_eq!(&orients[12..16], &[3; 4]);
        let e = map.from_flat(4);
        assert_eq!((e.orient_bit(0, 2), e.orient_bit(1, 2)), (0, 1));
    }

    #[test]
    fn exhaustive_bijection_up_to_64() {
        for dim in 1..=2 {
            for depth in 1..=6 {
                let n = 1 << depth;
                for levels in 0..=depth {
                    let map = index_map(n, levels, dim).unwrap();
                    assert_eq!(map.len(), n.pow(dim as u32));
                    let mut seen = vec![false; map.len()];
                    for i in 0..map.len() {
                        let ix = map.from_flat(i);
                        assert_eq!(map.to_flat(&ix).unwrap(), i);
                        let p = map.pyramid_offset(i);
                        assert!(!seen[p]);
                        seen[p] = true;
                    }
                }
            }
        }
    }

    #[test]
    fn count_formula_for_full_decomposition() {
        // N = 1 + sum_{j<J} (2^d - 1) 2^{dj}
        for dim in 1..=2usize {
            let depth = 5;
            let map = index_map(1 << depth, depth, dim).unwrap();
            let formula: usize =
                1 + (0..depth).map(|j| ((1 << dim) - 1) * (1 << (dim * j))).sum::<usize>();
            assert_eq!(map.len(), formula);
            let by_scale: usize = (0..depth).map(|j| map.count_at_scale(j)).sum();
            assert_eq!(by_scale, formula);
        }
    }

    #[test]
    fn invalid_indices_are_rejected() {
        let map = index_map(8, 2, 2).unwrap();
        assert!(map.to_flat(&WaveletIndex::new(0, &[0, 0], 1)).is_err());
        assert!(map.to_flat(&WaveletIndex::new(2, &[0, 0], 0)).is_err());
        assert!(map.to_flat(&WaveletIndex::new(2, &[4, 0], 1)).is_err());
        assert!(map.to_flat(&WaveletIndex::new(1, &[1, 1], 0)).is_ok());
    }
}
