//! The wavelet-domain matrix `Θ = Ψ* H Ψ`, built column by column, its
//! thresholding, and application of `H̃ = Ψ Θ̃ Ψ*` to images.
//!
//! Rows are indexed by `μ` and columns by `λ`: column `λ` holds the
//! coefficients of `Hψ_λ`, so `Θ · dwt(u) = dwt(Hu)`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernel::{KernelField, KernelOperator};
use crate::operator::LinearOperator;
use crate::par;
use crate::sparse::SparseTheta;
use crate::wavelet::{Basis, CoeffMeta};

/// A square matrix acting on wavelet coefficient vectors.
pub trait CoeffOperator: Sync {
    fn size(&self) -> usize;
    fn mul(&self, x: &[f64]) -> Vec<f64>;
    fn mul_transpose(&self, y: &[f64]) -> Vec<f64>;
}

impl<T: CoeffOperator + ?Sized> CoeffOperator for &T {
    fn size(&self) -> usize {
        (**self).size()
    }
    fn mul(&self, x: &[f64]) -> Vec<f64> {
        (**self).mul(x)
    }
    fn mul_transpose(&self, y: &[f64]) -> Vec<f64> {
        (**self).mul_transpose(y)
    }
}

/// Default dense budget: `N ≤ 4096`, i.e. 64x64 images.
pub const DENSE_THETA_BUDGET: usize = 4096;

/// Dense `Θ`, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    size: usize,
    data: Vec<f64>,
    meta: CoeffMeta,
    order: usize,
    provenance: String,
}

impl ThetaMatrix {
    pub fn from_columns(basis: &Basis, data: Vec<f64>, provenance: &str) -> Result<Self> {
        let size = basis.len();
        if data.len() != size * size {
            return Err(Error::BadShape(format!(
                "{} entries for a {size}x{size} matrix",
                data.len()
            )));
        }
        Ok(Self {
            size,
            data,
            meta: basis.meta(),
            order: basis.order(),
            provenance: provenance.to_string(),
        })
    }

    pub fn meta(&self) -> CoeffMeta {
        self.meta
    }

    /// Vanishing moments of the basis.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Kind of the kernel field the matrix was built from.
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.size + row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.size..(col + 1) * self.size]
    }

    /// Column-major entries; entry `(row, col)` sits at flat index
    /// `col * N + row`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_sparse(&self) -> SparseTheta {
        let columns = par::map_range(self.size, |c| {
            self.column(c)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(r, &v)| (r as u32, v))
                .collect()
        });
        SparseTheta::from_columns(self.size, columns)
            .expect("dense columns are well formed")
            .with_meta(self.meta)
    }
}

const ROW_BLOCK: usize = 256;

impl CoeffOperator for ThetaMatrix {
    fn size(&self) -> usize {
        self.size
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.size);
        let n = self.size;
        let blocks = par::map_range(n.div_ceil(ROW_BLOCK), |b| {
            let rows = b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(n);
            let mut y = vec![0.0; rows.len()];
            for (c, &xc) in x.iter().enumerate() {
                if xc == 0.0 {
                    continue;
                }
                let col = &self.data[c * n + rows.start..c * n + rows.end];
                y.iter_mut().zip(col).for_each(|(a, v)| *a += v * xc);
            }
            y
        });
        blocks.concat()
    }

    fn mul_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.size);
        par::map_range(self.size, |c| crate::grid::dot(self.column(c), y))
    }
}

/// `H̃ = Ψ Θ̃ Ψ*` acting on images.
#[derive(Debug, Clone)]
pub struct WaveletOperator<T> {
    pub theta: T,
    pub basis: Basis,
}

impl<T: CoeffOperator> WaveletOperator<T> {
    pub fn new(theta: T, basis: Basis) -> Result<Self> {
        if theta.size() != basis.len() {
            return Err(Error::BadShape(format!(
                "matrix of size {} does not match a basis of {} atoms",
                theta.size(),
                basis.len()
            )));
        }
        Ok(Self { theta, basis })
    }
}

impl<T: CoeffOperator> LinearOperator for WaveletOperator<T> {
    fn grid(&self) -> Grid {
        self.basis.grid()
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let c = self.basis.forward(u).expect("image matches the basis grid");
        self.basis.inverse(&self.theta.mul(&c)).unwrap()
    }

    fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        let c = self.basis.forward(v).expect("image matches the basis grid");
        self.basis.inverse(&self.theta.mul_transpose(&c)).unwrap()
    }
}

/// `idwt(S · dwt(u))`.
pub fn apply_sparse(sparse: &SparseTheta, basis: &Basis, u: &[f64]) -> Result<Vec<f64>> {
    if let Some(meta) = sparse.meta {
        if meta != basis.meta() {
            return Err(Error::BadShape(format!(
                "matrix built for {meta:?}, basis is {:?}",
                basis.meta()
            )));
        }
    }
    basis.grid().check(u)?;
    Ok(WaveletOperator::new(sparse, basis.clone())?.apply(u))
}

/// Column `λ` of `Θ` for an arbitrary image-domain operator: `Ψ* A ψ_λ`.
pub fn theta_column(op: &dyn LinearOperator, basis: &Basis, col: usize) -> Vec<f64> {
    let blurred = op.apply(&basis.atom_flat(col));
    basis.forward(&blurred).unwrap()
}

fn check_operator_grid(op: &dyn LinearOperator, basis: &Basis) -> Result<()> {
    if op.grid() != basis.grid() {
        return Err(Error::BadShape(format!(
            "operator grid {:?} differs from basis grid {:?}",
            op.grid(),
            basis.grid()
        )));
    }
    Ok(())
}

/// Dense `Θ` of any operator on the basis grid, subject to `max_size`.
pub fn build_theta_of(
    op: &dyn LinearOperator,
    basis: &Basis,
    max_size: usize,
    provenance: &str,
) -> Result<ThetaMatrix> {
    check_operator_grid(op, basis)?;
    dense_theta(basis, max_size, provenance, |c| theta_column(op, basis, c))
}

fn dense_theta(
    basis: &Basis,
    max_size: usize,
    provenance: &str,
    column: impl Fn(usize) -> Vec<f64> + Sync + Send,
) -> Result<ThetaMatrix> {
    let size = basis.len();
    if size > max_size {
        return Err(Error::TooLarge(format!(
            "dense theta of size {size} exceeds the budget of {max_size}"
        )));
    }
    let mut data = vec![0.0; size * size];
    par::for_each_chunk_mut(&mut data, size, |c, col| {
        col.copy_from_slice(&column(c));
    });
    ThetaMatrix::from_columns(basis, data, provenance)
}

fn kernel_column(op: &KernelOperator, basis: &Basis, col: usize) -> Vec<f64> {
    basis.forward(&op.apply_scatter(&basis.atom_flat(col))).unwrap()
}

/// Dense `Θ` of the exact operator of `field` (default budget).
pub fn build_theta(field: &KernelField, basis: &Basis) -> Result<ThetaMatrix> {
    let op = KernelOperator::new(field)?;
    check_operator_grid(&op, basis)?;
    dense_theta(basis, DENSE_THETA_BUDGET, field.kind().name(), |c| kernel_column(&op, basis, c))
}

/// Columns `cols` of `Θ` without forming the whole matrix.
pub fn build_theta_columns(field: &KernelField, basis: &Basis, cols: &[usize]) -> Result<Vec<Vec<f64>>> {
    let op = KernelOperator::new(field)?;
    check_operator_grid(&op, basis)?;
    if let Some(&bad) = cols.iter().find(|&&c| c >= basis.len()) {
        return Err(Error::BadIndex(format!("column {bad} of {}", basis.len())));
    }
    Ok(par::map_slice(cols, |&c| kernel_column(&op, basis, c)))
}

/// Entry ranking key: larger score first, then smaller flat index.
#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    flat: u64,
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.flat.cmp(&self.flat))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

/// Keeps the `k` best entries pushed so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked>>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 24) + 1),
        }
    }

    fn push(&mut self, score: f64, flat: u64) {
        if self.k == 0 {
            return;
        }
        let item = Ranked { score, flat };
        if self.heap.len() < self.k {
            self.heap.push(Reverse(item));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if item > *worst {
                self.heap.pop();
                self.heap.push(Reverse(item));
            }
        }
    }

    fn into_flats(self) -> Vec<u64> {
        let mut v: Vec<u64> = self.heap.into_iter().map(|Reverse(r)| r.flat).collect();
        v.sort_unstable();
        v
    }
}

/// Flat indices of the `k` largest scores, ties to the smaller index,
/// returned in increasing order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let len = scores.len();
    if k >= len {
        return (0..len).collect();
    }
    if k == 0 {
        return Vec::new();
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let t = *kth;
    drop(sorted);
    let above = scores.iter().filter(|s| s.total_cmp(&t) == Ordering::Greater).count();
    let mut ties = k - above;
    let mut out = Vec::with_capacity(k);
    for (i, s) in scores.iter().enumerate() {
        match s.total_cmp(&t) {
            Ordering::Greater => out.push(i),
            Ordering::Equal if ties > 0 => {
                ties -= 1;
                out.push(i);
            }
            _ => {}
        }
    }
    out
}

/// Sparse matrix holding the entries of `theta` at the given column-major
/// flat indices.
pub fn sparse_from_flats(theta: &ThetaMatrix, flats: &[usize]) -> SparseTheta {
    let n = theta.size;
    let triplets = flats
        .iter()
        .map(|&f| ((f % n) as u32, (f / n) as u32, theta.data[f]))
        .collect();
    SparseTheta::from_triplets(n, triplets)
        .expect("flat indices are unique")
        .with_meta(theta.meta)
}

/// How many entries [`threshold_abs`] keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// The `K` largest in magnitude, ties to the smaller flat index.
    Count(usize),
    /// Every nonzero entry with `|θ| ≥ η`.
    Magnitude(f64),
}

pub fn threshold_abs(theta: &ThetaMatrix, selection: Selection) -> SparseTheta {
    match selection {
        Selection::Count(k) => {
            let scores: Vec<f64> = theta.data.iter().map(|v| v.abs()).collect();
            sparse_from_flats(theta, &top_k_indices(&scores, k))
        }
        Selection::Magnitude(eta) => {
            let flats: Vec<usize> = (0..theta.data.len())
                .filter(|&f| theta.data[f] != 0.0 && theta.data[f].abs() >= eta)
                .collect();
            sparse_from_flats(theta, &flats)
        }
    }
}

/// Builds the `k` largest-magnitude entries of `Θ` column by column without
/// storing the dense matrix. Ties go to the smaller flat index.
pub fn build_theta_sparse(field: &KernelField, basis: &Basis, k: usize) -> Result<SparseTheta> {
    let cols: Vec<usize> = (0..basis.len()).collect();
    build_theta_sparse_subset(field, basis, &cols, k)
}

/// [`build_theta_sparse`] restricted to the columns `cols`.
pub fn build_theta_sparse_subset(
    field: &KernelField,
    basis: &Basis,
    cols: &[usize],
    k: usize,
) -> Result<SparseTheta> {
    const BATCH: usize = 64;
    let op = KernelOperator::new(field)?;
    check_operator_grid(&op, basis)?;
    let size = basis.len();
    if let Some(&bad) = cols.iter().find(|&&c| c >= size) {
        return Err(Error::BadIndex(format!("column {bad} of {size}")));
    }
    let mut top = TopK::new(k);
    let mut values = std::collections::HashMap::new();
    for batch in cols.chunks(BATCH) {
        let columns = par::map_slice(batch, |&c| {
            let col = kernel_column(&op, basis, c);
            let mut best: Vec<usize> = top_k_indices(&col.iter().map(|v| v.abs()).collect::<Vec<_>>(), k);
            best.retain(|&r| col[r] != 0.0);
            best.into_iter().map(|r| (r, col[r])).collect::<Vec<_>>()
        });
        for (&c, entries) in batch.iter().zip(columns) {
            for (r, v) in entries {
                let flat = (c * size + r) as u64;
                top.push(v.abs(), flat);
                values.insert(flat, v);
            }
        }
        if values.len() > 4 * k.max(size) {
            let keep: std::collections::HashSet<u64> =
                top.heap.iter().map(|Reverse(r)| r.flat).collect();
            values.retain(|f, _| keep.contains(f));
        }
    }
    let triplets = top
        .into_flats()
        .into_iter()
        .map(|f| {
            let v = values[&f];
            ((f % size as u64) as u32, (f / size as u64) as u32, v)
        })
        .collect();
    Ok(SparseTheta::from_triplets(size, triplets)?.with_meta(basis.meta()))
}
