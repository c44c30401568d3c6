//! Column-compressed wavelet-domain operators and the WBTH1 file format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::theta::CoeffOperator;
use crate::wavelet::CoeffMeta;

/// Sparse `N x N` matrix in CSC form, rows sorted within each column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTheta {
    size: usize,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    values: Vec<f64>,
    /// Basis layout the matrix was built for, when known.
    pub meta: Option<CoeffMeta>,
}

const MAGIC: &[u8; 5] = b"WBTH1";
const HEADER: usize = 5 + 4 + 8;
const RECORD: usize = 4 + 4 + 8;

impl SparseTheta {
    pub fn zero(size: usize) -> Self {
        Self {
            size,
            col_ptr: vec![0; size + 1],
            rows: Vec::new(),
            values: Vec::new(),
            meta: None,
        }
    }

    pub fn identity(size: usize) -> Self {
        Self {
            size,
            col_ptr: (0..=size).collect(),
            rows: (0..size as u32).collect(),
            values: vec![1.0; size],
            meta: None,
        }
    }

    /// Builds from `(row, col, value)` triplets in any order.
    pub fn from_triplets(size: usize, mut triplets: Vec<(u32, u32, f64)>) -> Result<Self> {
        triplets.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; size + 1];
        let mut rows = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if r as usize >= size || c as usize >= size {
                return Err(Error::BadShape(format!("entry ({r}, {c}) outside {size}x{size}")));
            }
            if !v.is_finite() {
                return Err(Error::BadShape(format!("entry ({r}, {c}) is not finite")));
            }
            if last == Some((r, c)) {
                return Err(Error::BadShape(format!("duplicate entry ({r}, {c})")));
            }
            last = Some((r, c));
            col_ptr[c as usize + 1] += 1;
            rows.push(r);
            values.push(v);
        }
        for c in 0..size {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            size,
            col_ptr,
            rows,
            values,
            meta: None,
        })
    }

    /// Builds from per-column `(row, value)` lists; rows are sorted here.
    pub fn from_columns(size: usize, columns: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if columns.len() != size {
            return Err(Error::BadShape(format!("{} columns for size {size}", columns.len())));
        }
        let nnz = columns.iter().map(Vec::len).sum();
        let mut col_ptr = Vec::with_capacity(size + 1);
        let mut rows = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);
        for (c, mut col) in columns.into_iter().enumerate() {
            col.sort_unstable_by_key(|e| e.0);
            for w in col.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::BadShape(format!("duplicate entry ({}, {c})", w[0].0)));
                }
            }
            for (r, v) in col {
                if r as usize >= size || !v.is_finite() {
                    return Err(Error::BadShape(format!("bad entry ({r}, {c}) = {v}")));
                }
                rows.push(r);
                values.push(v);
            }
            col_ptr.push(rows.len());
        }
        Ok(Self {
            size,
            col_ptr,
            rows,
            values,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: CoeffMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `c`.
    pub fn column(&self, c: usize) -> (&[u32], &[f64]) {
        let r = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.rows[r.clone()], &self.values[r])
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (rows, vals) = self.column(col);
        match rows.binary_search(&(row as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Triplets sorted by column, then row.
    pub fn triplets(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.size).flat_map(move |c| {
            let (rows, vals) = self.column(c);
            rows.iter().zip(vals).map(move |(&r, &v)| (r, c as u32, v))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + RECORD * self.nnz());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        out.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for (r, c, v) in self.triplets() {
            out.extend_from_slice(&r.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..5] != MAGIC {
            return Err(Error::CorruptFile("missing WBTH1 header".into()));
        }
        let size = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let nnz = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let expect = (nnz as u128) * RECORD as u128 + HEADER as u128;
        if expect != bytes.len() as u128 {
            return Err(Error::CorruptFile(format!(
                "{nnz} entries need {expect} bytes, file has {}",
                bytes.len()
            )));
        }
        let triplets = bytes[HEADER..]
            .chunks_exact(RECORD)
            .map(|b| {
                (
                    u32::from_le_bytes(b[0..4].try_into().unwrap()),
                    u32::from_le_bytes(b[4..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..16].try_into().unwrap()),
                )
            })
            .collect();
        Self::from_triplets(size, triplets).map_err(|e| Error::CorruptFile(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Column blocks used by the scatter product; fixed so that results do not
/// depend on the thread count.
const SCATTER_BLOCKS: usize = 16;

impl CoeffOperator for SparseTheta {
    fn size(&self) -> usize {
        self.size
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.size);
        let blocks = SCATTER_BLOCKS.min(self.size.max(1));
        let per = self.size.div_ceil(blocks);
        let partial = par::map_range(blocks, |b| {
            let mut y = vec![0.0; self.size];
            for c in b * per..((b + 1) * per).min(self.size) {
                let xc = x[c];
                if xc == 0.0 {
                    continue;
                }
                let (rows, vals) = self.column(c);
                for (&r, &v) in rows.iter().zip(vals) {
                    y[r as usize] += v * xc;
                }
            }
            y
        });
        let mut it = partial.into_iter();
        let mut y = it.next().unwrap_or_else(|| vec![0.0; self.size]);
        for p in it {
            y.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
        y
    }

    fn mul_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.size);
        par::map_range(self.size, |c| {
            let (rows, vals) = self.column(c);
            rows.iter().zip(vals).map(|(&r, &v)| v * y[r as usize]).sum()
        })
    }
}
