//! Data-driven sparsity patterns: scale weights `Σ`, the weighted greedy
//! selection minimizing `max_i ‖Δ^{(i)}‖₂ / σ_i`, and the column-weighted
//! best-term rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;
use crate::sparse::SparseTheta;
use crate::theta::{sparse_from_flats, top_k_indices, CoeffOperator, ThetaMatrix};
use crate::wavelet::IndexMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// `σ_i = 1`.
    Uniform,
    /// `σ_i = 2^{j(i)}`.
    Dyadic,
    /// `σ_i = 2^{j(i)/2}`.
    Bv1d,
    /// One weight per scale, coarsest first.
    Custom(Vec<f64>),
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Scheme::Uniform),
            "dyadic" => Ok(Scheme::Dyadic),
            "bv1d" => Ok(Scheme::Bv1d),
            other => Err(Error::BadScheme(format!("unknown scheme {other:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Uniform => write!(f, "uniform"),
            Scheme::Dyadic => write!(f, "dyadic"),
            Scheme::Bv1d => write!(f, "bv1d"),
            Scheme::Custom(_) => write!(f, "custom"),
        }
    }
}

/// Per-coefficient weights. Scales are counted from the coarsest retained
/// one, which has `j = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWeights {
    pub values: Vec<f64>,
    pub scheme: Scheme,
}

impl SigmaWeights {
    /// Weight of coefficients at relative scale `j`.
    pub fn for_scale(scheme: &Scheme, j: usize) -> f64 {
        match scheme {
            Scheme::Uniform => 1.0,
            Scheme::Dyadic => 2f64.powi(j as i32),
            Scheme::Bv1d => 2f64.powf(j as f64 / 2.0),
            Scheme::Custom(w) => w[j],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn make_sigma(scheme: Scheme, map: &IndexMap) -> Result<SigmaWeights> {
    let scales = map.finest_scale().max(map.coarse_scale()) - map.coarse_scale() + 1;
    if let Scheme::Custom(w) = &scheme {
        if w.len() < scales {
            return Err(Error::BadScheme(format!(
                "custom scheme has {} weights for {scales} scales",
                w.len()
            )));
        }
        if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::BadScheme("custom weights must be positive".into()));
        }
    }
    let j0 = map.coarse_scale();
    let values = (0..map.len())
        .map(|i| SigmaWeights::for_scale(&scheme, map.scale_of(i) - j0))
        .collect();
    Ok(SigmaWeights { values, scheme })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gamma: f64,
    col: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gamma
            .total_cmp(&other.gamma)
            .then_with(|| other.col.cmp(&self.col))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Outcome of the weighted greedy selection.
#[derive(Debug, Clone)]
pub struct GreedyRun {
    pub sparse: SparseTheta,
    /// `max_i ‖Δ^{(i)}‖₂ / σ_i` after each step; entry 0 is the initial value.
    pub objective: Vec<f64>,
}

/// Column `c` of a matrix as `(row, value)` pairs.
trait Columns: Sync {
    fn size(&self) -> usize;
    fn entries(&self, c: usize) -> Vec<(u32, f64)>;
}

impl Columns for ThetaMatrix {
    fn size(&self) -> usize {
        CoeffOperator::size(self)
    }
    fn entries(&self, c: usize) -> Vec<(u32, f64)> {
        self.column(c).iter().enumerate().map(|(r, &v)| (r as u32, v)).collect()
    }
}

impl Columns for SparseTheta {
    fn size(&self) -> usize {
        CoeffOperator::size(self)
    }
    fn entries(&self, c: usize) -> Vec<(u32, f64)> {
        let (rows, vals) = self.column(c);
        rows.iter().copied().zip(vals.iter().copied()).collect()
    }
}

fn greedy_core(source: &dyn Columns, sigma: &SigmaWeights, k: usize, trace: bool) -> Result<GreedyRun> {
    let size = source.size();
    if sigma.len() != size {
        return Err(Error::BadShape(format!(
            "{} weights for a matrix of size {size}",
            sigma.len()
        )));
    }
    // Each column: entries by decreasing magnitude (ties: lower row) and
    // the residual energy not yet moved into the pattern.
    let mut columns: Vec<(Vec<(u32, f64)>, f64)> = par::map_range(size, |c| {
        let mut e = source.entries(c);
        let energy = e.iter().map(|(_, v)| v * v).sum::<f64>();
        e.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        (e, energy)
    });
    let mut cursor = vec![0usize; size];
    let gamma = |energy: f64, c: usize| energy.max(0.0) / (sigma.values[c] * sigma.values[c]);
    let mut heap: BinaryHeap<Candidate> = columns
        .iter()
        .enumerate()
        .filter(|(_, (e, _))| !e.is_empty())
        .map(|(c, (_, energy))| Candidate {
            gamma: gamma(*energy, c),
            col: c,
        })
        .collect();
    let mut objective = Vec::new();
    if trace {
        objective.push(heap.peek().map_or(0.0, |c| c.gamma.sqrt()));
    }
    let mut picked: Vec<Vec<(u32, f64)>> = vec![Vec::new(); size];
    for _ in 0..k {
        let Some(Candidate { col, .. }) = heap.pop() else {
            break;
        };
        let (entries, energy) = &mut columns[col];
        let (row, value) = entries[cursor[col]];
        cursor[col] += 1;
        picked[col].push((row, value));
        *energy -= value * value;
        if cursor[col] == entries.len() {
            *energy = 0.0;
        } else {
            heap.push(Candidate {
                gamma: gamma(*energy, col),
                col,
            });
        }
        if trace {
            objective.push(heap.peek().map_or(0.0, |c| c.gamma.sqrt()));
        }
    }
    Ok(GreedyRun {
        sparse: SparseTheta::from_columns(size, picked)?,
        objective,
    })
}

/// `K` greedy steps: move the largest remaining entry of the column with the
/// largest weighted residual into the pattern.
pub fn greedy_weighted(theta: &ThetaMatrix, sigma: &SigmaWeights, k: usize) -> Result<SparseTheta> {
    Ok(greedy_core(theta, sigma, k, false)?.sparse.with_meta(theta.meta()))
}

/// [`greedy_weighted`] also recording the objective after every step.
pub fn greedy_weighted_trace(theta: &ThetaMatrix, sigma: &SigmaWeights, k: usize) -> Result<GreedyRun> {
    let mut run = greedy_core(theta, sigma, k, true)?;
    run.sparse = run.sparse.with_meta(theta.meta());
    Ok(run)
}

/// Greedy selection restricted to the entries of a sparse superset.
pub fn greedy_weighted_sparse(superset: &SparseTheta, sigma: &SigmaWeights, k: usize) -> Result<SparseTheta> {
    let run = greedy_core(superset, sigma, k, false)?;
    Ok(match superset.meta {
        Some(m) => run.sparse.with_meta(m),
        None => run.sparse,
    })
}

/// Keeps `(i, j)` iff `|Θ_ij| / w_j` is among the `K` largest, ties to the
/// smaller flat index.
pub fn wei_rule(theta: &ThetaMatrix, weights: &[f64], k: usize) -> Result<SparseTheta> {
    let size = CoeffOperator::size(theta);
    if weights.len() != size {
        return Err(Error::BadShape(format!("{} column weights for size {size}", weights.len())));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::BadScheme("column weights must be positive".into()));
    }
    let scores: Vec<f64> = theta
        .data()
        .iter()
        .enumerate()
        .map(|(f, v)| v.abs() / weights[f / size])
        .collect();
    Ok(sparse_from_flats(theta, &top_k_indices(&scores, k)))
}
