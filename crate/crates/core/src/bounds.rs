//! Sparsity patterns that do not look at `Θ`: the decay bound of blurring
//! operators in the wavelet domain, distances between wavelet supports,
//! multiscale shifts, and greedy selection of multiscale neighborhoods.
//!
//! Scales are absolute (`2^j` positions per axis). Shifts are taken at the
//! coarser of the two scales and wrapped into `[-2^{min}/2, 2^{min}/2)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::MAX_DIM;
use crate::kernel::{BoundFunction, BoundShape};
use crate::par;
use crate::sparse::SparseTheta;
use crate::theta::ThetaMatrix;
use crate::wavelet::{IndexMap, WaveletIndex};

/// One relation `(j, (k, s))`: columns at scale `j` keep rows at scale `k`
/// whose multiscale shift is `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Relation {
    pub j: usize,
    pub k: usize,
    pub s: [i64; MAX_DIM],
}

impl Relation {
    pub fn new(j: usize, k: usize, s: &[i64]) -> Self {
        let mut sh = [0; MAX_DIM];
        sh[..s.len()].copy_from_slice(s);
        Self { j, k, s: sh }
    }
}

/// Relations in selection order, without duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborhoodSet {
    dim: usize,
    relations: Vec<Relation>,
}

impl NeighborhoodSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            relations: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Appends `r`; returns false if it was already present.
    pub fn push(&mut self, r: Relation) -> bool {
        if self.relations.contains(&r) {
            return false;
        }
        self.relations.push(r);
        true
    }

    /// Checks every relation against the scale and shift ranges of `map`.
    pub fn validate(&self, map: &IndexMap) -> Result<()> {
        let (lo, hi) = (map.coarse_scale(), map.finest_scale().max(map.coarse_scale()));
        let mut seen = HashSet::new();
        for r in &self.relations {
            if r.j < lo || r.j > hi || r.k < lo || r.k > hi {
                return Err(Error::BadIndex(format!("relation {r:?}: scale out of range")));
            }
            let m = r.j.min(r.k);
            let side = 1i64 << m;
            let ok = (0..self.dim).all(|a| wrap_shift(r.s[a], m) == r.s[a] && r.s[a].abs() <= side)
                && r.s[self.dim..].iter().all(|&v| v == 0);
            if !ok {
                return Err(Error::BadIndex(format!("relation {r:?}: shift out of range")));
            }
            if !seen.insert(*r) {
                return Err(Error::BadIndex(format!("duplicate relation {r:?}")));
            }
        }
        Ok(())
    }

    /// One `j k s1 [s2]` line per relation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.relations {
            write!(out, "{} {}", r.j, r.k).unwrap();
            for a in 0..self.dim {
                write!(out, " {}", r.s[a]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, dim: usize) -> Result<Self> {
        let mut set = Self::new(dim);
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 + dim {
                return Err(Error::CorruptFile(format!(
                    "line {}: expected {} fields, found {}",
                    no + 1,
                    2 + dim,
                    fields.len()
                )));
            }
            let bad = |_| Error::CorruptFile(format!("line {}: not an integer", no + 1));
            let j = fields[0].parse::<usize>().map_err(bad)?;
            let k = fields[1].parse::<usize>().map_err(bad)?;
            let mut s = [0; MAX_DIM];
            for a in 0..dim {
                s[a] = fields[2 + a].parse::<i64>().map_err(bad)?;
            }
            if !set.push(Relation { j, k, s }) {
                return Err(Error::CorruptFile(format!("line {}: duplicate relation", no + 1)));
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, dim)
    }
}

/// Parameters of `|θ_{λ,μ}| ≤ C_M 2^{-(M+d/2)|j-k|} 2^{-(M+d)min(j,k)} f(dist)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayBoundParams {
    pub order: usize,
    pub c_m: f64,
    pub bound: BoundFunction,
    /// `c(M)`, the support length of the wavelets.
    pub support_const: f64,
}

impl DecayBoundParams {
    /// `C_M = 1`, `c(M) = 2M - 1`.
    pub fn new(order: usize, bound: BoundFunction) -> Self {
        Self {
            order,
            c_m: 1.0,
            bound,
            support_const: (2 * order - 1) as f64,
        }
    }

    /// The pattern-design default: `M = 1`, `f(t) = 1/(1+t)`.
    pub fn pattern_default() -> Self {
        Self::new(1, BoundFunction::new(BoundShape::InverseLinear))
    }

    /// Spot-checks that `f` is non-increasing on `[0, 1]`.
    pub fn check(&self) -> Result<()> {
        if !(self.c_m > 0.0) {
            return Err(Error::BadSpec("C_M must be positive".into()));
        }
        let mut prev = f64::INFINITY;
        for i in 0..=256 {
            let v = self.bound.eval(i as f64 / 256.0);
            if v > prev {
                return Err(Error::BadSpec("bound function is not non-increasing".into()));
            }
            prev = v;
        }
        Ok(())
    }

    fn scale_factor(&self, d: usize, j: usize, k: usize) -> f64 {
        let m = self.order as f64;
        let d = d as f64;
        let e = -(m + d / 2.0) * j.abs_diff(k) as f64 - (m + d) * j.min(k) as f64;
        self.c_m * e.exp2()
    }
}

/// Periodic ∞-norm distance between the supports of `λ` and `μ`, each
/// support being `2^-j [m, m + c]` per axis.
pub fn wavelet_distance(lambda: &WaveletIndex, mu: &WaveletIndex, c: f64, dim: usize) -> f64 {
    let (hj, hk) = ((-(lambda.scale as f64)).exp2(), (-(mu.scale as f64)).exp2());
    let mut gap = 0.0f64;
    for a in 0..dim {
        let cl = hj * (lambda.pos[a] as f64 + c / 2.0);
        let cm = hk * (mu.pos[a] as f64 + c / 2.0);
        let mut delta = (cl - cm).rem_euclid(1.0);
        delta = delta.min(1.0 - delta);
        gap = gap.max(delta);
    }
    (gap - (hj + hk) * c / 2.0).max(0.0)
}

/// `v` reduced modulo `2^scale` into `[-2^scale/2, 2^scale/2)`.
pub fn wrap_shift(v: i64, scale: usize) -> i64 {
    let side = 1i64 << scale;
    let r = v.rem_euclid(side);
    if r >= (side + 1) / 2 && side > 1 {
        r - side
    } else {
        r
    }
}

/// `s = ⌊n / 2^{max(k-j,0)}⌋ - ⌊m / 2^{max(j-k,0)}⌋`, unwrapped.
pub fn multiscale_shift(lambda: &WaveletIndex, mu: &WaveletIndex, dim: usize) -> [i64; MAX_DIM] {
    let (j, k) = (lambda.scale, mu.scale);
    let mut s = [0; MAX_DIM];
    for a in 0..dim {
        let n = (mu.pos[a] >> k.saturating_sub(j)) as i64;
        let m = (lambda.pos[a] >> j.saturating_sub(k)) as i64;
        s[a] = n - m;
    }
    s
}

/// [`multiscale_shift`] wrapped to the periodic range at scale `min(j, k)`.
pub fn wrapped_shift(lambda: &WaveletIndex, mu: &WaveletIndex, dim: usize) -> [i64; MAX_DIM] {
    let mut s = multiscale_shift(lambda, mu, dim);
    let m = lambda.scale.min(mu.scale);
    for v in s.iter_mut().take(dim) {
        *v = wrap_shift(*v, m);
    }
    s
}

/// Distance term of the neighborhood bound:
/// `max(0, 2^{-min(j,k)}‖s‖_∞ - (2^{-j} + 2^{-k}) c / 2)`.
pub fn shift_distance(params: &DecayBoundParams, j: usize, k: usize, s: &[i64]) -> f64 {
    let norm = s.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64;
    let h = |x: usize| (-(x as f64)).exp2();
    (h(j.min(k)) * norm - (h(j) + h(k)) * params.support_const / 2.0).max(0.0)
}

/// `u(j, k, s)`; the dimension is `s.len()`.
pub fn decay_bound(params: &DecayBoundParams, j: usize, k: usize, s: &[i64]) -> f64 {
    params.scale_factor(s.len(), j, k) * params.bound.eval(shift_distance(params, j, k, s))
}

/// Number of orientations present at scale `k`.
fn orientations(map: &IndexMap, k: usize) -> usize {
    let d = map.grid().dim;
    (1 << d) - 1 + usize::from(k == map.coarse_scale())
}

/// Rows in relation with one column at scale `j` through a relation to `k`:
/// every orientation at `k`, and `2^{d(k-j)}` positions when `k` is finer.
pub fn rows_per_column(map: &IndexMap, j: usize, k: usize) -> usize {
    orientations(map, k) << (map.grid().dim * k.saturating_sub(j))
}

/// Number of `(μ, λ)` pairs a relation adds to the pattern.
pub fn relation_size(map: &IndexMap, j: usize, k: usize) -> usize {
    map.count_at_scale(j) * rows_per_column(map, j, k)
}

/// All wrapped shifts at scale `m` in `d` dimensions, lexicographic.
fn all_shifts(m: usize, d: usize) -> Vec<[i64; MAX_DIM]> {
    let side = 1i64 << m;
    let lo = -(side / 2);
    let mut out = Vec::with_capacity((side as usize).pow(d as u32));
    let total = (side as usize).pow(d as u32);
    for flat in 0..total {
        let mut s = [0; MAX_DIM];
        let mut rest = flat as i64;
        for a in (0..d).rev() {
            s[a] = lo + rest % side;
            rest /= side;
        }
        out.push(s);
    }
    out
}

fn inf_norm(s: &[i64]) -> u64 {
    s.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    gain: f64,
    rel: Relation,
}

fn cmp_candidates(a: &Scored, b: &Scored) -> Ordering {
    b.gain
        .total_cmp(&a.gain)
        .then(a.rel.k.cmp(&b.rel.k))
        .then(inf_norm(&a.rel.s).cmp(&inf_norm(&b.rel.s)))
        .then(a.rel.s.cmp(&b.rel.s))
}

/// Result of [`greedy_neighborhood`].
#[derive(Debug, Clone)]
pub struct NeighborhoodRun {
    pub set: NeighborhoodSet,
    /// Pattern size predicted from relation sizes.
    pub predicted_nnz: usize,
}

/// Greedy neighborhood design (ties: smaller `k`, smaller `‖s‖_∞`, then
/// lexicographic `s`): repeatedly take the column scale with the
/// largest remaining weighted bound mass and give it its best unused
/// relation, until the predicted pattern holds at least `k` entries.
///
/// `sigma` holds one weight per scale, coarsest first.
pub fn greedy_neighborhood(
    params: &DecayBoundParams,
    sigma: &[f64],
    k: usize,
    map: &IndexMap,
) -> Result<NeighborhoodRun> {
    params.check()?;
    let d = map.grid().dim;
    let j0 = map.coarse_scale();
    let scales: Vec<usize> = (j0..=map.finest_scale().max(j0)).collect();
    if sigma.len() < scales.len() {
        return Err(Error::BadScheme(format!(
            "{} scale weights for {} scales",
            sigma.len(),
            scales.len()
        )));
    }
    // Candidates per column scale, best first.
    let lists: Vec<Vec<Scored>> = par::map_slice(&scales, |&j| {
        let mut v: Vec<Scored> = scales
            .iter()
            .flat_map(|&kk| {
                let m = j.min(kk);
                let count = rows_per_column(map, j, kk) as f64;
                all_shifts(m, d).into_iter().map(move |s| {
                    let u = decay_bound(params, j, kk, &s[..d]);
                    Scored {
                        gain: u * u * count,
                        rel: Relation { j, k: kk, s },
                    }
                })
            })
            .collect();
        v.sort_by(cmp_candidates);
        v
    });
    let mut gamma: Vec<f64> = lists
        .iter()
        .enumerate()
        .map(|(i, l)| l.iter().map(|c| c.gain).sum::<f64>() / (sigma[i] * sigma[i]))
        .collect();
    let mut cursor = vec![0usize; scales.len()];
    let mut set = NeighborhoodSet::new(d);
    let mut predicted = 0usize;
    while predicted < k {
        let mut best: Option<usize> = None;
        for i in 0..scales.len() {
            if cursor[i] < lists[i].len() && best.is_none_or(|b| gamma[i] > gamma[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else {
            return Err(Error::BudgetExceeded(format!(
                "all relations used with {predicted} < {k} entries"
            )));
        };
        let c = lists[i][cursor[i]];
        cursor[i] += 1;
        gamma[i] -= c.gain / (sigma[i] * sigma[i]);
        if cursor[i] == lists[i].len() {
            gamma[i] = 0.0;
        }
        set.push(c.rel);
        predicted += relation_size(map, c.rel.j, c.rel.k);
    }
    Ok(NeighborhoodRun {
        set,
        predicted_nnz: predicted,
    })
}

/// Positions `(row, col)` of a sparsity pattern, grouped by column with
/// rows sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    pub size: usize,
    pub columns: Vec<Vec<u32>>,
}

impl SparsityMask {
    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.columns[col].binary_search(&(row as u32)).is_ok()
    }

    pub fn full(size: usize) -> Self {
        Self {
            size,
            columns: vec![(0..size as u32).collect(); size],
        }
    }
}

/// All `(μ, λ)` such that `(j(λ), (k(μ), s_{λ,μ}))` is in `nbh`.
pub fn expand_pattern(nbh: &NeighborhoodSet, map: &IndexMap) -> Result<SparsityMask> {
    nbh.validate(map)?;
    let d = map.grid().dim;
    if nbh.dim() != d {
        return Err(Error::BadShape(format!(
            "neighborhood for d = {} applied to d = {d}",
            nbh.dim()
        )));
    }
    let j0 = map.coarse_scale();
    let nscales = map.finest_scale().max(j0) - j0 + 1;
    let mut by_scale: Vec<Vec<Relation>> = vec![Vec::new(); nscales];
    for r in nbh.relations() {
        by_scale[r.j - j0].push(*r);
    }
    let columns = par::map_range(map.len(), |col| {
        let lambda = map.from_flat(col);
        let mut rows = Vec::new();
        for r in &by_scale[lambda.scale - j0] {
            push_rows(map, &lambda, r, &mut rows);
        }
        rows.sort_unstable();
        rows.dedup();
        rows
    });
    Ok(SparsityMask {
        size: map.len(),
        columns,
    })
}

fn push_rows(map: &IndexMap, lambda: &WaveletIndex, r: &Relation, rows: &mut Vec<u32>) {
    let d = map.grid().dim;
    let (j, k) = (r.j, r.k);
    let side_k = 1usize << k;
    let fan = 1usize << k.saturating_sub(j);
    // per-axis base position at scale k
    let mut base = [0usize; MAX_DIM];
    for a in 0..d {
        if k <= j {
            let m = (lambda.pos[a] >> (j - k)) as i64;
            base[a] = (m + r.s[a]).rem_euclid(side_k as i64) as usize;
        } else {
            let m = lambda.pos[a] as i64;
            base[a] = (m + r.s[a]).rem_euclid(1i64 << j) as usize * fan;
        }
    }
    let total = fan.pow(d as u32);
    let orients: Vec<u8> = if k == map.coarse_scale() {
        (0..(1u8 << d)).collect()
    } else {
        (1..(1u8 << d)).collect()
    };
    for o in orients {
        for f in 0..total {
            let mut pos = [0usize; MAX_DIM];
            let mut rest = f;
            for a in (0..d).rev() {
                pos[a] = base[a] + rest % fan;
                rest /= fan;
            }
            let mu = WaveletIndex {
                scale: k,
                pos,
                orient: o,
            };
            rows.push(map.to_flat(&mu).expect("rows stay in range") as u32);
        }
    }
}

/// Entries of `theta` on `mask`.
pub fn project_theta(theta: &ThetaMatrix, mask: &SparsityMask) -> Result<SparseTheta> {
    let size = crate::theta::CoeffOperator::size(theta);
    if mask.size != size {
        return Err(Error::BadShape(format!(
            "mask of size {} for a matrix of size {size}",
            mask.size
        )));
    }
    let columns = par::map_range(size, |c| {
        let col = theta.column(c);
        mask.columns[c].iter().map(|&r| (r, col[r as usize])).collect()
    });
    Ok(SparseTheta::from_columns(size, columns)?.with_meta(theta.meta()))
}

/// Outcome of [`verify_decay`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// Smallest constant making the bound hold on every pair with a
    /// positive bound.
    pub c_hat: f64,
    /// Pair `(row, col)` attaining `c_hat`.
    pub argmax: Option<(usize, usize)>,
    /// Fitted constant per scale pair `(j, k)` (column scale, row scale).
    pub per_scale: BTreeMap<(usize, usize), f64>,
    /// Pairs violating the bound with constant `c_hat`: nonzero entries where
    /// the bound vanishes.
    pub violations: Vec<(usize, usize)>,
    /// Pairs whose support distance exceeds the support of `f`.
    pub beyond_support: usize,
    /// Nonzero entries among those.
    pub nonzero_beyond_support: usize,
}

/// Fits `C` in `|θ_{λ,μ}| ≤ C 2^{-(M+d/2)|j-k|} 2^{-(M+d)min(j,k)} f(dist(λ,μ))`.
pub fn verify_decay(theta: &ThetaMatrix, params: &DecayBoundParams, map: &IndexMap) -> Result<DecayReport> {
    let size = crate::theta::CoeffOperator::size(theta);
    if map.len() != size {
        return Err(Error::BadShape(format!("index map of {} for size {size}", map.len())));
    }
    let d = map.grid().dim;
    let unit = DecayBoundParams { c_m: 1.0, ..*params };
    let per_column = par::map_range(size, |c| {
        let lambda = map.from_flat(c);
        let col = theta.column(c);
        let mut best = (0.0f64, None);
        let mut scales: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut zero_bound = Vec::new();
        let mut beyond = 0usize;
        for (r, &v) in col.iter().enumerate() {
            let mu = map.from_flat(r);
            let dist = wavelet_distance(&lambda, &mu, params.support_const, d);
            let f = params.bound.eval(dist);
            if f == 0.0 {
                beyond += 1;
            }
            let b = unit.scale_factor(d, lambda.scale, mu.scale) * f;
            if b > 0.0 {
                let ratio = v.abs() / b;
                let e = scales.entry((lambda.scale, mu.scale)).or_insert(0.0);
                *e = e.max(ratio);
                if ratio > best.0 {
                    best = (ratio, Some((r, c)));
                }
            } else if v != 0.0 {
                zero_bound.push((r, c));
            }
        }
        (best, scales, zero_bound, beyond)
    });
    let mut report = DecayReport {
        c_hat: 0.0,
        argmax: None,
        per_scale: BTreeMap::new(),
        violations: Vec::new(),
        beyond_support: 0,
        nonzero_beyond_support: 0,
    };
    for ((ratio, at), scales, zeros, beyond) in per_column {
        if ratio > report.c_hat {
            report.c_hat = ratio;
            report.argmax = at;
        }
        for (key, v) in scales {
            let e = report.per_scale.entry(key).or_insert(0.0);
            *e = e.max(v);
        }
        report.nonzero_beyond_support += zeros.len();
        report.violations.extend(zeros);
        report.beyond_support += beyond;
    }
    Ok(report)
}
