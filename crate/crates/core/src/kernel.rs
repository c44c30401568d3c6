//! Spatially varying kernel fields `K(x, y)` on `[0,1]^d` and the exact
//! blur operator `Hu(x) = ∫ K(x,y) u(y) dy` discretized by the rectangle rule.
//!
//! Covariances of the Gaussian fields are given in squared pixels of a
//! reference grid (`reference_size`, 256 by default) and converted to
//! continuous units, so the same field can be sampled at any resolution.
//! `K(·, y)` is the PSF at `y`; `y_1` runs along axis 0 (rows).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};
use crate::operator::{DenseMatrix, LinearOperator};
use crate::par;

/// Shape of a non-increasing bound function `f` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundShape {
    Constant,
    /// `1 / (1 + t)`.
    InverseLinear,
    /// `1 / (1 + t)^p`.
    InversePower(f64),
}

/// Non-increasing bound `f(t)`, optionally cut to zero beyond `support`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundFunction {
    pub shape: BoundShape,
    pub support: Option<f64>,
}

impl BoundFunction {
    pub fn new(shape: BoundShape) -> Self {
        Self {
            shape,
            support: None,
        }
    }

    pub fn with_support(mut self, kappa: f64) -> Self {
        self.support = Some(kappa);
        self
    }

    pub fn eval(&self, t: f64) -> f64 {
        if let Some(kappa) = self.support {
            if t > kappa {
                return 0.0;
            }
        }
        match self.shape {
            BoundShape::Constant => 1.0,
            BoundShape::InverseLinear => 1.0 / (1.0 + t),
            BoundShape::InversePower(p) => (1.0 + t).powf(-p),
        }
    }
}

/// Membership metadata of the class `A(M, f)`; not enforced pointwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularity {
    pub order: usize,
    pub bound: BoundFunction,
}

/// PSFs tabulated on an `s x s` grid of anchors at `((a+0.5)/s, (b+0.5)/s)`,
/// each a `p x p` patch of discrete weights on the working grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfGrid {
    pub anchors: usize,
    pub patch: usize,
    /// Row-major anchors, each patch row-major.
    pub data: Vec<f64>,
}

const PSF_MAGIC: &[u8; 6] = b"WBPSF1";

impl PsfGrid {
    pub fn new(anchors: usize, patch: usize, data: Vec<f64>) -> Result<Self> {
        if anchors == 0 || patch % 2 == 0 {
            return Err(Error::BadSpec(format!(
                "psf grid needs >= 1 anchor and an odd patch, got {anchors} / {patch}"
            )));
        }
        if data.len() != anchors * anchors * patch * patch {
            return Err(Error::BadSpec(format!(
                "psf grid {anchors}x{anchors} of {patch}x{patch} patches needs {} values, got {}",
                anchors * anchors * patch * patch,
                data.len()
            )));
        }
        Ok(Self {
            anchors,
            patch,
            data,
        })
    }

    /// Samples the PSFs of `field` at the anchors.
    pub fn sample(field: &KernelField, anchors: usize) -> Result<Self> {
        let r = field.radius();
        let patch = 2 * r + 1;
        let mut data = Vec::with_capacity(anchors * anchors * patch * patch);
        for a in 0..anchors {
            for b in 0..anchors {
                let y = [(a as f64 + 0.5) / anchors as f64, (b as f64 + 0.5) / anchors as f64, 0.0];
                data.extend(field.psf_at(&y)?);
            }
        }
        Self::new(anchors, patch, data)
    }

    pub fn patch_at(&self, a: usize, b: usize) -> &[f64] {
        let sz = self.patch * self.patch;
        let k = a * self.anchors + b;
        &self.data[k * sz..(k + 1) * sz]
    }

    /// Bilinear blend of the four anchor patches around `y`, clamped at the
    /// border anchors.
    pub fn interpolate(&self, y: &[f64]) -> Vec<f64> {
        let s = self.anchors;
        let axis = |v: f64| {
            let t = (v * s as f64 - 0.5).clamp(0.0, (s - 1) as f64);
            let i0 = (t.floor() as usize).min(s - 1);
            let i1 = (i0 + 1).min(s - 1);
            (i0, i1, t - i0 as f64)
        };
        let (a0, a1, fa) = axis(y[0]);
        let (b0, b1, fb) = axis(y[1]);
        let weights = [
            (a0, b0, (1.0 - fa) * (1.0 - fb)),
            (a0, b1, (1.0 - fa) * fb),
            (a1, b0, fa * (1.0 - fb)),
            (a1, b1, fa * fb),
        ];
        let mut out = vec![0.0; self.patch * self.patch];
        for (a, b, w) in weights {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.patch_at(a, b)) {
                *o += w * v;
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 8 * self.data.len());
        out.extend_from_slice(PSF_MAGIC);
        out.extend_from_slice(&(self.anchors as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..6] != PSF_MAGIC {
            return Err(Error::CorruptFile("missing WBPSF1 header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (anchors, patch) = (word(6), word(10));
        let count = anchors * anchors * patch * patch;
        if bytes.len() != 14 + 8 * count {
            return Err(Error::CorruptFile(format!(
                "expected {} payload bytes, found {}",
                8 * count,
                bytes.len() - 14
            )));
        }
        let data = bytes[14..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(anchors, patch, data).map_err(|e| Error::CorruptFile(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    Identity,
    /// Spatially invariant isotropic Gaussian, standard deviation in
    /// reference pixels.
    Convolution { sigma: f64 },
    /// `C(y) = diag(f(y_1), f(y_1))`, `f(t) = 2t`.
    GaussianIsotropic,
    /// `C(y) = R(y)^T diag(g, h) R(y)`, angle `atan((y_1-.5)/(y_2-.5))`,
    /// `g = 10 |y - c|`, `h = 2 |y - c|`.
    GaussianRotation,
    TabulatedPsfGrid(Arc<PsfGrid>),
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Identity => "identity",
            KernelKind::Convolution { .. } => "convolution",
            KernelKind::GaussianIsotropic => "gaussian_isotropic",
            KernelKind::GaussianRotation => "gaussian_rotation",
            KernelKind::TabulatedPsfGrid(_) => "tabulated_psf_grid",
        }
    }

    fn default_support(&self) -> usize {
        match self {
            KernelKind::Identity => 1,
            KernelKind::Convolution { sigma } => 2 * (3.0 * sigma).ceil().max(1.0) as usize + 1,
            KernelKind::GaussianIsotropic => 11,
            KernelKind::GaussianRotation => 21,
            KernelKind::TabulatedPsfGrid(g) => g.patch,
        }
    }
}

/// Parameter record for [`make_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub grid: Grid,
    /// Grid side on which covariances and `support` are expressed in pixels.
    pub reference_size: usize,
    /// PSF side in reference pixels; the kind's default when `None`.
    pub support: Option<usize>,
    /// Rescale each PSF so that its window weights sum to one.
    pub normalize: bool,
    /// Add `(0.5/n)^2 Id` to every covariance.
    pub regularize: bool,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, grid: Grid) -> Self {
        Self {
            kind,
            grid,
            reference_size: 256,
            support: None,
            normalize: false,
            regularize: true,
        }
    }

    pub fn reference_size(mut self, size: usize) -> Self {
        self.reference_size = size;
        self
    }
}

/// An evaluatable kernel bound to a sampling grid.
#[derive(Debug, Clone)]
pub struct KernelField {
    spec: KernelSpec,
    radius: usize,
    floor: f64,
}

/// Builds a field from its parameter record.
pub fn make_field(spec: &KernelSpec) -> Result<KernelField> {
    KernelField::new(spec.clone())
}

impl KernelField {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        let grid = spec.grid;
        if grid.dim > 2 {
            return Err(Error::BadSpec("kernel fields support d = 1 or 2".into()));
        }
        match &spec.kind {
            KernelKind::GaussianRotation | KernelKind::TabulatedPsfGrid(_) if grid.dim != 2 => {
                return Err(Error::BadSpec(format!("{} requires d = 2", spec.kind.name())));
            }
            KernelKind::Convolution { sigma } if !(*sigma > 0.0) => {
                return Err(Error::BadSpec(format!("convolution sigma {sigma} must be > 0")));
            }
            _ => {}
        }
        if spec.reference_size == 0 {
            return Err(Error::BadSpec("reference size must be positive".into()));
        }
        let radius = match &spec.kind {
            KernelKind::Identity => 0,
            KernelKind::TabulatedPsfGrid(g) => (g.patch - 1) / 2,
            kind => {
                let base = spec.support.unwrap_or_else(|| kind.default_support());
                let scaled = (base as f64 * grid.n as f64 / spec.reference_size as f64).round();
                let mut size = (scaled as usize).max(3);
                if size % 2 == 0 {
                    size += 1;
                }
                (size - 1) / 2
            }
        };
        let floor = if spec.regularize {
            (0.5 / grid.n as f64).powi(2)
        } else {
            0.0
        };
        Ok(Self {
            spec,
            radius,
            floor,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> Grid {
        self.spec.grid
    }

    pub fn kind(&self) -> &KernelKind {
        &self.spec.kind
    }

    /// Truncation half-width in working pixels.
    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `κ`: ∞-norm distance beyond which `K` vanishes.
    pub fn truncation_radius(&self) -> f64 {
        self.radius as f64 / self.grid().n as f64
    }

    /// Gaussians are smooth; the order is nominal. `f` is constant on the
    /// truncation support.
    pub fn regularity(&self, order: usize) -> Regularity {
        Regularity {
            order,
            bound: BoundFunction::new(BoundShape::Constant).with_support(self.truncation_radius()),
        }
    }

    fn window(&self) -> usize {
        2 * self.radius + 1
    }

    /// Covariance of the PSF at `y`, continuous units, row-major 2x2
    /// (only `[0]` is used in 1D).
    pub fn covariance(&self, y: &[f64]) -> Result<[f64; 4]> {
        let scale = (self.spec.reference_size as f64).powi(2);
        let c = match &self.spec.kind {
            KernelKind::Convolution { sigma } => {
                let v = sigma * sigma / scale;
                [v, 0.0, 0.0, v]
            }
            KernelKind::GaussianIsotropic => {
                let v = 2.0 * y[0] / scale;
                [v, 0.0, 0.0, v]
            }
            KernelKind::GaussianRotation => {
                let (dy1, dy2) = (y[0] - 0.5, y[1] - 0.5);
                let r = (dy1 * dy1 + dy2 * dy2).sqrt();
                let (g, h) = (10.0 * r / scale, 2.0 * r / scale);
                let theta = dy1.atan2(dy2);
                let (s, co) = theta.sin_cos();
                // R = [[co, -s], [s, co]]; C = R^T diag(g, h) R
                [
                    co * co * g + s * s * h,
                    -co * s * g + s * co * h,
                    -co * s * g + s * co * h,
                    s * s * g + co * co * h,
                ]
            }
            _ => return Err(Error::BadSpec(format!("{} has no covariance", self.kind().name()))),
        };
        let c = [c[0] + self.floor, c[1], c[2], c[3] + self.floor];
        let det = if self.grid().dim == 1 {
            c[0]
        } else {
            c[0] * c[3] - c[1] * c[2]
        };
        if !(det > 0.0) {
            return Err(Error::SingularCovariance(y[..self.grid().dim].to_vec()));
        }
        Ok(c)
    }

    fn gaussian(&self, c: &[f64; 4], delta: &[f64]) -> f64 {
        if self.grid().dim == 1 {
            let v = c[0];
            return (-0.5 * delta[0] * delta[0] / v).exp() / (2.0 * PI * v).sqrt();
        }
        let det = c[0] * c[3] - c[1] * c[2];
        let (d1, d2) = (delta[0], delta[1]);
        let q = (c[3] * d1 * d1 - (c[1] + c[2]) * d1 * d2 + c[0] * d2 * d2) / det;
        (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
    }

    /// Unnormalized kernel value, no truncation check.
    fn raw(&self, c: Option<&[f64; 4]>, x: &[f64], y: &[f64]) -> f64 {
        let d = self.grid().dim;
        let mut delta = [0.0; MAX_DIM];
        for a in 0..d {
            delta[a] = x[a] - y[a];
        }
        match c {
            Some(c) => self.gaussian(c, &delta[..d]),
            None => 0.0,
        }
    }

    /// Discrete PSF weights `K(y + δ/n, y) / n^d` over the truncation window,
    /// row-major in `δ ∈ [-r, r]^d`.
    pub fn psf_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        let grid = self.grid();
        let d = grid.dim;
        let w = self.window();
        let len = w.pow(d as u32);
        let r = self.radius as isize;
        let n = grid.n as f64;
        let mut out = match &self.spec.kind {
            KernelKind::Identity => vec![1.0],
            KernelKind::TabulatedPsfGrid(g) => g.interpolate(y),
            _ => {
                let c = self.covariance(y)?;
                let cell = n.powi(d as i32);
                (0..len)
                    .map(|k| {
                        let mut x = [0.0; MAX_DIM];
                        let mut rest = k;
                        for a in (0..d).rev() {
                            let off = (rest % w) as isize - r;
                            rest /= w;
                            x[a] = y[a] + off as f64 / n;
                        }
                        self.raw(Some(&c), &x, y) / cell
                    })
                    .collect()
            }
        };
        if self.spec.normalize {
            let s: f64 = out.iter().sum();
            if s > 0.0 {
                out.iter_mut().for_each(|v| *v /= s);
            }
        }
        Ok(out)
    }

    /// `K(x, y)`; zero when `‖x - y‖_∞ > κ`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let grid = self.grid();
        let d = grid.dim;
        let n = grid.n as f64;
        let dist = (0..d).map(|a| (x[a] - y[a]).abs()).fold(0.0, f64::max);
        let half_cell = 0.5 / n;
        if dist > self.truncation_radius() + 1e-12 {
            return Ok(0.0);
        }
        let cell = n.powi(d as i32);
        match &self.spec.kind {
            KernelKind::Identity => Ok(if dist < half_cell { cell } else { 0.0 }),
            KernelKind::TabulatedPsfGrid(_) => {
                let w = self.window();
                let r = self.radius as isize;
                let mut k = 0usize;
                for a in 0..d {
                    let off = ((x[a] - y[a]) * n).round() as isize;
                    if off.abs() > r {
                        return Ok(0.0);
                    }
                    k = k * w + (off + r) as usize;
                }
                Ok(cell * self.psf_at(y)?[k])
            }
            _ => {
                let c = self.covariance(y)?;
                let mut v = self.raw(Some(&c), x, y);
                if self.spec.normalize {
                    let z: f64 = self.psf_at_unnormalized_sum(&c, y);
                    if z > 0.0 {
                        v /= z;
                    }
                }
                Ok(v)
            }
        }
    }

    fn psf_at_unnormalized_sum(&self, c: &[f64; 4], y: &[f64]) -> f64 {
        let grid = self.grid();
        let d = grid.dim;
        let w = self.window();
        let r = self.radius as isize;
        let n = grid.n as f64;
        let cell = n.powi(d as i32);
        (0..w.pow(d as u32))
            .map(|k| {
                let mut x = [0.0; MAX_DIM];
                let mut rest = k;
                for a in (0..d).rev() {
                    x[a] = y[a] + ((rest % w) as isize - r) as f64 / n;
                    rest /= w;
                }
                self.raw(Some(c), &x, y) / cell
            })
            .sum()
    }
}

/// The exact discretized operator, stored as one truncated PSF stencil per
/// input pixel. Pixels outside the grid are treated as zero.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    grid: Grid,
    radius: usize,
    stencils: Vec<f64>,
}

impl KernelOperator {
    pub fn new(field: &KernelField) -> Result<Self> {
        let grid = field.grid();
        let w = field.window().pow(grid.dim as u32);
        let columns: Vec<Result<Vec<f64>>> =
            par::map_range(grid.len(), |y| field.psf_at(&grid.point(y)));
        let mut stencils = Vec::with_capacity(grid.len() * w);
        for c in columns {
            stencils.extend(c?);
        }
        Ok(Self {
            grid,
            radius: field.radius(),
            stencils,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn window_len(&self) -> usize {
        (2 * self.radius + 1).pow(self.grid.dim as u32)
    }

    /// PSF weights of input pixel `y`.
    pub fn stencil(&self, y: usize) -> &[f64] {
        let w = self.window_len();
        &self.stencils[y * w..(y + 1) * w]
    }

    /// `H[x, y]`, zero outside the window.
    pub fn entry(&self, x: usize, y: usize) -> f64 {
        let g = self.grid;
        let (cx, cy) = (g.coords(x), g.coords(y));
        let r = self.radius as isize;
        let w = 2 * self.radius + 1;
        let mut k = 0;
        for a in 0..g.dim {
            let off = cx[a] as isize - cy[a] as isize;
            if off.abs() > r {
                return 0.0;
            }
            k = k * w + (off + r) as usize;
        }
        self.stencil(y)[k]
    }

    /// Calls `f(y, k)` for every in-grid `y = x - δ`, `k` the stencil slot of δ.
    #[inline]
    fn for_window(&self, x: usize, mut f: impl FnMut(usize, usize)) {
        let g = self.grid;
        let n = g.n as isize;
        let r = self.radius as isize;
        let w = 2 * self.radius + 1;
        let c = g.coords(x);
        match g.dim {
            1 => {
                let x0 = c[0] as isize;
                for d0 in -r..=r {
                    let y0 = x0 - d0;
                    if (0..n).contains(&y0) {
                        f(y0 as usize, (d0 + r) as usize);
                    }
                }
            }
            _ => {
                let (x0, x1) = (c[0] as isize, c[1] as isize);
                for d0 in -r..=r {
                    let y0 = x0 - d0;
                    if !(0..n).contains(&y0) {
                        continue;
                    }
                    for d1 in -r..=r {
                        let y1 = x1 - d1;
                        if (0..n).contains(&y1) {
                            let k = (d0 + r) as usize * w + (d1 + r) as usize;
                            f((y0 * n + y1) as usize, k);
                        }
                    }
                }
            }
        }
    }

    /// Mirror of [`Self::for_window`]: every in-grid `x = y + δ`.
    #[inline]
    fn for_window_forward(&self, y: usize, mut f: impl FnMut(usize, usize)) {
        let g = self.grid;
        let n = g.n as isize;
        let r = self.radius as isize;
        let w = 2 * self.radius + 1;
        let c = g.coords(y);
        match g.dim {
            1 => {
                let y0 = c[0] as isize;
                for d0 in -r..=r {
                    let x0 = y0 + d0;
                    if (0..n).contains(&x0) {
                        f(x0 as usize, (d0 + r) as usize);
                    }
                }
            }
            _ => {
                let (y0, y1) = (c[0] as isize, c[1] as isize);
                for d0 in -r..=r {
                    let x0 = y0 + d0;
                    if !(0..n).contains(&x0) {
                        continue;
                    }
                    for d1 in -r..=r {
                        let x1 = y1 + d1;
                        if (0..n).contains(&x1) {
                            let k = (d0 + r) as usize * w + (d1 + r) as usize;
                            f((x0 * n + x1) as usize, k);
                        }
                    }
                }
            }
        }
    }
}

impl KernelOperator {
    /// Same as `apply`, scattering only the nonzero entries of `u`.
    pub fn apply_scatter(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.grid.len());
        let w = self.window_len();
        let mut out = vec![0.0; u.len()];
        for (y, &v) in u.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let st = &self.stencils[y * w..(y + 1) * w];
            self.for_window_forward(y, |x, k| out[x] += st[k] * v);
        }
        out
    }
}

impl LinearOperator for KernelOperator {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.grid.len());
        let w = self.window_len();
        par::map_range(self.grid.len(), |x| {
            let mut acc = 0.0;
            self.for_window(x, |y, k| acc += self.stencils[y * w + k] * u[y]);
            acc
        })
    }

    fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len());
        let w = self.window_len();
        par::map_range(self.grid.len(), |y| {
            let st = &self.stencils[y * w..(y + 1) * w];
            let mut acc = 0.0;
            self.for_window_forward(y, |x, k| acc += st[k] * v[x]);
            acc
        })
    }
}

/// `(Hu)[x_i] = n^-d Σ_j K(x_i, y_j) u[y_j]`.
pub fn apply_dense(field: &KernelField, u: &[f64]) -> Result<Vec<f64>> {
    field.grid().check(u)?;
    Ok(KernelOperator::new(field)?.apply(u))
}

/// `H* v`.
pub fn apply_adjoint_dense(field: &KernelField, v: &[f64]) -> Result<Vec<f64>> {
    field.grid().check(v)?;
    Ok(KernelOperator::new(field)?.apply_adjoint(v))
}

/// Default row budget of [`assemble_dense`] (64x64 images).
pub const DENSE_ROW_BUDGET: usize = 4096;

/// The `N x N` matrix of `H`, row `x`, column `y`.
pub fn assemble_dense(field: &KernelField, max_rows: usize) -> Result<DenseMatrix> {
    let grid = field.grid();
    let rows = grid.len();
    if rows > max_rows {
        return Err(Error::TooLarge(format!(
            "dense operator with {rows} rows exceeds the budget of {max_rows}"
        )));
    }
    let op = KernelOperator::new(field)?;
    let mut data = vec![0.0; rows * rows];
    for y in 0..rows {
        let st = op.stencil(y);
        op.for_window_forward(y, |x, k| data[x * rows + y] = st[k]);
    }
    Ok(DenseMatrix { grid, rows, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(kind: KernelKind, n: usize) -> KernelField {
        make_field(&KernelSpec::new(kind, Grid::square(n).unwrap()).reference_size(n)).unwrap()
    }

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn identity_field_is_a_grid_impulse() {
        let f = field(KernelKind::Identity, 16);
        let g = f.grid();
        assert_eq!(f.eval(&g.point(5), &g.point(5)).unwrap(), 256.0);
        assert_eq!(f.eval(&g.point(5), &g.point(6)).unwrap(), 0.0);
        let u = random(g.len(), 1);
        assert_eq!(apply_dense(&f, &u).unwrap(), u);
        assert_eq!(apply_adjoint_dense(&f, &u).unwrap(), u);
    }

    #[test]
    fn truncation_scales_with_the_grid() {
        let g = Grid::square(256).unwrap();
        let iso = make_field(&KernelSpec::new(KernelKind::GaussianIsotropic, g)).unwrap();
        assert_eq!(iso.radius(), 5);
        let rot = make_field(&KernelSpec::new(KernelKind::GaussianRotation, g)).unwrap();
        assert_eq!(rot.radius(), 10);
        let g64 = Grid::square(64).unwrap();
        let iso = make_field(&KernelSpec::new(KernelKind::GaussianIsotropic, g64)).unwrap();
        // round(11 * 64 / 256) = 3
        assert_eq!(iso.radius(), 1);
        let rot = make_field(&KernelSpec::new(KernelKind::GaussianRotation, g64)).unwrap();
        // round(21 * 64 / 256) = 5
        assert_eq!(rot.radius(), 2);
        let x = [0.5, 0.5];
        let y = [0.5 + 3.0 / 64.0, 0.5];
        assert_eq!(rot.eval(&y, &x).unwrap(), 0.0);
        assert!(rot.eval(&[0.5 + 2.0 / 64.0, 0.5], &[0.3, 0.5 - 1.0 / 64.0]).unwrap() == 0.0);
    }

    #[test]
    fn gaussian_peak_matches_formula() {
        let g = Grid::square(64).unwrap();
        let mut spec = KernelSpec::new(KernelKind::Convolution { sigma: 2.0 }, g).reference_size(64);
        spec.regularize = false;
        let f = make_field(&spec).unwrap();
        let var = (2.0f64 / 64.0).powi(2);
        let expect = 1.0 / (2.0 * PI * var);
        let v = f.eval(&[0.3, 0.6], &[0.3, 0.6]).unwrap();
        assert!((v - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn singular_covariance_only_without_regularization() {
        let g = Grid::square(32).unwrap();
        let mut spec = KernelSpec::new(KernelKind::GaussianRotation, g);
        spec.regularize = false;
        let f = make_field(&spec).unwrap();
        assert!(matches!(
            f.eval(&[0.5, 0.5], &[0.5, 0.5]),
            Err(Error::SingularCovariance(_))
        ));
        spec.regularize = true;
        let f = make_field(&spec).unwrap();
        let center = f.eval(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(center.is_finite() && center > 0.0);
        // continuity of the regularized peak as y approaches the center
        let near = f.eval(&[0.5 + 1e-7, 0.5], &[0.5 + 1e-7, 0.5]).unwrap();
        assert!((near - center).abs() < 1e-3 * center);
    }

    #[test]
    fn rotation_axes_follow_the_polar_angle() {
        // On the horizontal line through the center (y_1 = .5) the angle is 0
        // or π, so the long axis g lies along axis 0.
        let g = Grid::square(64).unwrap();
        let f = make_field(&KernelSpec::new(KernelKind::GaussianRotation, g).reference_size(64)).unwrap();
        let c = f.covariance(&[0.5, 0.9]).unwrap();
        assert!(c[0] > 4.0 * c[3]);
        assert!(c[1].abs() < 1e-15);
        let c = f.covariance(&[0.9, 0.5]).unwrap();
        assert!(c[3] > 4.0 * c[0]);
    }

    #[test]
    fn kernels_are_nonnegative_and_finite() {
        for kind in [KernelKind::GaussianIsotropic, KernelKind::GaussianRotation] {
            let f = field(kind, 16);
            let g = f.grid();
            for x in 0..g.len() {
                for y in (0..g.len()).step_by(7) {
                    let v = f.eval(&g.point(x), &g.point(y)).unwrap();
                    assert!(v.is_finite() && v >= 0.0);
                }
            }
        }
    }

    /// Zero-padded linear convolution by direct FFT-free definition on a
    /// padded canvas, computed with rustfft for the circular product.
    fn fft_convolve(u: &[f64], n: usize, psf: &[f64], r: usize) -> Vec<f64> {
        use rustfft::{num_complex::Complex, FftPlanner};
        let m = (n + 2 * r).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let fft2 = |buf: &mut Vec<Complex<f64>>, plan: &std::sync::Arc<dyn rustfft::Fft<f64>>| {
            for row in buf.chunks_mut(m) {
                plan.process(row);
            }
            let mut col = vec![Complex::new(0.0, 0.0); m];
            for c in 0..m {
                for r in 0..m {
                    col[r] = buf[r * m + c];
                }
                plan.process(&mut col);
                for r in 0..m {
                    buf[r * m + c] = col[r];
                }
            }
        };
        let mut a = vec![Complex::new(0.0, 0.0); m * m];
        for i in 0..n {
            for j in 0..n {
                a[i * m + j].re = u[i * n + j];
            }
        }
        let w = 2 * r + 1;
        let mut b = vec![Complex::new(0.0, 0.0); m * m];
        for i in 0..w {
            for j in 0..w {
                b[i * m + j].re = psf[i * w + j];
            }
        }
        fft2(&mut a, &fwd);
        fft2(&mut b, &fwd);
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= y;
        }
        fft2(&mut a, &inv);
        let scale = (m * m) as f64;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = a[(i + r) * m + (j + r)].re / scale;
            }
        }
        out
    }

    #[test]
    fn invariant_field_equals_fft_convolution() {
        let n = 32;
        let f = field(KernelKind::Convolution { sigma: 1.3 }, n);
        let u = random(n * n, 4);
        let direct = apply_dense(&f, &u).unwrap();
        let psf = f.psf_at(&[0.5, 0.5]).unwrap();
        let oracle = fft_convolve(&u, n, &psf, f.radius());
        for (a, b) in direct.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn normalized_invariant_field_preserves_constants_inside() {
        let n = 32;
        let mut spec = KernelSpec::new(KernelKind::Convolution { sigma: 1.0 }, Grid::square(n).unwrap())
            .reference_size(n);
        spec.normalize = true;
        let f = make_field(&spec).unwrap();
        let out = apply_dense(&f, &vec![1.0; n * n]).unwrap();
        let r = f.radius();
        for i in r..n - r {
            for j in r..n - r {
                assert!((out[i * n + j] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity_on_random_fields() {
        for (seed, kind) in [
            KernelKind::GaussianIsotropic,
            KernelKind::GaussianRotation,
            KernelKind::Convolution { sigma: 2.0 },
        ]
        .into_iter()
        .enumerate()
        {
            let f = field(kind, 32);
            let op = KernelOperator::new(&f).unwrap();
            for k in 0..10 {
                let u = random(1024, 100 * seed as u64 + k);
                let v = random(1024, 1000 + 100 * seed as u64 + k);
                let lhs = dot(&op.apply(&u), &v);
                let rhs = dot(&u, &op.apply_adjoint(&v));
                assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn scatter_matches_apply() {
        let f = field(KernelKind::GaussianRotation, 32);
        let op = KernelOperator::new(&f).unwrap();
        let mut u = random(1024, 5);
        u.iter_mut().step_by(3).for_each(|v| *v = 0.0);
        let a = op.apply(&u);
        let b = op.apply_scatter(&u);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_invariant_kernel_is_self_adjoint() {
        let f = field(KernelKind::Convolution { sigma: 1.5 }, 16);
        let u = random(256, 9);
        let a = apply_dense(&f, &u).unwrap();
        let b = apply_adjoint_dense(&f, &u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_rows_are_sampled_kernel_and_truncated() {
        let f = field(KernelKind::GaussianRotation, 16);
        let g = f.grid();
        let dense = assemble_dense(&f, DENSE_ROW_BUDGET).unwrap();
        let r = f.radius();
        for x in 0..g.len() {
            let nnz = dense.row(x).iter().filter(|v| **v != 0.0).count();
            assert!(nnz <= (2 * r + 1).pow(2));
            for y in 0..g.len() {
                let k = f.eval(&g.point(x), &g.point(y)).unwrap() / g.len() as f64;
                assert!((dense.get(x, y) - k).abs() < 1e-12 * (1.0 + k));
            }
        }
        let small = field(KernelKind::Identity, 128);
        assert!(matches!(assemble_dense(&small, DENSE_ROW_BUDGET), Err(Error::TooLarge(_))));
    }

    #[test]
    fn tabulated_grid_round_trips_and_matches_anchors() {
        let src = field(KernelKind::GaussianIsotropic, 32);
        let psfs = PsfGrid::sample(&src, 4).unwrap();
        let bytes = psfs.to_bytes();
        assert_eq!(&bytes[..6], b"WBPSF1");
        let back = PsfGrid::from_bytes(&bytes).unwrap();
        assert_eq!(back, psfs);
        assert!(matches!(
            PsfGrid::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptFile(_))
        ));
        let tab = field(KernelKind::TabulatedPsfGrid(Arc::new(back)), 32);
        let y = [(1.0 + 0.5) / 4.0, (2.0 + 0.5) / 4.0];
        let a = tab.psf_at(&y).unwrap();
        let b = src.psf_at(&y).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-15);
        }
        let x = [y[0] + 1.0 / 32.0, y[1]];
        let v = tab.eval(&x, &y).unwrap();
        let w = src.eval(&x, &y).unwrap();
        assert!((v - w).abs() < 1e-9 * w);
    }

    #[test]
    fn one_dimensional_fields() {
        let g = Grid::new(64, 1).unwrap();
        let f = make_field(&KernelSpec::new(KernelKind::GaussianIsotropic, g).reference_size(64)).unwrap();
        let op = KernelOperator::new(&f).unwrap();
        let u = random(64, 2);
        let v = random(64, 3);
        assert!((dot(&op.apply(&u), &v) - dot(&u, &op.apply_adjoint(&v))).abs() < 1e-12);
        assert!(make_field(&KernelSpec::new(KernelKind::GaussianRotation, g)).is_err());
    }
}
