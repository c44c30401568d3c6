//! Windowed-convolution approximation of a spatially varying blur: split the
//! image into `2^l x 2^l` windows, convolve each masked window with the PSF
//! sampled at its center, and sum.

use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernel::KernelField;
use crate::operator::LinearOperator;
use crate::par;

/// One window: its pixel support, weight mask and PSF sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Row-major over `rows x cols`.
    pub mask: Vec<f64>,
    /// Continuous coordinates of the window center.
    pub center: [f64; 2],
}

/// Partition of an `n x n` image into weighted windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLayout {
    pub n: usize,
    pub l: usize,
    pub overlap: f64,
    pub windows: Vec<Window>,
}

/// 1D weights of window `a` among `count` windows of width `w`: indicator of
/// `[a w, (a+1) w)` without overlap, otherwise a hat centered on the window
/// center reaching zero at the neighbouring centers (flat beyond the first
/// and last centers).
fn axis_weights(n: usize, count: usize, a: usize, overlap: bool) -> (Range<usize>, Vec<f64>) {
    let w = n / count;
    if !overlap || count == 1 {
        return (a * w..(a + 1) * w, vec![1.0; w]);
    }
    let center = |b: usize| (b as f64 + 0.5) * w as f64 - 0.5;
    let c = center(a);
    let weight = |i: usize| {
        let x = i as f64;
        if (a == 0 && x <= c) || (a == count - 1 && x >= c) {
            return 1.0;
        }
        if x < c {
            let left = center(a - 1);
            if x <= left {
                0.0
            } else {
                1.0 - (c - x) / (c - left)
            }
        } else {
            let right = center(a + 1);
            if x >= right {
                0.0
            } else {
                (right - x) / (right - c)
            }
        }
    };
    let lo = if a == 0 { 0 } else { a * w - w / 2 };
    let hi = if a == count - 1 { n } else { (a + 1) * w + w / 2 };
    let range = lo..hi;
    let weights = range.clone().map(weight).collect();
    (range, weights)
}

pub fn make_layout(n: usize, l: usize, overlap: f64) -> Result<WindowLayout> {
    if !n.is_power_of_two() || l >= usize::BITS as usize || (1usize << l) > n {
        return Err(Error::BadLayout(format!("2^{l} windows do not fit a side of {n}")));
    }
    let overlapping = if overlap == 0.0 {
        false
    } else if overlap == 0.5 {
        true
    } else {
        return Err(Error::BadLayout(format!("overlap {overlap} not in {{0, 0.5}}")));
    };
    let count = 1usize << l;
    let w = n / count;
    let axes: Vec<(Range<usize>, Vec<f64>)> =
        (0..count).map(|a| axis_weights(n, count, a, overlapping)).collect();
    let mut windows = Vec::with_capacity(count * count);
    for a in 0..count {
        for b in 0..count {
            let (rows, wr) = &axes[a];
            let (cols, wc) = &axes[b];
            let mask = wr.iter().flat_map(|x| wc.iter().map(move |y| x * y)).collect();
            let c = |k: usize| ((k as f64 + 0.5) * w as f64 - 0.5) / n as f64;
            windows.push(Window {
                rows: rows.clone(),
                cols: cols.clone(),
                mask,
                center: [c(a), c(b)],
            });
        }
    }
    Ok(WindowLayout {
        n,
        l,
        overlap,
        windows,
    })
}

impl WindowLayout {
    /// Side length of each window's support (before PSF padding).
    pub fn extent(&self) -> usize {
        let w = self.n >> self.l;
        if self.overlap > 0.0 && self.l > 0 {
            (2 * w).min(self.n)
        } else {
            w
        }
    }

    /// Operation count with the window extent of this layout.
    pub fn opcount(&self, kappa_px: usize) -> f64 {
        opcount_with_extent(self.l, self.extent(), kappa_px)
    }
}

fn opcount_with_extent(l: usize, extent: usize, kappa_px: usize) -> f64 {
    let side = (extent + kappa_px) as f64;
    4f64.powi(l as i32) * side * side * side.log2()
}

/// `2^{2l} (n/2^l + κ_px)^2 log2(n/2^l + κ_px)`, `κ_px` the PSF width in pixels.
pub fn wc_opcount(n: usize, l: usize, kappa_px: usize) -> f64 {
    opcount_with_extent(l, n >> l, kappa_px)
}

/// 2D FFT of a fixed size.
struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Fft2 {
    fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let (rp, cp) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for row in buf.chunks_mut(self.cols) {
            rp.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = buf[r * self.cols + c];
            }
            cp.process(&mut col);
            for r in 0..self.rows {
                buf[r * self.cols + c] = col[r];
            }
        }
        if inverse {
            let s = 1.0 / (self.rows * self.cols) as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Spectrum of a `k x k` real kernel zero-padded to this size.
    fn spectrum(&self, kernel: &[f64], k: usize) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.rows * self.cols];
        for i in 0..k {
            for j in 0..k {
                buf[i * self.cols + j].re = kernel[i * k + j];
            }
        }
        self.run(&mut buf, false);
        buf
    }

    /// Full linear convolution of an `h x w` input with a kernel spectrum.
    fn convolve(&self, input: &[f64], h: usize, w: usize, spectrum: &[Complex<f64>]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.rows * self.cols];
        for i in 0..h {
            for j in 0..w {
                buf[i * self.cols + j].re = input[i * w + j];
            }
        }
        self.run(&mut buf, false);
        buf.iter_mut().zip(spectrum).for_each(|(a, b)| *a *= b);
        self.run(&mut buf, true);
        buf.iter().map(|c| c.re).collect()
    }
}

#[derive(Debug)]
struct WindowPlan {
    fwd: Fft2,
    fwd_kernel: Vec<Complex<f64>>,
    adj: Fft2,
    adj_kernel: Vec<Complex<f64>>,
}

/// The windowed-convolution operator for a layout and kernel field.
#[derive(Debug)]
pub struct WindowedConvolution {
    layout: WindowLayout,
    grid: Grid,
    radius: usize,
    plans: Vec<WindowPlan>,
}

impl WindowedConvolution {
    pub fn new(layout: WindowLayout, field: &KernelField) -> Result<Self> {
        let grid = field.grid();
        if grid.dim != 2 || grid.n != layout.n {
            return Err(Error::BadShape(format!(
                "layout for {0}x{0} images, field on {1:?}",
                layout.n, grid
            )));
        }
        let r = field.radius();
        let k = 2 * r + 1;
        let mut planner = FftPlanner::new();
        let mut plans = Vec::with_capacity(layout.windows.len());
        for w in &layout.windows {
            let psf = field.psf_at(&w.center)?;
            let flipped: Vec<f64> = psf.iter().rev().copied().collect();
            let (h, wd) = (w.rows.len(), w.cols.len());
            let fwd = Fft2::new(&mut planner, h + k - 1, wd + k - 1);
            let adj = Fft2::new(&mut planner, h + 2 * (k - 1), wd + 2 * (k - 1));
            plans.push(WindowPlan {
                fwd_kernel: fwd.spectrum(&psf, k),
                fwd,
                adj_kernel: adj.spectrum(&flipped, k),
                adj,
            });
        }
        Ok(Self {
            layout,
            grid,
            radius: r,
            plans,
        })
    }

    pub fn layout(&self) -> &WindowLayout {
        &self.layout
    }

    /// Operation count of this operator, PSF width `2r + 1`.
    pub fn opcount(&self) -> f64 {
        self.layout.opcount(2 * self.radius + 1)
    }

    fn sum_patches(&self, patches: Vec<(isize, isize, usize, usize, Vec<f64>)>) -> Vec<f64> {
        let n = self.grid.n as isize;
        let mut out = vec![0.0; self.grid.len()];
        for (r0, c0, h, w, vals) in patches {
            for i in 0..h {
                let r = r0 + i as isize;
                if !(0..n).contains(&r) {
                    continue;
                }
                for j in 0..w {
                    let c = c0 + j as isize;
                    if (0..n).contains(&c) {
                        out[(r * n + c) as usize] += vals[i * w + j];
                    }
                }
            }
        }
        out
    }
}

impl LinearOperator for WindowedConvolution {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.grid.len());
        let n = self.grid.n;
        let r = self.radius as isize;
        let idx: Vec<usize> = (0..self.plans.len()).collect();
        let patches = par::map_slice(&idx, |&i| {
            let w = &self.layout.windows[i];
            let (h, wd) = (w.rows.len(), w.cols.len());
            let mut input = vec![0.0; h * wd];
            for (a, row) in w.rows.clone().enumerate() {
                for (b, col) in w.cols.clone().enumerate() {
                    input[a * wd + b] = w.mask[a * wd + b] * u[row * n + col];
                }
            }
            let plan = &self.plans[i];
            let full = plan.fwd.convolve(&input, h, wd, &plan.fwd_kernel);
            (
                w.rows.start as isize - r,
                w.cols.start as isize - r,
                plan.fwd.rows,
                plan.fwd.cols,
                full,
            )
        });
        self.sum_patches(patches)
    }

    fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len());
        let n = self.grid.n as isize;
        let r = self.radius as isize;
        let k = 2 * self.radius;
        let idx: Vec<usize> = (0..self.plans.len()).collect();
        let patches = par::map_slice(&idx, |&i| {
            let w = &self.layout.windows[i];
            let (h, wd) = (w.rows.len(), w.cols.len());
            let (eh, ew) = (h + k, wd + k);
            let (r0, c0) = (w.rows.start as isize - r, w.cols.start as isize - r);
            let mut ext = vec![0.0; eh * ew];
            for a in 0..eh {
                let row = r0 + a as isize;
                if !(0..n).contains(&row) {
                    continue;
                }
                for b in 0..ew {
                    let col = c0 + b as isize;
                    if (0..n).contains(&col) {
                        ext[a * ew + b] = v[(row * n + col) as usize];
                    }
                }
            }
            let plan = &self.plans[i];
            let full = plan.adj.convolve(&ext, eh, ew, &plan.adj_kernel);
            let cols = plan.adj.cols;
            let mut out = vec![0.0; h * wd];
            for a in 0..h {
                for b in 0..wd {
                    out[a * wd + b] = w.mask[a * wd + b] * full[(a + k) * cols + b + k];
                }
            }
            (w.rows.start as isize, w.cols.start as isize, h, wd, out)
        });
        self.sum_patches(patches)
    }
}

/// `Σ_w PSF_w * (m_w u)`.
pub fn wc_apply(layout: &WindowLayout, field: &KernelField, u: &[f64]) -> Result<Vec<f64>> {
    field.grid().check(u)?;
    Ok(WindowedConvolution::new(layout.clone(), field)?.apply(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dot, norm2, sub};
    use crate::kernel::{apply_dense, make_field, KernelKind, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(kind: KernelKind, n: usize) -> KernelField {
        make_field(&KernelSpec::new(kind, Grid::square(n).unwrap()).reference_size(n)).unwrap()
    }

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f64>()).collect()
    }

    fn mask_sum(layout: &WindowLayout) -> Vec<f64> {
        let n = layout.n;
        let mut sum = vec![0.0; n * n];
        for w in &layout.windows {
            let wd = w.cols.len();
            for (a, r) in w.rows.clone().enumerate() {
                for (b, c) in w.cols.clone().enumerate() {
                    sum[r * n + c] += w.mask[a * wd + b];
                }
            }
        }
        sum
    }

    #[test]
    fn layouts() {
        let one = make_layout(16, 0, 0.0).unwrap();
        assert_eq!(one.windows.len(), 1);
        assert!(one.windows[0].mask.iter().all(|m| *m == 1.0));
        let four = make_layout(8, 1, 0.0).unwrap();
        assert_eq!(four.windows.len(), 4);
        for w in &four.windows {
            assert_eq!((w.rows.len(), w.cols.len()), (4, 4));
        }
        assert!(mask_sum(&four).iter().all(|s| *s == 1.0));
        for (n, l) in [(16, 1), (16, 2), (64, 3), (64, 4), (32, 5)] {
            let lay = make_layout(n, l, 0.5).unwrap();
            for s in mask_sum(&lay) {
                assert!((s - 1.0).abs() < 1e-12, "{s}");
            }
            assert!(lay.windows.iter().all(|w| w.rows.len() <= lay.extent()));
        }
        assert!(make_layout(8, 4, 0.0).is_err());
        assert!(make_layout(8, 1, 0.25).is_err());
    }

    #[test]
    fn single_window_is_exact_for_invariant_kernels() {
        let f = field(KernelKind::Convolution { sigma: 2.0 }, 32);
        let lay = make_layout(32, 0, 0.0).unwrap();
        let u = random(1024, 1);
        let exact = apply_dense(&f, &u).unwrap();
        let approx = wc_apply(&lay, &f, &u).unwrap();
        assert!(norm2(&sub(&exact, &approx)) <= 1e-8 * norm2(&exact));
    }

    #[test]
    fn identity_field_passes_through() {
        let f = field(KernelKind::Identity, 16);
        for (l, o) in [(0, 0.0), (2, 0.0), (2, 0.5)] {
            let u = random(256, 2);
            let out = wc_apply(&make_layout(16, l, o).unwrap(), &f, &u).unwrap();
            for (a, b) in out.iter().zip(&u) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Direct evaluation of `Σ_w PSF_w * (m_w u)` without FFTs.
    fn direct(layout: &WindowLayout, f: &KernelField, u: &[f64]) -> Vec<f64> {
        let n = layout.n as isize;
        let r = f.radius() as isize;
        let k = (2 * r + 1) as usize;
        let mut out = vec![0.0; u.len()];
        for w in &layout.windows {
            let psf = f.psf_at(&w.center).unwrap();
            let wd = w.cols.len();
            for (a, row) in w.rows.clone().enumerate() {
                for (b, col) in w.cols.clone().enumerate() {
                    let x = w.mask[a * wd + b] * u[row * layout.n + col];
                    for d0 in -r..=r {
                        for d1 in -r..=r {
                            let (y0, y1) = (row as isize + d0, col as isize + d1);
                            if (0..n).contains(&y0) && (0..n).contains(&y1) {
                                out[(y0 * n + y1) as usize] +=
                                    psf[(d0 + r) as usize * k + (d1 + r) as usize] * x;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn fft_path_matches_direct_sum_and_adjoint() {
        let f = field(KernelKind::GaussianRotation, 32);
        for (l, o) in [(1, 0.0), (2, 0.5), (3, 0.5)] {
            let lay = make_layout(32, l, o).unwrap();
            let op = WindowedConvolution::new(lay.clone(), &f).unwrap();
            let u = random(1024, 3 + l as u64);
            let v = random(1024, 30 + l as u64);
            let a = op.apply(&u);
            let b = direct(&lay, &f, &u);
            assert!(norm2(&sub(&a, &b)) < 1e-10 * norm2(&b));
            let lhs = dot(&a, &v);
            let rhs = dot(&u, &op.apply_adjoint(&v));
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
        }
    }

    #[test]
    fn error_shrinks_with_finer_partitions() {
        use crate::kernel::KernelOperator;
        use crate::metrics::{spectral_norm, PowerOptions};
        use crate::operator::Difference;
        let f = field(KernelKind::GaussianIsotropic, 64);
        let h = KernelOperator::new(&f).unwrap();
        let mut prev = f64::INFINITY;
        for l in 1..=4 {
            let wc = WindowedConvolution::new(make_layout(64, l, 0.0).unwrap(), &f).unwrap();
            let e = spectral_norm(&Difference(&h, &wc), &PowerOptions::default()).value;
            assert!(e < prev, "l = {l}: {e} >= {prev}");
            prev = e;
        }
    }

    #[test]
    fn interface_error_concentrates_near_window_boundaries() {
        use crate::kernel::KernelOperator;
        let n = 64;
        let f = field(KernelKind::GaussianRotation, n);
        let h = KernelOperator::new(&f).unwrap();
        let r = f.radius();
        let u = random(n * n, 12);
        let exact = h.apply(&u);
        for l in 2..=4 {
            let wc = WindowedConvolution::new(make_layout(n, l, 0.0).unwrap(), &f).unwrap();
            let w = n >> l;
            // within r pixels of an interface between two windows
            let near = |i: usize| (i % w < r || i % w >= w - r) && i >= r && i < n - r;
            let (mut band, mut total) = (0.0, 0.0);
            for (p, (a, b)) in exact.iter().zip(wc.apply(&u)).enumerate() {
                let e = (a - b) * (a - b);
                total += e;
                if near(p / n) || near(p % n) {
                    band += e;
                }
            }
            assert!(band >= 0.8 * total, "l = {l}: {}", band / total);
        }
    }

    #[test]
    fn opcount_formula() {
        assert_eq!(wc_opcount(64, 0, 0), 64.0 * 64.0 * 6.0);
        let v = wc_opcount(256, 3, 21);
        assert!((v - 53.0 * 53.0 * 53f64.log2() * 64.0).abs() < 1e-6);
        let (a, b) = (wc_opcount(256, 2, 0), wc_opcount(256, 3, 0));
        assert!(b < a);
        // same pixel count, only the log factor changes
        assert!((a / b - 64f64.log2() / 32f64.log2()).abs() < 1e-12);
        let lay = make_layout(64, 2, 0.5).unwrap();
        assert_eq!(lay.extent(), 32);
        assert_eq!(make_layout(64, 2, 0.0).unwrap().opcount(5), wc_opcount(64, 2, 5));
    }
}
