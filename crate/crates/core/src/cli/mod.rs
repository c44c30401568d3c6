//! Config-driven experiment runner behind the `waveblur` binary.

pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bounds::{expand_pattern, greedy_neighborhood, project_theta, verify_decay, DecayBoundParams};
use crate::deblur::{degrade, tv_deblur};
use crate::error::{Error, Result};
use crate::image::{save_image, Image};
use crate::kernel::{make_field, KernelField, KernelOperator};
use crate::metrics::{psnr, spectral_norm, x_to_2_error, PowerOptions, POWER_SEED};
use crate::operator::{Difference, LinearOperator};
use crate::par;
use crate::sparse::SparseTheta;
use crate::sparsify::{greedy_weighted, make_sigma, SigmaWeights};
use crate::theta::{
    apply_sparse, build_theta, build_theta_sparse, threshold_abs, Selection, ThetaMatrix,
    WaveletOperator, DENSE_THETA_BUDGET,
};
use crate::wavelet::Basis;
use crate::wc::{make_layout, WindowedConvolution};

pub use config::{load_config, ExperimentConfig, ExperimentKind, LoadedConfig, Method};
pub use report::{read_csv, write_csv, Manifest, Row, Seeds};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit status for an outcome: 0, 1 for runtime failures, 2 for
/// configuration errors.
pub fn exit_code(outcome: &Result<()>) -> i32 {
    match outcome {
        Ok(()) => 0,
        Err(Error::Config(_)) => 2,
        Err(_) => 1,
    }
}

/// What a run left on disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// Loads the config at `path`, runs it and writes `results.csv`,
/// `manifest.json` and any artifacts into its output directory.
pub fn run(path: impl AsRef<Path>) -> Result<RunOutput> {
    let loaded = load_config(path)?;
    run_loaded(&loaded)
}

/// [`run`] with the experiment kind forced to deblurring.
pub fn run_deblur(path: impl AsRef<Path>) -> Result<RunOutput> {
    let mut loaded = load_config(path)?;
    loaded.config.experiment = ExperimentKind::Deblur;
    loaded.validate()?;
    run_loaded(&loaded)
}

pub fn run_loaded(loaded: &LoadedConfig) -> Result<RunOutput> {
    let out = loaded.output_dir();
    fs::create_dir_all(&out)?;
    let mut ctx = Context::new(loaded)?;
    let rows = match loaded.config.experiment {
        ExperimentKind::Build => ctx.build(&out)?,
        ExperimentKind::DirectError => ctx.direct_error()?,
        ExperimentKind::DirectPsnr => ctx.direct_psnr()?,
        ExperimentKind::Deblur => ctx.deblur(&out)?,
        ExperimentKind::VerifyBounds => ctx.verify_bounds()?,
    };
    let csv = out.join("results.csv");
    write_csv(&csv, &rows)?;
    ctx.artifacts.push("results.csv".into());
    let manifest = out.join("manifest.json");
    make_manifest(loaded, ctx.artifacts).save(&manifest)?;
    Ok(RunOutput { rows, csv, manifest })
}

pub fn make_manifest(loaded: &LoadedConfig, artifacts: Vec<String>) -> Manifest {
    let c = &loaded.config;
    Manifest {
        version: VERSION.into(),
        experiment: c.experiment.name().into(),
        config_sha256: report::sha256_hex(loaded.text.as_bytes()),
        config: loaded.text.clone(),
        seeds: Seeds {
            image_seed: c.seed,
            noise_seed: c.noise_seed,
            power_seed: POWER_SEED,
        },
        threads: par::threads(),
        artifacts,
    }
}

/// Writes the operator described by the config to `output` (WBTH1): the
/// first order, and the first sparse method at the first budget when
/// budgets are given, else every nonzero of `Θ`.
pub fn build_theta_file(config_path: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<SparseTheta> {
    let loaded = load_config(config_path)?;
    let ctx = Context::new(&loaded)?;
    let order = loaded.config.orders[0];
    let basis = ctx.basis(order)?;
    let n_total = basis.len();
    let sparse = match (loaded.config.budgets.first(), ctx.sparse_methods().first()) {
        (Some(&l), Some(&m)) => {
            let k = budget_count(l, n_total);
            if n_total > DENSE_THETA_BUDGET && m == Method::Threshold {
                build_theta_sparse(&ctx.field, &basis, k)?
            } else {
                let theta = build_theta(&ctx.field, &basis)?;
                ctx.sparsify(&theta, &basis, m, k)?
            }
        }
        _ => build_theta(&ctx.field, &basis)?.to_sparse(),
    };
    sparse.save(output)?;
    Ok(sparse)
}

/// Applies a stored operator to an image file, writing the result.
pub fn apply_file(
    theta: impl AsRef<Path>,
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    order: usize,
    levels: usize,
) -> Result<()> {
    let sparse = SparseTheta::load(theta)?;
    let img = crate::image::load_image(input)?;
    let grid = crate::Grid::square(img.n)?;
    let basis = Basis::daubechies(grid, levels, order)?;
    if sparse.size() != basis.len() {
        return Err(Error::BadShape(format!(
            "matrix of size {} for a {}x{} image",
            sparse.size(),
            img.n,
            img.n
        )));
    }
    let v = apply_sparse(&sparse, &basis, &img.pixels)?;
    save_image(output, &Image::new(img.n, v)?)
}

fn budget_count(l: f64, n: usize) -> usize {
    (l * n as f64).round() as usize
}

fn method_label(m: Method, order: usize) -> String {
    format!("{}_M{order}", m.name())
}

fn wc_label(overlap: f64) -> String {
    format!("wc_o{}", (overlap * 100.0).round() as u32)
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Sparse approximation of one order at one budget, prepared for jobs.
struct SparseJob {
    order: usize,
    method: Method,
    budget: f64,
}

struct Context<'a> {
    loaded: &'a LoadedConfig,
    field: KernelField,
    exact: KernelOperator,
    artifacts: Vec<String>,
}

impl<'a> Context<'a> {
    fn new(loaded: &'a LoadedConfig) -> Result<Self> {
        let field = make_field(&loaded.kernel_spec()?)?;
        let exact = KernelOperator::new(&field)?;
        Ok(Self {
            loaded,
            field,
            exact,
            artifacts: Vec::new(),
        })
    }

    fn cfg(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn basis(&self, order: usize) -> Result<Basis> {
        Basis::daubechies(self.loaded.grid(), self.cfg().levels, order)
    }

    fn sigma(&self, basis: &Basis) -> Result<SigmaWeights> {
        make_sigma(self.loaded.scheme()?, basis.index_map())
    }

    fn sparse_methods(&self) -> Vec<Method> {
        self.loaded
            .methods()
            .unwrap_or_default()
            .into_iter()
            .filter(|m| matches!(m, Method::Threshold | Method::Greedy | Method::Algo2))
            .collect()
    }

    fn sparsify(&self, theta: &ThetaMatrix, basis: &Basis, method: Method, k: usize) -> Result<SparseTheta> {
        match method {
            Method::Threshold => Ok(threshold_abs(theta, Selection::Count(k))),
            Method::Greedy => greedy_weighted(theta, &self.sigma(basis)?, k),
            Method::Algo2 => {
                let map = basis.index_map();
                let scheme = self.loaded.scheme()?;
                let per_scale: Vec<f64> = (map.coarse_scale()..=map.finest_scale())
                    .map(|j| SigmaWeights::for_scale(&scheme, j - map.coarse_scale()))
                    .collect();
                let run = greedy_neighborhood(&self.loaded.pattern_params()?, &per_scale, k, map)?;
                project_theta(theta, &expand_pattern(&run.set, map)?)
            }
            Method::Wc | Method::Exact => Err(Error::Config(format!(
                "{} is not a sparsification method",
                method.name()
            ))),
        }
    }

    fn jobs(&self) -> Vec<SparseJob> {
        let mut jobs = Vec::new();
        for &order in &self.cfg().orders {
            for &method in &self.sparse_methods() {
                for &budget in &self.cfg().budgets {
                    jobs.push(SparseJob { order, method, budget });
                }
            }
        }
        jobs
    }

    fn thetas(&self) -> Result<Vec<(usize, Basis, ThetaMatrix)>> {
        self.cfg()
            .orders
            .iter()
            .map(|&m| {
                let basis = self.basis(m)?;
                let theta = build_theta(&self.field, &basis)?;
                Ok((m, basis, theta))
            })
            .collect()
    }

    fn wc_operators(&self) -> Result<Vec<(String, WindowedConvolution)>> {
        if !self.loaded.methods()?.contains(&Method::Wc) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for &overlap in &self.cfg().wc_overlaps {
            for &l in &self.cfg().wc_levels {
                let layout = make_layout(self.cfg().n, l, overlap)?;
                out.push((wc_label(overlap), WindowedConvolution::new(layout, &self.field)?));
            }
        }
        Ok(out)
    }

    fn row(&self, method: String, ops: f64, metric: &str, value: f64, wall_ms: f64) -> Row {
        Row {
            experiment: self.cfg().experiment.name().into(),
            method,
            budget_ops: ops,
            budget_over_n: ops / self.loaded.grid().len() as f64,
            metric_name: metric.into(),
            value,
            wall_ms,
        }
    }

    /// Runs every sparse job, calling `eval` with the approximation.
    fn sparse_rows<F>(&self, thetas: &[(usize, Basis, ThetaMatrix)], eval: F) -> Result<Vec<Row>>
    where
        F: Fn(&Basis, &ThetaMatrix, &SparseTheta) -> Result<Vec<(&'static str, f64)>> + Sync,
    {
        let jobs = self.jobs();
        let n_total = self.loaded.grid().len();
        let results = par::map_slice(&jobs, |job| -> Result<Vec<Row>> {
            let start = Instant::now();
            let (_, basis, theta) = thetas
                .iter()
                .find(|(m, _, _)| *m == job.order)
                .expect("theta for every order");
            let sparse = self.sparsify(theta, basis, job.method, budget_count(job.budget, n_total))?;
            let metrics = eval(basis, theta, &sparse)?;
            let wall = millis(start);
            Ok(metrics
                .into_iter()
                .map(|(name, v)| {
                    self.row(method_label(job.method, job.order), sparse.nnz() as f64, name, v, wall)
                })
                .collect())
        });
        let mut rows = Vec::new();
        for r in results {
            rows.extend(r?);
        }
        Ok(rows)
    }

    fn build(&mut self, out: &Path) -> Result<Vec<Row>> {
        let mut rows = Vec::new();
        let n_total = self.loaded.grid().len();
        for &order in &self.cfg().orders.clone() {
            let start = Instant::now();
            let basis = self.basis(order)?;
            let theta = build_theta(&self.field, &basis)?;
            let build_ms = millis(start);
            let full = theta.to_sparse();
            let name = format!("theta_M{order}.wbth");
            full.save(out.join(&name))?;
            self.artifacts.push(name);
            rows.push(self.row(format!("full_M{order}"), full.nnz() as f64, "nnz", full.nnz() as f64, build_ms));
            for method in self.sparse_methods() {
                for &l in &self.cfg().budgets.clone() {
                    let start = Instant::now();
                    let sparse = self.sparsify(&theta, &basis, method, budget_count(l, n_total))?;
                    let name = format!("theta_M{order}_{}_{l}N.wbth", method.name());
                    sparse.save(out.join(&name))?;
                    self.artifacts.push(name);
                    let label = method_label(method, order);
                    rows.push(self.row(label, sparse.nnz() as f64, "nnz", sparse.nnz() as f64, millis(start)));
                }
            }
        }
        Ok(rows)
    }

    fn direct_error(&self) -> Result<Vec<Row>> {
        let thetas = self.thetas()?;
        let opts = PowerOptions::default();
        let mut rows = self.sparse_rows(&thetas, |basis, theta, sparse| {
            let op = WaveletOperator::new(sparse, basis.clone())?;
            let e = spectral_norm(&Difference(&self.exact, &op), &opts);
            let x2 = x_to_2_error(theta, sparse, &self.sigma(basis)?)?;
            Ok(vec![("spectral_error", e.value), ("x_to_2_error", x2)])
        })?;
        let wcs = self.wc_operators()?;
        let wc_rows = par::map_slice(&wcs, |(label, wc)| {
            let start = Instant::now();
            let e = spectral_norm(&Difference(&self.exact, wc), &opts);
            self.row(label.clone(), wc.opcount(), "spectral_error", e.value, millis(start))
        });
        rows.extend(wc_rows);
        Ok(rows)
    }

    fn direct_psnr(&self) -> Result<Vec<Row>> {
        let images = self.loaded.images()?;
        let blurred: Vec<Vec<f64>> = images.iter().map(|(_, im)| self.exact.apply(&im.pixels)).collect();
        let mean_psnr = |op: &dyn LinearOperator| -> Result<f64> {
            let mut total = 0.0;
            for ((_, im), b) in images.iter().zip(&blurred) {
                total += psnr(&op.apply(&im.pixels), b, 1.0)?;
            }
            Ok(total / images.len() as f64)
        };
        let thetas = self.thetas()?;
        let mut rows = self.sparse_rows(&thetas, |basis, _, sparse| {
            let op = WaveletOperator::new(sparse, basis.clone())?;
            Ok(vec![("psnr_mean", mean_psnr(&op)?)])
        })?;
        for (label, wc) in self.wc_operators()? {
            let start = Instant::now();
            let v = mean_psnr(&wc)?;
            rows.push(self.row(label, wc.opcount(), "psnr_mean", v, millis(start)));
        }
        Ok(rows)
    }

    fn deblur(&mut self, out: &Path) -> Result<Vec<Row>> {
        let images = self.loaded.images()?;
        let sigma = self.cfg().noise_sigma;
        let params = self.loaded.solver();
        let degraded: Vec<Vec<f64>> = images
            .iter()
            .enumerate()
            .map(|(i, (_, im))| degrade(&self.exact, &im.pixels, sigma, self.cfg().noise_seed + i as u64))
            .collect();
        let n = self.cfg().n;
        let first = images[0].0.replace(['/', '\\', '.'], "_");
        let name = format!("degraded_{first}.pgm");
        save_image(out.join(&name), &Image::new(n, degraded[0].clone())?)?;
        self.artifacts.push(name);

        let thetas = self.thetas()?;
        let mut models: Vec<(String, f64, Box<dyn LinearOperator + '_>)> = Vec::new();
        if self.loaded.methods()?.contains(&Method::Exact) {
            models.push(("exact".into(), 0.0, Box::new(&self.exact)));
        }
        for job in self.jobs() {
            let (_, basis, theta) = thetas.iter().find(|(m, _, _)| *m == job.order).expect("theta");
            let sparse = self.sparsify(theta, basis, job.method, budget_count(job.budget, n * n))?;
            let nnz = sparse.nnz() as f64;
            models.push((
                method_label(job.method, job.order),
                nnz,
                Box::new(WaveletOperator::new(sparse, basis.clone())?),
            ));
        }
        for (label, wc) in self.wc_operators()? {
            let ops = wc.opcount();
            models.push((label, ops, Box::new(wc)));
        }
        let results = par::map_slice(&models, |(label, ops, op)| -> Result<(Vec<Row>, Vec<f64>)> {
            let start = Instant::now();
            let (mut p, mut iters, mut feasible) = (0.0, 0.0, 0.0);
            let mut first_restored = Vec::new();
            for (i, ((_, im), v)) in images.iter().zip(&degraded).enumerate() {
                let res = tv_deblur(op.as_ref(), v, sigma, &params)?;
                p += psnr(&res.u, &im.pixels, 1.0)?;
                iters += res.iterations as f64;
                // feasibility is measured against the operator used for restoration
                if res.residual <= 1.01 * res.alpha {
                    feasible += 1.0;
                }
                if i == 0 {
                    first_restored = res.u;
                }
            }
            let k = images.len() as f64;
            let wall = millis(start);
            Ok((
                vec![
                    self.row(label.clone(), *ops, "psnr", p / k, wall),
                    self.row(label.clone(), *ops, "iterations", iters / k, wall),
                    self.row(label.clone(), *ops, "feasible_fraction", feasible / k, wall),
                ],
                first_restored,
            ))
        });
        let mut rows = Vec::new();
        for ((label, ops, _), r) in models.iter().zip(results) {
            let (r, restored) = r?;
            rows.extend(r);
            let name = if *ops > 0.0 && label != "exact" {
                format!("restored_{label}_{}.pgm", *ops as usize)
            } else {
                format!("restored_{label}.pgm")
            };
            save_image(out.join(&name), &Image::new(n, restored)?)?;
            self.artifacts.push(name);
        }
        Ok(rows)
    }

    fn verify_bounds(&self) -> Result<Vec<Row>> {
        let kappa = self.field.truncation_radius();
        let bound = self.loaded.bound()?.with_support(kappa);
        let mut rows = Vec::new();
        for (order, basis, theta) in self.thetas()? {
            let start = Instant::now();
            let params = DecayBoundParams::new(order, bound);
            let report = verify_decay(&theta, &params, basis.index_map())?;
            let wall = millis(start);
            let label = format!("bounds_M{order}");
            let size = basis.len() as f64;
            rows.push(self.row(label.clone(), size, "c_hat", report.c_hat, wall));
            rows.push(self.row(label.clone(), size, "violations", report.violations.len() as f64, wall));
            rows.push(self.row(label.clone(), size, "beyond_support", report.beyond_support as f64, wall));
            rows.push(self.row(
                label.clone(),
                size,
                "nonzero_beyond_support",
                report.nonzero_beyond_support as f64,
                wall,
            ));
            for ((j, k), c) in &report.per_scale {
                rows.push(self.row(format!("{label}_j{j}_k{k}"), size, "c_scale", *c, wall));
            }
        }
        Ok(rows)
    }
}
