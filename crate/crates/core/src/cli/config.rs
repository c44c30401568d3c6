//! Flat TOML experiment descriptions.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::DecayBoundParams;
use crate::deblur::SolverParams;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::image::{load_image, synth_image, Image, SynthKind};
use crate::kernel::{BoundFunction, BoundShape, KernelKind, KernelSpec, PsfGrid};
use crate::sparsify::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Build,
    DirectError,
    DirectPsnr,
    Deblur,
    VerifyBounds,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Build => "build",
            ExperimentKind::DirectError => "direct_error",
            ExperimentKind::DirectPsnr => "direct_psnr",
            ExperimentKind::Deblur => "deblur",
            ExperimentKind::VerifyBounds => "verify_bounds",
        }
    }
}

/// Approximation method named in a config's `methods` list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Largest `K` entries of `Θ`.
    Threshold,
    /// Weighted greedy selection with the config's sigma scheme.
    Greedy,
    /// Bound-driven neighborhood pattern.
    Algo2,
    /// Windowed convolutions.
    Wc,
    /// The exact blur operator.
    Exact,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Threshold => "threshold",
            Method::Greedy => "greedy",
            Method::Algo2 => "algo2",
            Method::Wc => "wc",
            Method::Exact => "exact",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::Threshold,
            Method::Greedy,
            Method::Algo2,
            Method::Wc,
            Method::Exact,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

fn default_n() -> usize {
    64
}
fn default_kernel() -> String {
    "gaussian_isotropic".into()
}
fn default_reference() -> usize {
    256
}
fn default_orders() -> Vec<usize> {
    vec![2]
}
fn default_levels() -> usize {
    4
}
fn default_methods() -> Vec<String> {
    vec!["threshold".into()]
}
fn default_overlaps() -> Vec<f64> {
    vec![0.0]
}
fn default_scheme() -> String {
    "dyadic".into()
}
fn default_seed() -> u64 {
    1
}
fn default_noise_seed() -> u64 {
    2
}
fn default_noise() -> f64 {
    0.02
}
fn default_bound() -> String {
    "inverse_linear".into()
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Experiment description. Relative paths are resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Synthetic generators: checkerboard, gaussian_bumps, text_like_bars, ramp.
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default)]
    pub image_paths: Vec<PathBuf>,
    /// identity, convolution, gaussian_isotropic, gaussian_rotation or
    /// tabulated.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    /// Standard deviation of the `convolution` kernel, reference pixels.
    #[serde(default)]
    pub kernel_sigma: Option<f64>,
    /// WBPSF1 file of the `tabulated` kernel.
    #[serde(default)]
    pub psf_file: Option<PathBuf>,
    #[serde(default = "default_reference")]
    pub reference_size: usize,
    #[serde(default)]
    pub support: Option<usize>,
    #[serde(default)]
    pub normalize: bool,
    /// Vanishing moments of the wavelets, one run per entry.
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Coefficient budgets as multiples of `N`.
    #[serde(default)]
    pub budgets: Vec<f64>,
    #[serde(default)]
    pub wc_levels: Vec<usize>,
    #[serde(default = "default_overlaps")]
    pub wc_overlaps: Vec<f64>,
    #[serde(default = "default_scheme")]
    pub sigma_scheme: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_noise_seed")]
    pub noise_seed: u64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Decay shape for verify_bounds and algo2: constant, inverse_linear
    /// or inverse_power:<p>.
    #[serde(default = "default_bound")]
    pub bound_shape: String,
    /// Order of the bound used by algo2; 1 by default.
    #[serde(default)]
    pub bound_order: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// A parsed config together with its raw text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Reads, parses and validates a config file. All failures are
/// [`Error::Config`].
pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let config = parse_config(&text)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let loaded = LoadedConfig { config, text, base };
    loaded.validate()?;
    Ok(loaded)
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl LoadedConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if !c.n.is_power_of_two() || c.n < 8 {
            return Err(config_err(format!("n = {} must be a power of two >= 8", c.n)));
        }
        let depth = c.n.trailing_zeros() as usize;
        if c.levels == 0 || c.levels > depth {
            return Err(config_err(format!("levels = {} outside 1..={depth}", c.levels)));
        }
        if c.orders.is_empty() || c.orders.iter().any(|&m| !(1..=10).contains(&m)) {
            return Err(config_err("orders must be a nonempty list within 1..=10"));
        }
        if c.budgets.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(config_err("budgets must be positive"));
        }
        if c.wc_levels.iter().any(|&l| 1 << l > c.n) {
            return Err(config_err("wc_levels exceed log2(n)"));
        }
        if c.wc_overlaps.iter().any(|&o| o != 0.0 && o != 0.5) {
            return Err(config_err("wc_overlaps must be 0 or 0.5"));
        }
        if !(c.noise_sigma >= 0.0 && c.noise_sigma.is_finite()) {
            return Err(config_err("noise_sigma must be >= 0"));
        }
        self.methods()?;
        self.scheme()?;
        self.bound()?;
        for p in &c.image_paths {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(config_err(format!("image {} not found", full.display())));
            }
        }
        for name in &c.images {
            name.parse::<SynthKind>().map_err(|e| config_err(e.to_string()))?;
        }
        if let Some(p) = &c.psf_file {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(config_err(format!("PSF file {} not found", full.display())));
            }
        }
        if c.kernel == "tabulated" && c.psf_file.is_none() {
            return Err(config_err("kernel `tabulated` needs psf_file"));
        }
        if c.kernel == "convolution" && c.kernel_sigma.is_none() {
            return Err(config_err("kernel `convolution` needs kernel_sigma"));
        }
        if !["identity", "convolution", "gaussian_isotropic", "gaussian_rotation", "tabulated"]
            .contains(&c.kernel.as_str())
        {
            return Err(config_err(format!("unknown kernel `{}`", c.kernel)));
        }
        let needs_images = matches!(c.experiment, ExperimentKind::DirectPsnr | ExperimentKind::Deblur);
        if needs_images && c.images.is_empty() && c.image_paths.is_empty() {
            return Err(config_err("this experiment needs images or image_paths"));
        }
        let needs_budgets = matches!(c.experiment, ExperimentKind::DirectError | ExperimentKind::DirectPsnr);
        let has_sparse = self.methods()?.iter().any(|m| {
            matches!(m, Method::Threshold | Method::Greedy | Method::Algo2)
        });
        if needs_budgets && has_sparse && c.budgets.is_empty() {
            return Err(config_err("budgets must be given for sparse methods"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::square(self.config.n).expect("validated side")
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.config
            .methods
            .iter()
            .map(|m| m.parse().map_err(|e: Error| config_err(e.to_string())))
            .collect()
    }

    pub fn scheme(&self) -> Result<Scheme> {
        self.config
            .sigma_scheme
            .parse()
            .map_err(|e: Error| config_err(e.to_string()))
    }

    pub fn bound(&self) -> Result<BoundFunction> {
        let s = self.config.bound_shape.as_str();
        let shape = match s {
            "constant" => BoundShape::Constant,
            "inverse_linear" => BoundShape::InverseLinear,
            _ => match s.strip_prefix("inverse_power:").map(str::parse::<f64>) {
                Some(Ok(p)) if p > 0.0 => BoundShape::InversePower(p),
                _ => return Err(config_err(format!("unknown bound shape `{s}`"))),
            },
        };
        Ok(BoundFunction::new(shape))
    }

    /// Bound parameters for the neighborhood design.
    pub fn pattern_params(&self) -> Result<DecayBoundParams> {
        Ok(DecayBoundParams::new(
            self.config.bound_order.unwrap_or(1),
            self.bound()?,
        ))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let c = &self.config;
        let kind = match c.kernel.as_str() {
            "identity" => KernelKind::Identity,
            "convolution" => KernelKind::Convolution {
                sigma: c.kernel_sigma.unwrap_or(1.0),
            },
            "gaussian_isotropic" => KernelKind::GaussianIsotropic,
            "gaussian_rotation" => KernelKind::GaussianRotation,
            _ => {
                let p = self.resolve(c.psf_file.as_deref().unwrap_or(Path::new("")));
                KernelKind::TabulatedPsfGrid(Arc::new(PsfGrid::load(p)?))
            }
        };
        let mut spec = KernelSpec::new(kind, self.grid()).reference_size(c.reference_size);
        spec.support = c.support;
        spec.normalize = c.normalize;
        Ok(spec)
    }

    pub fn solver(&self) -> SolverParams {
        let d = SolverParams::default();
        let c = &self.config;
        SolverParams {
            epsilon: c.epsilon.unwrap_or(d.epsilon),
            max_iter: c.max_iter.unwrap_or(d.max_iter),
            tol: c.tol.unwrap_or(d.tol),
            ..d
        }
    }

    /// Ground-truth images, named, synthetic ones first.
    pub fn images(&self) -> Result<Vec<(String, Image)>> {
        let c = &self.config;
        let mut out = Vec::new();
        for (i, name) in c.images.iter().enumerate() {
            let kind: SynthKind = name.parse()?;
            out.push((name.clone(), synth_image(kind, c.n, c.seed + i as u64)?));
        }
        for p in &c.image_paths {
            let img = load_image(self.resolve(p))?;
            if img.n != c.n {
                return Err(Error::BadShape(format!(
                    "{} has side {}, config n = {}",
                    p.display(),
                    img.n,
                    c.n
                )));
            }
            out.push((p.display().to_string(), img));
        }
        Ok(out)
    }
}
