use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use waveblur::cli::{read_csv, Manifest, Row};
use waveblur::cli::report::{sha256_hex, CSV_COLUMNS};
use waveblur::image::{load_image, save_image, synth_image, SynthKind};
use waveblur::sparse::SparseTheta;
use waveblur::theta::apply_sparse;
use waveblur::wavelet::Basis;
use waveblur::Grid;

fn waveblur(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_waveblur"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("WAVEBLUR_THREADS", t),
        None => cmd.env_remove("WAVEBLUR_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn values(rows: &[Row], method: &str, metric: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.method == method && r.metric_name == metric)
        .map(|r| r.value)
        .collect()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "experiment = \"build\"\nwhatever = 3\n");
    assert_eq!(waveblur(&["run", &bad], None).status.code(), Some(2));
    let missing = dir.path().join("none.toml");
    assert_eq!(waveblur(&["run", missing.to_str().unwrap()], None).status.code(), Some(2));
    let good = write_config(dir.path(), "ok.toml", "experiment = \"build\"\nn = 8\nlevels = 2\n");
    assert_eq!(waveblur(&["run", &good], Some("zero")).status.code(), Some(2));
    assert_eq!(waveblur(&["frobnicate"], None).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let theta = dir.path().join("t.wbth");
    fs::write(&theta, b"WBTH1garbage").unwrap();
    let img = dir.path().join("in.pgm");
    save_image(&img, &synth_image(SynthKind::Ramp, 16, 0).unwrap()).unwrap();
    let out = dir.path().join("out.pgm");
    let status = waveblur(
        &["apply", "-t", theta.to_str().unwrap(), "-i", img.to_str().unwrap(), "-o", out.to_str().unwrap()],
        None,
    )
    .status;
    assert_eq!(status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn build_theta_then_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "b.toml",
        "experiment = \"build\"\nn = 16\nlevels = 3\norders = [2]\nreference_size = 16\nkernel = \"gaussian_rotation\"\n",
    );
    let theta = dir.path().join("op.wbth");
    let out = waveblur(&["build-theta", &config, "-o", theta.to_str().unwrap()], Some("1"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sparse = SparseTheta::load(&theta).unwrap();
    assert_eq!(sparse.size(), 256);

    let img = synth_image(SynthKind::GaussianBumps, 16, 4).unwrap();
    let input = dir.path().join("in.pgm");
    save_image(&input, &img).unwrap();
    let output = dir.path().join("out.png");
    let status = waveblur(
        &[
            "apply", "-t", theta.to_str().unwrap(), "-i", input.to_str().unwrap(), "-o",
            output.to_str().unwrap(), "--order", "2", "--levels", "3",
        ],
        None,
    )
    .status;
    assert!(status.success());
    let got = load_image(&output).unwrap();
    let quantized = load_image(&input).unwrap();
    let basis = Basis::daubechies(Grid::square(16).unwrap(), 3, 2).unwrap();
    let expected = apply_sparse(&sparse, &basis, &quantized.pixels).unwrap();
    for (g, e) in got.pixels.iter().zip(&expected) {
        assert!((g - e.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn direct_error_run_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let body = "experiment = \"direct_error\"\nn = 16\nlevels = 3\nreference_size = 16\n\
                methods = [\"threshold\", \"greedy\", \"algo2\", \"wc\"]\nbudgets = [1.0, 4.0]\n\
                wc_levels = [1, 2]\nwc_overlaps = [0.0, 0.5]\noutput_dir = \"res\"\n";
    let config = write_config(dir.path(), "e.toml", body);
    let out = waveblur(&["run", &config], Some("2"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("res/results.csv");
    let header = fs::read_to_string(&csv).unwrap();
    assert_eq!(header.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = read_csv(&csv).unwrap();
    for m in ["threshold_M2", "greedy_M2", "algo2_M2"] {
        assert_eq!(values(&rows, m, "spectral_error").len(), 2, "{m}");
    }
    assert_eq!(values(&rows, "wc_o0", "spectral_error").len(), 2);
    assert_eq!(values(&rows, "wc_o50", "spectral_error").len(), 2);
    assert!(rows.iter().all(|r| r.experiment == "direct_error" && r.value.is_finite()));

    let manifest = Manifest::load(dir.path().join("res/manifest.json")).unwrap();
    assert_eq!(manifest.config_sha256, sha256_hex(body.as_bytes()));
    assert_eq!(manifest.config, body);
    assert_eq!(manifest.seeds.power_seed, 0xC0FFEE);
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    assert!(manifest.artifacts.contains(&"results.csv".to_string()));
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let body = "experiment = \"direct_psnr\"\nn = 16\nlevels = 3\nreference_size = 16\n\
                images = [\"checkerboard\", \"text_like_bars\"]\nmethods = [\"greedy\", \"wc\"]\n\
                budgets = [2.0]\nwc_levels = [1]\n";
    let a = write_config(dir.path(), "a.toml", &format!("{body}output_dir = \"a\"\n"));
    let b = write_config(dir.path(), "b.toml", &format!("{body}output_dir = \"b\"\n"));
    assert!(waveblur(&["run", &a], Some("1")).status.success());
    assert!(waveblur(&["run", &b], None).status.success());
    let strip = |rows: Vec<Row>| -> Vec<(String, String, f64, f64)> {
        rows.into_iter()
            .map(|r| (r.method, r.metric_name, r.budget_ops, r.value))
            .collect()
    };
    let ra = strip(read_csv(dir.path().join("a/results.csv")).unwrap());
    let rb = strip(read_csv(dir.path().join("b/results.csv")).unwrap());
    assert_eq!(ra, rb);
    assert!(!ra.is_empty());
}

#[test]
fn deblur_subcommand_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "d.toml",
        "experiment = \"direct_error\"\nn = 16\nlevels = 2\nreference_size = 16\nimages = [\"ramp\"]\n\
         methods = [\"exact\", \"threshold\"]\nbudgets = [8.0]\nnoise_sigma = 0.01\nmax_iter = 300\n",
    );
    let out = waveblur(&["deblur", &config], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("out");
    let rows = read_csv(res.join("results.csv")).unwrap();
    assert!(rows.iter().all(|r| r.experiment == "deblur"));
    assert_eq!(values(&rows, "exact", "psnr").len(), 1);
    assert_eq!(values(&rows, "threshold_M2", "psnr").len(), 1);
    assert!(load_image(res.join("degraded_ramp.pgm")).is_ok());
    assert!(load_image(res.join("restored_exact.pgm")).is_ok());
}

#[test]
fn tabulated_kernel_from_psf_file() {
    use waveblur::kernel::{make_field, KernelKind, KernelSpec, PsfGrid};
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::square(16).unwrap();
    let field = make_field(&KernelSpec::new(KernelKind::GaussianIsotropic, grid).reference_size(16)).unwrap();
    PsfGrid::sample(&field, 4).unwrap().save(dir.path().join("psf.wbpsf")).unwrap();
    let config = write_config(
        dir.path(),
        "t.toml",
        "experiment = \"verify_bounds\"\nn = 16\nlevels = 3\nkernel = \"tabulated\"\npsf_file = \"psf.wbpsf\"\n\
         reference_size = 16\nbound_shape = \"constant\"\n",
    );
    let out = waveblur(&["run", &config], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(dir.path().join("out/results.csv")).unwrap();
    let c = values(&rows, "bounds_M2", "c_hat");
    assert_eq!(c.len(), 1);
    assert!(c[0].is_finite() && c[0] > 0.0);
}
