use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use waveblur::cli;
use waveblur::{Error, Result};

#[derive(Parser)]
#[command(name = "waveblur", version, about = "Sparse wavelet approximations of spatially varying blur")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Build the operator of a config and store it as WBTH1.
    BuildTheta {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply a stored operator to an image.
    Apply {
        #[arg(short, long)]
        theta: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Vanishing moments of the wavelets the operator was built with.
        #[arg(long, default_value_t = 10)]
        order: usize,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Run the deblurring experiment of a config file.
    Deblur { config: PathBuf },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("WAVEBLUR_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("WAVEBLUR_THREADS = `{value}` is not a positive integer")))?;
    waveblur::par::set_threads(threads).map_err(Error::Config)
}

fn execute(args: Args) -> Result<()> {
    configure_threads()?;
    match args.command {
        Command::Run { config } => {
            let out = cli::run(config)?;
            println!("{} rows -> {}", out.rows.len(), out.csv.display());
        }
        Command::BuildTheta { config, output } => {
            let sparse = cli::build_theta_file(config, &output)?;
            println!("{} nonzeros -> {}", sparse.nnz(), output.display());
        }
        Command::Apply {
            theta,
            input,
            output,
            order,
            levels,
        } => cli::apply_file(theta, input, output, order, levels)?,
        Command::Deblur { config } => {
            let out = cli::run_deblur(config)?;
            println!("{} rows -> {}", out.rows.len(), out.csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = execute(args);
    if let Err(e) = &outcome {
        eprintln!("waveblur: {e}");
    }
    ExitCode::from(cli::exit_code(&outcome) as u8)
}
