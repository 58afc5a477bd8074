//! `glu-scaling`: constructions, training runs, scaling sweeps, slope fits and
//! SVG figures from the command line.
//!
//! Exit codes: 0 success, 2 bad configuration or usage, 3 numerical failure
//! (aborted training, too few usable points for a fit), 4 I/O or data errors.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glu_scaling::experiments::Axis;
use glu_scaling::models::ArchKind;

use config::RunOptions;

// Training reallocates multi-megabyte matrices every step; glibc malloc keeps
// returning them to the OS, which costs as much as the arithmetic.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn from_core(e: glu_scaling::Error) -> Self {
        use glu_scaling::Error as E;
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            E::Shape { .. } | E::Unsupported(_) | E::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "glu-scaling",
    version,
    about = "Scaling experiments for shallow MLP, GLU and GQU approximators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an analytical MLP or GLU and report its dense-grid RMSE.
    Construct {
        #[arg(long)]
        arch: ArchKind,
        #[arg(long, default_value = "paper1d")]
        target: String,
        #[arg(long)]
        n: usize,
        /// Interval as `a,b`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [-1.0, 1.0], allow_negative_numbers = true)]
        domain: Vec<f64>,
        /// Checkpoint path; defaults to `<out-dir>/<arch>_n<n>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train each architecture once at width `--n`.
    Train {
        #[command(flatten)]
        options: RunOptions,
        /// TOML file with the same keys as the flags; flags win.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train over a grid of widths and fit log-log slopes.
    Sweep {
        #[command(flatten)]
        options: RunOptions,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit slopes to an existing records CSV.
    Fit {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "neurons")]
        axis: Axis,
    },
    /// Draw a checkpoint: curves and knots in 1D, a heatmap with hinges in 2D.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target drawn alongside a 1D model.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [-1.0, 1.0], allow_negative_numbers = true)]
        domain: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat a `train` or `sweep` exactly as recorded in its manifest.
    #[command(name = "rerun-from-manifest", alias = "rerun")]
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn with_file(options: RunOptions, config: Option<PathBuf>) -> CliResult<RunOptions> {
    let merged = match config {
        Some(path) => options.over(RunOptions::from_toml_file(&path)?),
        None => options,
    };
    merged.resolve()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Construct {
            arch,
            target,
            n,
            domain,
            out,
        } => commands::construct(arch, &target, n, (domain[0], domain[1]), out),
        Command::Train { options, config } => commands::train(&with_file(options, config)?),
        Command::Sweep { options, config } => commands::sweep(&with_file(options, config)?),
        Command::Fit { records, axis } => commands::fit(&records, axis),
        Command::Viz {
            checkpoint,
            target,
            domain,
            out,
        } => commands::viz(&checkpoint, target.as_deref(), (domain[0], domain[1]), &out),
        Command::Rerun { manifest, out_dir } => commands::rerun(&manifest, out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
