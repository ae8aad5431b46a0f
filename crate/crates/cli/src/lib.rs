//! `edgeflow` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (bad files,
//! inconsistent inputs, failed checks).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod check;
mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "edgeflow", version, about = "Invertible boundary-aware image rescaling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    General,
    Additive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncodingArg {
    Auto,
    Raw,
    Rle,
}

#[derive(Debug, Args)]
pub struct BamArgs {
    /// Boundary threshold in 8-bit luma units.
    #[arg(long = "T", default_value_t = 50.0)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    pub norm: NormArg,
    /// Gaussian blur sigma in pixels.
    #[arg(long, default_value_t = 1.4)]
    pub sigma: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an untrained model.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::General)]
        mode: ModeArg,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        bits: u8,
        /// All parameters zero instead of the training initialisation.
        #[arg(long)]
        zero: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write it with a CSV loss log.
    Train {
        /// key = value configuration file; every key is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training images (PPM).
        #[arg(long = "images", num_args = 1..)]
        images: Vec<PathBuf>,
        /// Use this many procedural scenes instead of image files.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Downscale an image to LR + boundary sidecars.
    Down {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        /// Also write the full-precision latents for an exact inverse.
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EncodingArg::Auto)]
        encoding: EncodingArg,
        #[command(flatten)]
        bam: BamArgs,
    },
    /// Reconstruct an HR image from LR + sidecars.
    Up {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of the sampled latents.
        #[arg(long = "sigma-z", default_value_t = 1.0)]
        sigma_z: f64,
        /// Invert exactly from a latent file written by `down --latent`.
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a boundary-aware mask.
    Bam {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        bits: u8,
        #[command(flatten)]
        bam: BamArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print PSNR-Y and SSIM-Y.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Statistics of the high-frequency residual of an image.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
    },
    /// Run the built-in invariant checks.
    Check {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match commands::dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
