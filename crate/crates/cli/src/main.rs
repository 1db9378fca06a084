use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Rasterise the `[phantom]` section to an image.
    Phantom,
    /// Forward project `io.phantom`, adding noise per `[noise]`.
    Project,
    /// Reconstruct from `io.data` (metamorphosis, lddmm or fbp).
    Reconstruct,
    /// Gated reconstruction from `io.gates`, or from a synthesised evolving phantom.
    Gated,
    /// SSIM and PSNR of `io.images` against `io.reference`.
    Metrics,
    /// Kernel width and regulariser sweeps.
    Sweep,
}

#[derive(Debug, Parser)]
#[command(
    name = "metamorph",
    version,
    about = "Metamorphosis-based indirect registration for parallel-beam tomography"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (sectioned TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Run(#[from] metamorph::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Run(_) => "run",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn thread_pool() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("METAMORPH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(vec![format!("METAMORPH_THREADS: expected a positive integer, got {raw:?}")])
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(vec![format!("METAMORPH_THREADS: {e}")]))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    thread_pool()?;
    let (text, base) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
            let base = path.parent().map(PathBuf::from).unwrap_or_default();
            (text, base)
        }
        None => (String::new(), PathBuf::new()),
    };
    let cfg = config::load(&text, &base, cli.command, cli.seed).map_err(CliError::Config)?;
    commands::run(cli.command, &cfg, &cli.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
