//! `imqft`: command-line front end for the random field models.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use imqft_core::error::Error;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 1 for invalid input, 2 for numeric tolerance failures, 3 for usage
    /// and file-system problems.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 2,
            CliError::Core(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "imqft", version, about = "Random field models, their truncated correlation functions and amplitudes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to IMQFT_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Lattice sites per axis.
    #[arg(long, global = true)]
    pub lattice: Option<usize>,
    /// Lattice spacing.
    #[arg(long, global = true)]
    pub spacing: Option<f64>,
    /// Sample, draw or configuration count.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Numeric tolerance of the command.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write results to stdout instead of files.
    #[arg(long, global = true)]
    pub stdout: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and validate a model file.
    Validate { model: PathBuf },
    /// Cumulant tensors of the noise.
    Cumulants {
        model: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_order: usize,
    },
    /// Truncated Schwinger function at given points, `x0,x1;y0,y1;...`.
    Schwinger {
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        points: String,
        /// Field components, `a,b,...` (default all 0).
        #[arg(long)]
        indices: Option<String>,
    },
    /// Monte Carlo truncated moments against the lattice kernels.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value = "2,3,4")]
        orders: String,
        /// Translation sub-lattice stride used for averaging; 0 disables it.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Truncated Wightman term list, spectral scan and shell checks.
    Wightman {
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// Spectrum entry of every argument, `l,l,...` (default all 0).
        #[arg(long)]
        assignment: Option<String>,
    },
    /// Truncated amplitude of a process file.
    Scatter { model: PathBuf, process: PathBuf },
    /// Kinematics and amplitude of the decay m -> mu mu.
    Decay {
        model: PathBuf,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        mu: f64,
    },
    /// Bounded-ratio witness statistics of the smeared Wightman functions.
    Hssc {
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Quadrature nodes per shell dimension.
        #[arg(long, default_value_t = 32)]
        nodes: usize,
    },
    /// Cluster decay table of the smeared Wightman functions.
    Cluster {
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Number of arguments in the unshifted cluster.
        #[arg(long, default_value_t = 1)]
        split: usize,
        #[arg(long, default_value = "0,1,2,3,4,5,6,7,8")]
        shifts: String,
        #[arg(long, default_value_t = 32)]
        nodes: usize,
    },
}

fn threads(global: &Global) -> Result<Option<usize>, CliError> {
    if let Some(t) = global.threads {
        return Ok(Some(t));
    }
    match std::env::var("IMQFT_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("IMQFT_THREADS must be a thread count, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = threads(&cli.global)? {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    commands::dispatch(&cli.command, &cli.global)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imqft: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
