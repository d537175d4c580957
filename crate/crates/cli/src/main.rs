//! `volsr` command-line interface.
//!
//! Exit codes:
//!
//! | code | category        | meaning                                      |
//! |------|-----------------|----------------------------------------------|
//! | 0    |                 | success                                      |
//! | 1    | `internal`      | unexpected failure                           |
//! | 2    | `usage`         | unknown flag, missing required argument      |
//! | 3    | `missing-input` | an input file does not exist                 |
//! | 4    | `config`        | config schema violation or invalid parameter |
//! | 5    | `io`            | read/write failure                           |
//! | 6    | `format`        | malformed file or checksum mismatch          |
//! | 7    | `numerical`     | divergence or non-finite values              |
//!
//! Failures print one JSON object `{"error": <category>, "message": ...}`
//! on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Core(volsr::Error),
    MissingInput(String),
    Config(String),
}

impl From<volsr::Error> for CliError {
    fn from(e: volsr::Error) -> Self {
        match e {
            volsr::Error::Io { ref path, ref source } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(path.display().to_string())
            }
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn category(&self) -> (&'static str, u8) {
        use volsr::Error as E;
        match self {
            CliError::MissingInput(_) => ("missing-input", 3),
            CliError::Config(_) => ("config", 4),
            CliError::Core(e) => match e {
                E::Io { .. } => ("io", 5),
                E::Malformed { .. } | E::ChecksumMismatch { .. } | E::Json(_) => ("format", 6),
                E::Divergence { .. } | E::NonFinite(_) => ("numerical", 7),
                _ => ("config", 4),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::MissingInput(p) => format!("input not found: {p}"),
            CliError::Config(m) => m.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "volsr", version, about = "Volumetric diffusion super-resolution")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Default output directory.
    #[arg(long, global = true, env = "VOLSR_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a paired LR/HR training set (and optionally a bar phantom).
    Simulate(SimulateArgs),
    /// Train one slice denoiser.
    Train(TrainArgs),
    /// Super-resolve an LR volume.
    Infer(InferArgs),
    /// MTF curves of volumes against a bar phantom reference.
    EvalMtf(EvalArgs),
    /// Print version and format versions.
    Version,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    /// Number of LR/HR pairs.
    #[arg(long)]
    pub n: Option<usize>,
    /// Volume size as `nx,ny,nz`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub dims: Option<Vec<usize>>,
    /// Output directory (default `<output-dir>/dataset`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable Poisson noise in the LR volumes.
    #[arg(long)]
    pub no_noise: bool,
    /// Also write a held-out bar phantom (`bars_hr`, `bars_lr`, `phantom.json`).
    #[arg(long)]
    pub bars: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: u64,
    /// Dataset manifest or the directory holding `dataset.json`.
    #[arg(long)]
    pub data: PathBuf,
    /// `in-plane` or `through-plane`.
    #[arg(long)]
    pub plane: String,
    /// Checkpoint path (default `<output-dir>/<plane>.ckpt`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Start from the desk-scale settings (32x32 patches, 5000 iterations,
    /// velocity output, rate 2e-3) instead of the config.
    #[arg(long)]
    pub desk: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub seed: u64,
    /// LR volume (`.json` header or `.raw` payload).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub in_plane: Option<PathBuf>,
    #[arg(long)]
    pub through_plane: Option<PathBuf>,
    /// `xyz-all`, `xyz-last`, `2d-axial`, `2d-coronal` or `2d-sagittal`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Reverse steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Merge weights `h,c,s` for xyz-last.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub lambdas: Option<Vec<f64>>,
    /// Axis cycle for xyz-all, e.g. `axial,coronal,sagittal`.
    #[arg(long, value_delimiter = ',')]
    pub axis_order: Option<Vec<String>>,
    /// Output volume path (default `<output-dir>/sr_<mode>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub phantom_manifest: PathBuf,
    /// Un-degraded phantom volume.
    #[arg(long)]
    pub reference: PathBuf,
    /// Volumes to measure.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Method labels, one per input (default: file stems).
    #[arg(long, num_args = 1..)]
    pub labels: Option<Vec<String>>,
    /// Output directory (default `<output-dir>/mtf`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Globals {
    pub threads: Option<usize>,
    pub config: config::FileConfig,
    pub output_dir: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let g = Globals {
        threads: cli.threads,
        config: config::load(cli.config.as_deref())?,
        output_dir: cli.output_dir,
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&g, a),
        Command::Train(a) => commands::train(&g, a),
        Command::Infer(a) => commands::infer(&g, a),
        Command::EvalMtf(a) => commands::eval_mtf(&g, a),
        Command::Version => {
            println!("volsr {}", env!("CARGO_PKG_VERSION"));
            println!(
                "volume format {} v{}",
                volsr::io::VOLUME_FORMAT,
                volsr::io::FORMAT_VERSION
            );
            println!("checkpoint format v{}", volsr::io::FORMAT_VERSION);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                eprintln!("{}", serde_json::json!({"error": "usage", "message": msg.trim()}));
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = e.category();
            eprintln!("{}", serde_json::json!({"error": cat, "message": e.message()}));
            ExitCode::from(code)
        }
    }
}
