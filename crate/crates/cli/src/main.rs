//! `dpqhd`: train, compress, evaluate and benchmark HDC classifiers.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 missing or
//! malformed input data, 3 numeric failure.

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{DataKind, RunConfig};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dpqhd::Error> for CliError {
    fn from(e: dpqhd::Error) -> Self {
        use dpqhd::Error as E;
        let code = match e {
            E::Usage(_) | E::Config(_) => 1,
            E::Io { .. } | E::Parse { .. } => 2,
            E::Dimension(_)
            | E::Degenerate(_)
            | E::Range { .. }
            | E::Training(_)
            | E::NonFinite { .. } => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dpqhd",
    version,
    about = "Post-training compression for HDC classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Directory holding `mnist/`, `fashion-mnist/`, `isolet/`.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Line-delimited JSON metrics file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    /// Hypervector dimension D.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    FashionMnist,
    Isolet,
    Blobs,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Trained artifact; default `<out>/model.dpqh`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Decomposition rank r.
    #[arg(long)]
    rank: Option<usize>,
    /// Fraction of hypervector dimensions to drop, in [0, 1).
    #[arg(long)]
    prune: Option<f64>,
    /// Stored bitwidth for P1, P2 and W, in [2, 8].
    #[arg(long)]
    bits: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Full,
    Adaptive,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Artifact to evaluate; default `<out>/compressed.dpqh`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "adaptive")]
    pub mode: EvalMode,
    /// Early-exit threshold; default from the config, then the artifact's sidecar.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a full-projection model and write `<out>/model.dpqh`.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate and compress a trained model into `<out>/compressed.dpqh`.
    Compress {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: CompressArgs,
    },
    /// Evaluate an artifact on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Train, compress and evaluate in one go and emit a consolidated report.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, compress: Option<&CompressArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = common.dim {
        cfg.dim = d;
    }
    if let Some(k) = common.dataset {
        cfg.data.kind = match k {
            DatasetArg::Mnist => DataKind::Mnist,
            DatasetArg::FashionMnist => DataKind::FashionMnist,
            DatasetArg::Isolet => DataKind::Isolet,
            DatasetArg::Blobs => DataKind::Blobs,
        };
    }
    if let Some(a) = compress {
        if let Some(r) = a.rank {
            cfg.compression.rank = r;
        }
        if let Some(p) = a.prune {
            cfg.compression.prune_ratio = p;
        }
        if let Some(b) = a.bits {
            cfg.compression.bitwidth = b;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            let cfg = resolve(&common, None)?;
            commands::train(&cfg, &common).map(drop)
        }
        Command::Compress { common, args } => {
            let cfg = resolve(&common, Some(&args))?;
            commands::compress(&cfg, &common, &args).map(drop)
        }
        Command::Eval { common, args } => {
            let cfg = resolve(&common, None)?;
            commands::eval(&cfg, &common, &args).map(drop)
        }
        Command::Bench { common } => {
            let cfg = resolve(&common, None)?;
            commands::bench(&cfg, &common)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
