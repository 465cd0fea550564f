mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::Mode;

#[derive(Debug, Parser)]
#[command(name = "asymgan", version, about = "Asymmetric GAN image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON config; flags override its values
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset
    SynthData {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Unpaired)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset directory
    Train {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Stop after this many steps
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Translate dataset images with a checkpoint and write a comparison grid
    Translate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Only translate towards this domain
        #[arg(long, value_name = "NAME")]
        target_domain: Option<String>,
        /// Number of input images (grid rows)
        #[arg(long, default_value_t = 8)]
        limit: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the metrics report for a checkpoint
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Also write the JSON report here
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "NAME")]
        target_domain: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Print parameter counts of a model configuration
    Inspect {
        /// JSON spec file, or one of the presets s1, s2, s3, supervised
        #[arg(long, value_name = "PATH|PRESET", conflicts_with = "checkpoint")]
        spec: Option<String>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        domains: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient check of every loss
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<asymgan::Error> for Failure {
    fn from(e: asymgan::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": ").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
