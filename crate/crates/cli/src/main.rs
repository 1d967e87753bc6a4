//! `photostyle`: photorealistic style transfer from the command line.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 runtime error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_size, parse_weights, JobConfig, Overrides};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

/// I/O failures are runtime errors; every other library error stems from the
/// inputs or settings.
impl From<photostyle::Error> for CliError {
    fn from(e: photostyle::Error) -> Self {
        match e {
            photostyle::Error::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "photostyle", version, about = "Photorealistic style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stylize one content image with one style image.
    Transfer {
        #[command(flatten)]
        job: JobArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// One transfer per content weight, style weight fixed at 1.
    Sweep {
        #[command(flatten)]
        job: JobArgs,
        /// Comma-separated content weights.
        #[arg(long, default_value = "0.8,8,80,800,8000")]
        weights: String,
    },
    /// Time full transfers on synthetic images at several resolutions.
    Benchmark {
        #[command(flatten)]
        job: JobArgs,
        /// Comma-separated HxW resolutions (default 128x128,256x256,512x512).
        #[arg(long, value_delimiter = ',', value_parser = parse_size)]
        resolutions: Vec<(usize, usize)>,
    },
    /// Grayscale and contour images plus the contour similarity score.
    Eval {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        stylized: PathBuf,
        /// Directory for the grayscale and contour images.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct JobArgs {
    /// JSON job config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    content: Option<PathBuf>,
    #[arg(long)]
    style: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    content_weight: Option<f64>,
    #[arg(long)]
    style_weight: Option<f64>,
    #[arg(long)]
    tv_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Content resize target as HxW; both sides divisible by 4.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Record wall_ms as 0 so loss histories are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

impl JobArgs {
    fn resolve(self) -> Result<JobConfig, CliError> {
        let overrides = Overrides {
            content: self.content,
            style: self.style,
            out: self.out,
            steps: self.steps,
            lr: self.lr,
            content_weight: self.content_weight,
            style_weight: self.style_weight,
            tv_weight: self.tv_weight,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            size: self.size,
            no_timing: self.no_timing,
        };
        JobConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Transfer { job, resume } => commands::transfer(&job.resolve()?, resume.as_deref()),
        Command::Sweep { job, weights } => {
            let weights = parse_weights(&weights)?;
            commands::sweep(&job.resolve()?, &weights)
        }
        Command::Benchmark { job, resolutions } => commands::benchmark(&job.resolve()?, &resolutions),
        Command::Eval { content, stylized, out } => {
            let score = commands::eval(&content, &stylized, out.as_deref())?;
            println!("contour_similarity {score:.6}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("photostyle: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
