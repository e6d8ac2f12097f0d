//! `yume-kit` command-line front end.
//!
//! Every command prints JSON (or an aligned table with `--format table`) to
//! stdout, or writes it to `--out` together with a `<out>.manifest.json`
//! describing how it was produced. Failures print a JSON error object on
//! stderr and exit with 2 (unreadable input), 3 (invalid input) or 4
//! (internal error).

mod commands;
mod error;
mod sample;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "yume-kit",
    version,
    about = "Camera-motion quantization, flow samplers, context plans and cache profiling"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label a camera trajectory with canonical motions and render its text condition.
    Quantize {
        /// Trajectory file (.json or .csv).
        trajectory: PathBuf,
    },
    /// Per-segment translation, direction-change and rotation statistics.
    SpeedStats {
        trajectory: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Run a sampler against a Gaussian-mixture target.
    Sample,
    /// Print the history compression plan and token count.
    FramepackPlan {
        #[arg(long)]
        history: usize,
        #[arg(long, default_value_t = 68)]
        h: usize,
        #[arg(long, default_value_t = 120)]
        w: usize,
        /// Use the early schedule (single most-recent frame at full ratio).
        #[arg(long)]
        early: bool,
    },
    /// Block-importance scores of a toy residual stack and the cacheable layers.
    CacheProfile(commands::CacheProfileArgs),
    /// Anti-artifact refinement on a synthetic latent image.
    AamDemo(commands::AamDemoArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Quantize { .. } => "quantize",
            Command::SpeedStats { .. } => "speed-stats",
            Command::Sample => "sample",
            Command::FramepackPlan { .. } => "framepack-plan",
            Command::CacheProfile(_) => "cache-profile",
            Command::AamDemo(_) => "aam-demo",
        }
    }
}

/// Provenance record written next to every output file.
#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct ExperimentManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub tool_version: String,
    pub args: Vec<String>,
}

/// Result of a command: JSON for machines and a table for humans.
pub struct Output {
    pub json: serde_json::Value,
    pub table: String,
    pub seed: Option<u64>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("YUME_KIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::validation(
            "BadThreads",
            format!("YUME_KIT_THREADS must be a positive integer, got {raw:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal(e.to_string()))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn emit(cli: &Cli, output: Output) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(&output.json).map_err(|e| CliError::internal(e.to_string()))? + "\n";
    let text = match cli.common.format {
        Format::Json => json.clone(),
        Format::Table => output.table,
    };
    let Some(out) = &cli.common.out else {
        print!("{text}");
        return Ok(());
    };
    let write = |path: &Path, body: &str| {
        std::fs::write(path, body).map_err(|e| CliError::parse("IoError", format!("{}: {e}", path.display())))
    };
    write(out, &json)?;
    if cli.common.format == Format::Table {
        let mut table_path = out.as_os_str().to_os_string();
        table_path.push(".txt");
        write(Path::new(&table_path), &text)?;
    }
    let manifest = ExperimentManifest {
        command: cli.command.name().into(),
        config_path: cli.common.config.clone(),
        seed: output.seed,
        output_dir: out.parent().map(Path::to_path_buf).unwrap_or_default(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: std::env::args().skip(1).collect(),
    };
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::internal(e.to_string()))? + "\n";
    write(&manifest_path(out), &body)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let c = &cli.common;
    let output = match &cli.command {
        Command::Quantize { trajectory } => commands::quantize(trajectory, c.config.as_deref())?,
        Command::SpeedStats { trajectory, stride } => commands::speed_stats(trajectory, *stride)?,
        Command::Sample => {
            let config = c
                .config
                .as_deref()
                .ok_or_else(|| CliError::parse("MissingConfig", "sample requires --config".into()))?;
            sample::run(config, c.seed)?
        }
        Command::FramepackPlan { history, h, w, early } => commands::framepack(*history, *h, *w, *early)?,
        Command::CacheProfile(args) => commands::cache_profile(args, c.seed, c.config.as_deref())?,
        Command::AamDemo(args) => commands::aam_demo(args, c.seed)?,
    };
    emit(cli, output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
