use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmlsim_cli::config::{self, ConfigError};
use cmlsim_cli::{plot, presets, runner, CliError, OUT_DIR_ENV};

/// Deterministic simulator of collaborative learning under Byzantine attack.
#[derive(Debug, Parser)]
#[command(name = "cmlsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a preset and write its metrics, resolved config and summary.
    Run {
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to $CMLSIM_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Configuration file overriding the preset defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the plot-ready table of a figure from a run directory.
    Plot {
        figure: String,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// List the available presets.
    ListPresets,
    /// Check a configuration file and print it fully resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ListPresets => {
            for p in presets::PRESETS {
                println!("{:<24} {}", p.name, p.summary);
            }
        }
        Command::Validate { config } => {
            let settings = config::parse_config(&config, None, None)?;
            print!("{}", settings.to_toml());
        }
        Command::Run {
            preset,
            seed,
            out,
            config,
        } => {
            let settings = match &config {
                Some(path) => config::parse_config(path, Some(&preset), seed)?,
                None => config::preset_settings(&preset, seed.unwrap_or(0))?,
            };
            let out = out
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .ok_or_else(|| ConfigError::Missing {
                    origin: "command line".into(),
                    message: format!("no output directory: pass --out or set {OUT_DIR_ENV}"),
                })?;
            let summary = runner::run_preset(&settings, &out)?;
            println!("{}: wrote {} to {}", summary.preset, summary.files.join(", "), out.display());
        }
        Command::Plot { figure, input } => {
            let path = plot::emit_plotdata(&figure, &input)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
