//! Experiment presets, configuration files, metrics persistence and
//! plot-data emission for the `cmlsim` command.

pub mod config;
pub mod output;
pub mod plot;
pub mod presets;
pub mod runner;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_config, preset_settings, ConfigError, Settings};

/// Environment variable that supplies the output directory when `--out`
/// is not given.
pub const OUT_DIR_ENV: &str = "CMLSIM_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Simulation(#[from] cmlsim::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error(transparent)]
    Plot(#[from] plot::PlotError),
}

impl CliError {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
        let path = path.into();
        move |e| CliError::Csv {
            path,
            message: e.to_string(),
        }
    }
}
