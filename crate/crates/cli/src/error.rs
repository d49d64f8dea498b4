use std::path::PathBuf;

use ensemble_core::text::ParseError;

/// Anything that stops a command before it can report. Always exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Schema(#[from] ensemble_core::model::LoadError),
    #[error(transparent)]
    Config(#[from] ensemble_broker::ConfigError),
    #[error("{path}: {source}")]
    Compile {
        path: PathBuf,
        #[source]
        source: ensemble_core::compile::CompileError,
    },
    #[error("simulation failed: {0}")]
    Sim(ensemble_core::sim::SimError),
    #[error(transparent)]
    Serve(#[from] ensemble_broker::ServeError),
    #[error(transparent)]
    Deploy(#[from] ensemble_broker::DeployError),
    #[error("bad bench plan: {0}")]
    Plan(#[from] ensemble_bench::PlanError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

pub(crate) fn read(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}
