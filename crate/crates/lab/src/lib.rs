//! Experiment harness: configuration loading, the experiment runners, CSV and
//! SVG output, run manifests and a quick self-test.

use std::path::PathBuf;

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod output;
pub mod selftest;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] snlse_core::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0} self-test check(s) failed")]
    SelftestFailed(usize),
}

impl LabError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Core(snlse_core::Error::InvalidConfiguration(_)) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Core(snlse_core::Error::Divergence { .. }) => "divergence",
            LabError::Core(snlse_core::Error::Cost(_)) => "cost",
            LabError::Core(_) => "input",
            LabError::Io { .. } => "io",
            LabError::SelftestFailed(_) => "selftest",
        }
    }
}
