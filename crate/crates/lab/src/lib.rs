//! Configuration-driven experiments on top of `subspace-icl`: JSON configs in,
//! CSV tables and a JSON manifest out, plus the acceptance suite.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod bundled;
pub mod config;
pub mod experiments;
pub mod runner;
pub mod table;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Schema(#[from] config::SchemaError),
    #[error("experiment {0}: {1}")]
    Experiment(String, subspace_icl::Error),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Schema(_) => 2,
            _ => 1,
        }
    }
}

/// Resolves `arg` as a file path, falling back to a bundled configuration name.
pub fn load_config(arg: &str) -> Result<(config::Config, runner::ConfigSource), LabError> {
    let path = std::path::Path::new(arg);
    let (name, text) = if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(arg.to_string(), e))?;
        (path.display().to_string(), text)
    } else if let Some(b) = bundled::find(arg) {
        (format!("bundled:{}", b.name), b.text.to_string())
    } else {
        return Err(LabError::Io(
            arg.to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled configuration"),
        ));
    };
    let cfg = config::Config::parse(&text)?;
    Ok((cfg, runner::ConfigSource { name, text }))
}
