//! Runs a configuration and writes tables plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, SCHEMA_VERSION};
use crate::experiments::{run_experiment, ExperimentOutput, RunOptions};
use crate::table::{write_rows, write_series};
use crate::LabError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub id: String,
    pub kind: String,
    pub rows: usize,
    pub files: Vec<FileEntry>,
    pub wall_time_s: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub library_version: String,
    pub schema_version: u32,
    pub config_source: String,
    pub config_sha256: String,
    pub seed_override: Option<u64>,
    pub threads: Option<usize>,
    pub parallel_feature: bool,
    pub experiments: Vec<ExperimentEntry>,
    pub total_wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Where the configuration text came from, for the manifest.
#[derive(Debug, Clone)]
pub struct ConfigSource {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunSettings {
    pub options: RunOptions,
    pub threads: Option<usize>,
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry, LabError> {
    let path: PathBuf = dir.join(name);
    fs::write(&path, bytes).map_err(|e| LabError::Io(path.display().to_string(), e))?;
    Ok(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 })
}

fn encode(output: &ExperimentOutput, id: &str) -> Result<Vec<(String, Vec<u8>)>, LabError> {
    let mut files = Vec::new();
    let mut buf = Vec::new();
    write_rows(&mut buf, &output.rows)?;
    files.push((format!("{id}.csv"), buf));
    for (suffix, series) in &output.series {
        let mut buf = Vec::new();
        write_series(&mut buf, series)?;
        files.push((format!("{id}_{suffix}.csv"), buf));
    }
    Ok(files)
}

/// Runs every experiment in order, writing `<id>.csv` (and auxiliary
/// `<id>_<suffix>.csv`) files and `manifest.json` into `out_dir`.
pub fn run_config(cfg: &Config, source: &ConfigSource, out_dir: &Path, settings: &RunSettings) -> Result<Manifest, LabError> {
    fs::create_dir_all(out_dir).map_err(|e| LabError::Io(out_dir.display().to_string(), e))?;
    let start = Instant::now();
    let mut entries = Vec::with_capacity(cfg.experiments.len());
    for spec in &cfg.experiments {
        let t0 = Instant::now();
        let output = run_experiment(spec, &settings.options).map_err(|e| LabError::Experiment(spec.id.clone(), e))?;
        let files = encode(&output, &spec.id)?
            .into_iter()
            .map(|(name, bytes)| write_file(out_dir, &name, &bytes))
            .collect::<Result<Vec<_>, _>>()?;
        entries.push(ExperimentEntry {
            id: spec.id.clone(),
            kind: spec.kind.to_string(),
            rows: output.rows.len(),
            files,
            wall_time_s: t0.elapsed().as_secs_f64(),
            notes: output.notes,
        });
    }
    let manifest = Manifest {
        tool: "icl-lab".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        library_version: subspace_icl::VERSION.into(),
        schema_version: SCHEMA_VERSION,
        config_source: source.name.clone(),
        config_sha256: sha256_hex(source.text.as_bytes()),
        seed_override: settings.options.seed_override,
        threads: settings.threads,
        parallel_feature: cfg!(feature = "parallel"),
        experiments: entries,
        total_wall_time_s: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_file(out_dir, MANIFEST_FILE, &json)?;
    Ok(manifest)
}
