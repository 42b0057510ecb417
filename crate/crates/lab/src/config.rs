//! Versioned JSON experiment configuration.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Which published result this configuration reproduces.
    #[serde(default)]
    pub anchor: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
    /// Settings for `verify`. Absent means the default acceptance suite.
    #[serde(default)]
    pub acceptance: Option<AcceptanceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SingleShiftSweep,
    MixtureSweep,
    KMixtureSpan,
    PhasePlot,
    Gatmiry,
    LoraAnalytic,
    LoraTrain,
    LoraRank2r,
    FeatureShiftSweep,
    ThresholdTable,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::SingleShiftSweep => "single-shift-sweep",
            Kind::MixtureSweep => "mixture-sweep",
            Kind::KMixtureSpan => "k-mixture-span",
            Kind::PhasePlot => "phase-plot",
            Kind::Gatmiry => "gatmiry",
            Kind::LoraAnalytic => "lora-analytic",
            Kind::LoraTrain => "lora-train",
            Kind::LoraRank2r => "lora-rank2r",
            Kind::FeatureShiftSweep => "feature-shift-sweep",
            Kind::ThresholdTable => "threshold-table",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerName {
    Stream,
    Sufficient,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaName {
    #[default]
    Corrected,
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdName {
    Mixture2,
    MixtureK,
    Lora,
}

/// Gradient-descent settings for the adapter-training kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::init_scale")]
    pub init_scale: f64,
    #[serde(default = "defaults::snapshot_stride")]
    pub snapshot_stride: usize,
    /// Stop once the error to U_⊥ drops below this. `null` disables it.
    #[serde(default = "defaults::early_stop")]
    pub early_stop: Option<f64>,
    #[serde(default = "defaults::train_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            iterations: defaults::iterations(),
            init_scale: defaults::init_scale(),
            snapshot_stride: defaults::snapshot_stride(),
            early_stop: defaults::early_stop(),
            seeds: defaults::train_seeds(),
        }
    }
}

/// One experiment. Only `id`, `kind` and `rank` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub kind: Kind,
    pub rank: usize,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "defaults::theta_grid")]
    pub theta_grid: Vec<f64>,
    /// Prompt lengths; each run uses n = m = length.
    #[serde(default = "defaults::lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seed of the Haar frame that defines U_s, U_⊥ and further bases.
    #[serde(default = "defaults::basis_seed")]
    pub basis_seed: u64,
    #[serde(default)]
    pub sampler: SamplerName,
    /// Weight of the first component in `mixture-sweep`.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Number of orthogonal components for `k-mixture-span` and the
    /// K-mixture rows of `threshold-table`.
    #[serde(default)]
    pub components: Option<usize>,
    /// Span coefficients for `k-mixture-span`, each of length `components`
    /// and unit norm.
    #[serde(default)]
    pub alphas: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lambda: LambdaName,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub noise_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub thresholds: Option<Vec<ThresholdName>>,
    #[serde(default)]
    pub training: Option<TrainingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceSpec {
    /// Criteria to run, e.g. `["A1", "A4"]`. Empty or absent runs all.
    #[serde(default)]
    pub criteria: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

pub mod defaults {
    use super::FRAC_PI_2;

    pub fn dim() -> usize {
        20
    }
    pub fn eps() -> f64 {
        1e-6
    }
    pub fn theta_grid() -> Vec<f64> {
        (0..9).map(|k| k as f64 * FRAC_PI_2 / 8.0).collect()
    }
    pub fn lengths() -> Vec<usize> {
        vec![250]
    }
    pub fn trials() -> usize {
        10_000
    }
    pub fn basis_seed() -> u64 {
        1
    }
    pub fn gamma() -> f64 {
        0.5
    }
    pub fn learning_rate() -> f64 {
        2e-3
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn iterations() -> usize {
        20_000
    }
    pub fn init_scale() -> f64 {
        0.01
    }
    pub fn snapshot_stride() -> usize {
        100
    }
    pub fn early_stop() -> Option<f64> {
        Some(0.05)
    }
    pub fn train_seeds() -> Vec<u64> {
        vec![0, 1, 2, 3, 4]
    }
}

/// A configuration problem, reported with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub field: String,
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}: {}", self.field, self.message),
            _ => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for SchemaError {}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError { field: field.into(), message: message.into(), line: None, column: None }
}

/// Pulls the field name out of serde's "missing field `x`" style messages.
fn field_from_serde(msg: &str) -> String {
    for marker in ["missing field `", "unknown field `", "duplicate field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "config".to_string()
}

impl Config {
    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            SchemaError { field: field_from_serde(&msg), message: msg, line: Some(e.line()), column: Some(e.column()) }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, exp) in self.experiments.iter().enumerate() {
            exp.validate().map_err(|mut e| {
                e.field = format!("experiments[{i}].{}", e.field);
                e
            })?;
            if !seen.insert(exp.id.as_str()) {
                return Err(field_error(format!("experiments[{i}].id"), format!("duplicate id {:?}", exp.id)));
            }
        }
        if self.experiments.is_empty() && self.acceptance.is_none() {
            return Err(field_error("experiments", "no experiments and no acceptance section"));
        }
        if let Some(acc) = &self.acceptance {
            for c in &acc.criteria {
                if !crate::acceptance::CRITERIA.contains(&c.as_str()) {
                    return Err(field_error("acceptance.criteria", format!("unknown criterion {c:?}")));
                }
            }
        }
        Ok(())
    }
}

impl ExperimentSpec {
    pub fn training(&self) -> TrainingSpec {
        self.training.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let id_ok = !self.id.is_empty()
            && self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
        if !id_ok {
            return Err(field_error("id", "must be non-empty and use only [A-Za-z0-9._-]"));
        }
        if self.rank == 0 {
            return Err(field_error("rank", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(field_error("dim", "must be at least 1"));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(field_error("eps", "must be finite and non-negative"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(field_error("noise_sd", "must be finite and non-negative"));
        }
        if self.trials == 0 {
            return Err(field_error("trials", "must be at least 1"));
        }
        if self.theta_grid.is_empty() {
            return Err(field_error("theta_grid", "must be non-empty"));
        }
        if self.theta_grid.iter().any(|t| !(0.0..=FRAC_PI_2 + 1e-12).contains(t)) {
            return Err(field_error("theta_grid", "angles must lie in [0, π/2]"));
        }
        if self.lengths.is_empty() {
            return Err(field_error("lengths", "must be non-empty"));
        }
        if self.lengths.contains(&0) {
            return Err(field_error("lengths", "prompt lengths must be at least 1"));
        }
        let needs_pair = !matches!(self.kind, Kind::Gatmiry | Kind::ThresholdTable);
        if needs_pair && 2 * self.rank > self.dim {
            return Err(field_error("rank", format!("2·rank must not exceed dim = {}", self.dim)));
        }
        let needs_eps = matches!(
            self.kind,
            Kind::SingleShiftSweep
                | Kind::MixtureSweep
                | Kind::KMixtureSpan
                | Kind::PhasePlot
                | Kind::LoraAnalytic
                | Kind::LoraTrain
                | Kind::LoraRank2r
                | Kind::FeatureShiftSweep
        );
        if needs_eps && self.eps == 0.0 {
            return Err(field_error("eps", "must be positive for this kind"));
        }
        match self.kind {
            Kind::MixtureSweep => {
                if !(self.gamma > 0.0 && self.gamma < 1.0) {
                    return Err(field_error("gamma", "must lie in (0, 1)"));
                }
            }
            Kind::KMixtureSpan => {
                let k = self.components.ok_or_else(|| field_error("components", "required for k-mixture-span"))?;
                if k < 2 || k * self.rank > self.dim {
                    return Err(field_error("components", format!("need 2 ≤ K and K·rank ≤ dim = {}", self.dim)));
                }
                let alphas = self.alphas.as_ref().ok_or_else(|| field_error("alphas", "required for k-mixture-span"))?;
                if alphas.is_empty() {
                    return Err(field_error("alphas", "must be non-empty"));
                }
                for (j, a) in alphas.iter().enumerate() {
                    if a.len() != k {
                        return Err(field_error(format!("alphas[{j}]"), format!("needs {k} coefficients")));
                    }
                    let norm: f64 = a.iter().map(|v| v * v).sum();
                    if (norm - 1.0).abs() > 1e-9 {
                        return Err(field_error(format!("alphas[{j}]"), format!("squared norm {norm} is not 1")));
                    }
                }
            }
            Kind::Gatmiry => {
                if self.dim != 5 {
                    return Err(field_error("dim", "gatmiry uses dim = 5"));
                }
            }
            Kind::LoraTrain | Kind::LoraRank2r => {
                let t = self.training();
                if t.seeds.is_empty() {
                    return Err(field_error("training.seeds", "must be non-empty"));
                }
                if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
                    return Err(field_error("training.learning_rate", "must be finite and non-negative"));
                }
                if t.batch_size == 0 || t.iterations == 0 || t.snapshot_stride == 0 {
                    return Err(field_error("training", "batch_size, iterations and snapshot_stride must be positive"));
                }
                if !(t.init_scale.is_finite() && t.init_scale > 0.0) {
                    return Err(field_error("training.init_scale", "must be positive"));
                }
            }
            Kind::ThresholdTable => {
                let deltas = self.deltas.as_ref().ok_or_else(|| field_error("deltas", "required for threshold-table"))?;
                if deltas.is_empty() {
                    return Err(field_error("deltas", "must be non-empty"));
                }
                for r in self.ranks.clone().unwrap_or_else(|| vec![self.rank]) {
                    if r == 0 {
                        return Err(field_error("ranks", "ranks must be at least 1"));
                    }
                    if deltas.iter().any(|d| !(*d > 0.0 && *d < r as f64)) {
                        return Err(field_error("deltas", format!("every delta must lie in (0, {r})")));
                    }
                }
                if self.noise_levels.as_ref().is_some_and(|v| v.is_empty() || v.iter().any(|s| !(*s >= 0.0))) {
                    return Err(field_error("noise_levels", "must be non-empty and non-negative"));
                }
                if self.components.is_some_and(|k| k == 0) {
                    return Err(field_error("components", "must be at least 1"));
                }
                if self.thresholds.as_ref().is_some_and(Vec::is_empty) {
                    return Err(field_error("thresholds", "must be non-empty"));
                }
            }
            _ => {}
        }
        if self.training.is_some() && !matches!(self.kind, Kind::LoraTrain | Kind::LoraRank2r) {
            return Err(field_error("training", "only valid for lora-train and lora-rank2r"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(r#"{{"schema_version": 1, "experiments": [{{"id": "x", "kind": "single-shift-sweep", "rank": 5{extra}}}]}}"#)
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = Config::parse(&minimal("")).unwrap();
        let e = &cfg.experiments[0];
        assert_eq!((e.dim, e.eps, e.noise_sd, e.trials), (20, 1e-6, 0.0, 10_000));
        assert_eq!(e.theta_grid.len(), 9);
        assert_eq!(e.lengths, vec![250]);
    }

    #[test]
    fn missing_rank_names_the_field() {
        let text = r#"{"schema_version": 1, "experiments": [{"id": "x", "kind": "phase-plot"}]}"#;
        let err = Config::parse(text).unwrap_err();
        assert_eq!(err.field, "rank");
        assert!(err.line.is_some());
    }

    #[test]
    fn rejects_unknown_fields_and_versions() {
        assert_eq!(Config::parse(&minimal(r#", "rnak": 3"#)).unwrap_err().field, "rnak");
        let text = r#"{"schema_version": 2, "experiments": []}"#;
        assert_eq!(Config::parse(text).unwrap_err().field, "schema_version");
    }

    #[test]
    fn semantic_errors_carry_paths() {
        let err = Config::parse(&minimal(r#", "theta_grid": []"#)).unwrap_err();
        assert_eq!(err.field, "experiments[0].theta_grid");
        let err = Config::parse(&minimal(r#", "dim": 8"#)).unwrap_err();
        assert_eq!(err.field, "experiments[0].rank");
        let text = r#"{"schema_version": 1, "experiments": [{"id": "k", "kind": "k-mixture-span", "rank": 5, "components": 3}]}"#;
        assert_eq!(Config::parse(text).unwrap_err().field, "experiments[0].alphas");
    }
}
