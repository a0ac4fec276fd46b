use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_csv_regression, synth_classification, synth_regression, CsvRegressionSpec, FederatedDataset,
    SynthClassificationSpec, SynthRegressionSpec, Task,
};
use crate::error::{Error, Result};
use crate::federation::AlgorithmConfig;
use crate::problem::FederatedProblem;

fn default_repeats() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment file: a dataset, one or more algorithms, and optionally a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub algorithm: AlgorithmConfig,
    /// Further algorithms run on the same data for comparison.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<AlgorithmConfig>,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
}

/// Exactly one source table must be present.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Ridge/softmax penalty. Defaults to 1e-3 for regression and 1e-4 for classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_regression: Option<SynthRegressionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_classification: Option<SynthClassificationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_regression: Option<CsvRegressionSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Test-metric thresholds for the bits-to-threshold table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<f64>,
    /// Baseline row of the table; defaults to the first algorithm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
}

fn default_samples() -> usize {
    20
}
fn default_gamma_min() -> f64 {
    1e-6
}
fn default_gamma_max() -> f64 {
    1.0
}
fn default_local_steps_min() -> u64 {
    1
}
fn default_local_steps_max() -> u64 {
    256
}

/// Random search over `γ` (log-uniform) and local steps `⌊1/p⌋` (uniform).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_gamma_min")]
    pub gamma_min: f64,
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    #[serde(default = "default_local_steps_min")]
    pub local_steps_min: u64,
    #[serde(default = "default_local_steps_max")]
    pub local_steps_max: u64,
    #[serde(default)]
    pub seed: u64,
    /// When set, every candidate runs `comm_rounds · ⌊1/p⌋` iterations so
    /// that candidates share a communication budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_rounds: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            samples: default_samples(),
            gamma_min: default_gamma_min(),
            gamma_max: default_gamma_max(),
            local_steps_min: default_local_steps_min(),
            local_steps_max: default_local_steps_max(),
            seed: 0,
            comm_rounds: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(field_error("search.samples", "must be at least 1"));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min.is_finite()) {
            return Err(field_error("search.gamma_min", "must be positive"));
        }
        if !(self.gamma_max >= self.gamma_min && self.gamma_max.is_finite()) {
            return Err(field_error("search.gamma_max", "must be finite and at least gamma_min"));
        }
        if self.local_steps_min == 0 {
            return Err(field_error("search.local_steps_min", "must be at least 1"));
        }
        if self.local_steps_max < self.local_steps_min {
            return Err(field_error("search.local_steps_max", "must be at least local_steps_min"));
        }
        Ok(())
    }
}

fn field_error(field: &str, msg: &str) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Every algorithm in file order, the main one first.
    pub fn algorithms(&self) -> Vec<&AlgorithmConfig> {
        std::iter::once(&self.algorithm).chain(&self.compare).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(field_error("repeats", "must be at least 1"));
        }
        let sources = [
            self.dataset.synthetic_regression.is_some(),
            self.dataset.synthetic_classification.is_some(),
            self.dataset.csv_regression.is_some(),
        ];
        if sources.iter().filter(|&&b| b).count() != 1 {
            return Err(field_error(
                "dataset",
                "exactly one of synthetic_regression, synthetic_classification, csv_regression is required",
            ));
        }
        if let Some(a) = self.dataset.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(field_error("dataset.alpha", "must be non-negative"));
            }
        }
        let mut names = BTreeSet::new();
        for (i, alg) in self.algorithms().into_iter().enumerate() {
            let prefix = if i == 0 { "algorithm".to_string() } else { format!("compare[{}]", i - 1) };
            alg.validate().map_err(|e| Error::Config(format!("{prefix}: {}", strip_prefix(&e))))?;
            if !names.insert(alg.display_name()) {
                return Err(field_error(&format!("{prefix}.name"), "duplicate algorithm name"));
            }
        }
        if let Some(b) = &self.report.baseline {
            if !names.contains(b) {
                return Err(field_error("report.baseline", "does not name an algorithm"));
            }
        }
        if self.report.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(field_error("report.thresholds", "must be finite"));
        }
        if let Some(s) = &self.search {
            s.validate()?;
        }
        Ok(())
    }

    /// Builds the dataset. Repeats share it; only the experiment seed changes it.
    pub fn build_dataset(&self) -> Result<FederatedDataset> {
        let d = &self.dataset;
        if let Some(spec) = &d.synthetic_regression {
            return Ok(synth_regression(spec, spec.seed.unwrap_or(self.seed))?.0);
        }
        if let Some(spec) = &d.synthetic_classification {
            return synth_classification(spec, spec.seed.unwrap_or(self.seed));
        }
        if let Some(spec) = &d.csv_regression {
            return load_csv_regression(spec);
        }
        Err(field_error("dataset", "no source given"))
    }

    pub fn alpha(&self, task: Task) -> f64 {
        self.dataset.alpha.unwrap_or(match task {
            Task::Regression => 1e-3,
            Task::Classification { .. } => 1e-4,
        })
    }

    pub fn build_problem(&self) -> Result<FederatedProblem> {
        let ds = self.build_dataset()?;
        FederatedProblem::new(&ds, self.alpha(ds.task))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Drops the variant label from an error's message so it can be re-prefixed with a field path.
fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) | Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Parses a config, rejecting unknown keys (all of them are listed) and invalid values.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    let cfg: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Config(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}
