//! Config-driven experiments: repeated runs, random search and file outputs.

mod config;
mod output;
mod search;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::federation::{run_algorithm, seed_invariant, AlgorithmConfig, DivergenceInfo, LocalStepKind, RunResult};
use crate::metrics::{speedup_table, SpeedupTable, TraceRow};
use crate::ops::nnz;
use crate::problem::FederatedProblem;

pub use config::{parse_config, parse_config_str, DatasetConfig, ExperimentConfig, ReportConfig, SearchConfig};
pub use output::{emit_outputs, read_trace_csv, write_trace_csv, TRACE_HEADER};
pub use search::{sample_candidates, Candidate, CandidateResult, SearchReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seed: u64,
    pub final_metric: f64,
    pub final_train_loss: f64,
    pub rounds: u64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<DivergenceInfo>,
    /// Relative to the output directory.
    pub trace_file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub name: String,
    /// The configuration actually run, with every default spelled out.
    pub config: AlgorithmConfig,
    pub repeats: Vec<RepeatSummary>,
    pub mean_metric: f64,
    /// Sample standard deviation over `√repeats`; zero for a single repeat.
    pub std_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchReport>,
}

impl AlgorithmSummary {
    pub fn any_diverged(&self) -> bool {
        self.repeats.iter().any(|r| r.diverged.is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub algorithms: Vec<AlgorithmSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<SpeedupTable>,
    pub diverged: bool,
}

/// Summary plus the full per-repeat results, in algorithm order.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: RunSummary,
    pub runs: Vec<Vec<RunResult>>,
}

impl Experiment {
    pub fn algorithm(&self, name: &str) -> Option<(&AlgorithmSummary, &[RunResult])> {
        let i = self.summary.algorithms.iter().position(|a| a.name == name)?;
        Some((&self.summary.algorithms[i], &self.runs[i]))
    }
}

/// `(mean, sample_sd / √n)`.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Fills in the schedule and local step so the recorded config is explicit.
pub fn resolve_defaults(alg: &AlgorithmConfig) -> AlgorithmConfig {
    let mut out = alg.clone();
    out.schedule = Some(alg.schedule_mode());
    out.local_step = Some(alg.local_step_kind());
    out
}

/// Runs repeats with seeds `seed, seed+1, …`. A configuration whose output
/// cannot depend on the seed is run once and the result reused.
pub fn run_repeats(alg: &AlgorithmConfig, problem: &FederatedProblem, seed: u64, repeats: usize) -> Result<Vec<RunResult>> {
    let run = |r: usize| {
        let mut cfg = alg.clone();
        cfg.seed = seed.wrapping_add(r as u64);
        run_algorithm(&cfg, problem)
    };
    if seed_invariant(alg, problem) {
        let one = run(0)?;
        return Ok(vec![one; repeats]);
    }
    (0..repeats).into_par_iter().map(run).collect()
}

/// Picks `λ` for soft-threshold steps by bisection so that the final
/// unpruned global model has at most `K` nonzeros.
pub fn tune_lambda(alg: &AlgorithmConfig, problem: &FederatedProblem, seed: u64) -> Result<f64> {
    let k = alg.sparsity.resolve(problem.model_dim())?;
    let feasible = |lambda: f64| -> Result<bool> {
        let mut cfg = alg.clone();
        cfg.lambda_l1 = Some(lambda);
        cfg.seed = seed;
        let r = run_algorithm(&cfg, problem)?;
        Ok(r.diverged.is_none() && nnz(&r.last_global) <= k)
    };
    if feasible(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1e-3;
    let mut found = false;
    for _ in 0..60 {
        if feasible(hi)? {
            found = true;
            break;
        }
        lo = hi;
        hi *= 4.0;
    }
    if !found {
        return Ok(hi);
    }
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn with_lambda(alg: &AlgorithmConfig, problem: &FederatedProblem, seed: u64) -> Result<AlgorithmConfig> {
    let mut cfg = alg.clone();
    if cfg.local_step_kind() == LocalStepKind::Soft && cfg.lambda_l1.is_none() {
        cfg.lambda_l1 = Some(tune_lambda(&cfg, problem, seed)?);
    }
    Ok(cfg)
}

fn summarize(name: &str, config: AlgorithmConfig, seed: u64, runs: &[RunResult]) -> AlgorithmSummary {
    let repeats: Vec<RepeatSummary> = runs
        .iter()
        .enumerate()
        .map(|(r, res)| {
            let last = res.trace.last();
            RepeatSummary {
                seed: seed.wrapping_add(r as u64),
                final_metric: res.final_metric(),
                final_train_loss: last.map_or(f64::NAN, |row| row.train_loss),
                rounds: res.ledger.rounds() as u64,
                uplink_bits: res.ledger.uplink_bits,
                downlink_bits: res.ledger.downlink_bits,
                diverged: res.diverged.clone(),
                trace_file: PathBuf::from(name).join(format!("trace_r{r}.csv")),
            }
        })
        .collect();
    let metrics: Vec<f64> = repeats.iter().map(|r| r.final_metric).collect();
    let (mean_metric, std_error) = mean_and_std_error(&metrics);
    AlgorithmSummary { name: name.to_string(), config, repeats, mean_metric, std_error, search: None }
}

fn build_speedup(cfg: &ExperimentConfig, algorithms: &[AlgorithmSummary], runs: &[Vec<RunResult>]) -> Result<Option<SpeedupTable>> {
    if cfg.report.thresholds.is_empty() {
        return Ok(None);
    }
    let traces: Vec<(&str, &[TraceRow])> = algorithms
        .iter()
        .zip(runs)
        .map(|(a, r)| (a.name.as_str(), r[0].trace.as_slice()))
        .collect();
    let baseline = cfg.report.baseline.clone().unwrap_or_else(|| algorithms[0].name.clone());
    speedup_table(&traces, &cfg.report.thresholds, &baseline).map(Some)
}

fn finish(cfg: &ExperimentConfig, algorithms: Vec<AlgorithmSummary>, runs: Vec<Vec<RunResult>>) -> Result<Experiment> {
    let speedup = build_speedup(cfg, &algorithms, &runs)?;
    let diverged = algorithms.iter().any(AlgorithmSummary::any_diverged);
    Ok(Experiment {
        summary: RunSummary { config: cfg.clone(), algorithms, speedup, diverged },
        runs,
    })
}

/// Runs every configured algorithm with its fixed hyperparameters.
pub fn run_single(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let mut algorithms = Vec::new();
    let mut runs = Vec::new();
    for alg in cfg.algorithms() {
        let resolved = resolve_defaults(&with_lambda(alg, &problem, cfg.seed)?);
        let results = run_repeats(&resolved, &problem, cfg.seed, cfg.repeats)?;
        algorithms.push(summarize(&alg.display_name(), resolved, cfg.seed, &results));
        runs.push(results);
    }
    finish(cfg, algorithms, runs)
}

/// Tunes `γ` and `p` for every configured algorithm by random search, then
/// reports each algorithm at its best candidate.
pub fn run_search(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let spec = cfg.search.clone().unwrap_or_default();
    spec.validate()?;
    let problem = cfg.build_problem()?;
    let candidates = sample_candidates(&spec);
    let mut algorithms = Vec::new();
    let mut runs = Vec::new();
    for alg in cfg.algorithms() {
        let (report, best_cfg, best_runs) = search::search_algorithm(alg, &candidates, &spec, &problem, cfg)?;
        let mut summary = summarize(&alg.display_name(), resolve_defaults(&best_cfg), cfg.seed, &best_runs);
        summary.search = Some(report);
        algorithms.push(summary);
        runs.push(best_runs);
    }
    finish(cfg, algorithms, runs)
}
