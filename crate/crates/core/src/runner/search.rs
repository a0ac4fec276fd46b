use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::federation::{AlgorithmConfig, RunResult};
use crate::problem::FederatedProblem;

use super::{mean_and_std_error, run_repeats, with_lambda, ExperimentConfig, SearchConfig};

/// One sampled hyperparameter pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub gamma: f64,
    /// `⌊1/p⌋`; the candidate runs with `p = 1/local_steps`.
    pub local_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub gamma: f64,
    pub local_steps: u64,
    pub p: f64,
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_l1: Option<f64>,
    pub mean_metric: f64,
    pub std_error: f64,
    pub mean_uplink_bits: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub candidates: Vec<CandidateResult>,
    /// Index of the selected candidate.
    pub best: usize,
}

/// Candidate list drawn from the search seed alone.
pub fn sample_candidates(spec: &SearchConfig) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = (spec.gamma_min.ln(), spec.gamma_max.ln());
    (0..spec.samples)
        .map(|_| {
            let gamma = if hi > lo { rng.random_range(lo..hi).exp() } else { spec.gamma_min };
            let local_steps = rng.random_range(spec.local_steps_min..=spec.local_steps_max);
            Candidate { gamma, local_steps }
        })
        .collect()
}

/// Higher metric first, then fewer uplink bits; divergent or undefined results last.
fn rank(a: &CandidateResult, b: &CandidateResult) -> Ordering {
    let bad = |c: &CandidateResult| c.diverged || !c.mean_metric.is_finite();
    match (bad(a), bad(b)) {
        (true, false) => return Ordering::Greater,
        (false, true) => return Ordering::Less,
        (true, true) => return Ordering::Equal,
        _ => {}
    }
    b.mean_metric
        .total_cmp(&a.mean_metric)
        .then(a.mean_uplink_bits.total_cmp(&b.mean_uplink_bits))
}

pub(super) fn search_algorithm(
    alg: &AlgorithmConfig,
    candidates: &[Candidate],
    spec: &SearchConfig,
    problem: &FederatedProblem,
    cfg: &ExperimentConfig,
) -> Result<(SearchReport, AlgorithmConfig, Vec<RunResult>)> {
    let evaluated: Vec<(CandidateResult, AlgorithmConfig, Vec<RunResult>)> = candidates
        .par_iter()
        .map(|c| {
            let mut run_cfg = alg.clone();
            run_cfg.gamma = c.gamma;
            run_cfg.p = 1.0 / c.local_steps as f64;
            if let Some(rounds) = spec.comm_rounds {
                run_cfg.iterations = rounds * c.local_steps;
            }
            let run_cfg = with_lambda(&run_cfg, problem, cfg.seed)?;
            let runs = run_repeats(&run_cfg, problem, cfg.seed, cfg.repeats)?;
            let metrics: Vec<f64> = runs.iter().map(RunResult::final_metric).collect();
            let (mean_metric, std_error) = mean_and_std_error(&metrics);
            let mean_uplink_bits = runs.iter().map(|r| r.ledger.uplink_bits as f64).sum::<f64>() / runs.len() as f64;
            let result = CandidateResult {
                gamma: c.gamma,
                local_steps: c.local_steps,
                p: run_cfg.p,
                iterations: run_cfg.iterations,
                lambda_l1: run_cfg.lambda_l1,
                mean_metric,
                std_error,
                mean_uplink_bits,
                diverged: runs.iter().any(|r| r.diverged.is_some()),
            };
            Ok((result, run_cfg, runs))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..evaluated.len() {
        if rank(&evaluated[i].0, &evaluated[best].0) == Ordering::Less {
            best = i;
        }
    }
    let mut results = Vec::with_capacity(evaluated.len());
    let mut chosen = None;
    for (i, (res, run_cfg, runs)) in evaluated.into_iter().enumerate() {
        if i == best {
            chosen = Some((run_cfg, runs));
        }
        results.push(res);
    }
    let (best_cfg, best_runs) = chosen.expect("at least one candidate");
    Ok((SearchReport { candidates: results, best }, best_cfg, best_runs))
}
