use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Task;
use crate::error::{invalid, Error, Result};
use crate::metrics::{evaluate_pruned, BitModel, CommLedger, TraceRow};
use crate::ops::{hard_threshold_in_place, norm2, sparsity, SparsityTarget};
use crate::problem::FederatedProblem;

use super::schedule::{make_schedule, ScheduleMode};
use super::step::{communication_round, skip_round, ClientState, StepRule};
use super::variant::{LocalStepKind, Variant};

/// RNG stream for the softmax weight initialisation.
const INIT_STREAM: u64 = 2;

/// Thresholds that stop a run as divergent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceGuard {
    /// Stop when the training loss exceeds this multiple of the initial loss.
    pub loss_factor: f64,
    /// Stop when `‖w‖₂` exceeds this.
    pub max_norm: f64,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        DivergenceGuard { loss_factor: 1e6, max_norm: 1e8 }
    }
}

fn default_sparsity() -> SparsityTarget {
    SparsityTarget::Fraction(0.9)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    /// Display name in outputs; defaults to the variant name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub variant: Variant,
    /// Step size γ.
    pub gamma: f64,
    /// Communication probability.
    pub p: f64,
    /// Total local iterations `T`.
    pub iterations: u64,
    #[serde(default = "default_sparsity")]
    pub sparsity: SparsityTarget,
    /// Overrides the variant's default schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleMode>,
    /// Overrides the variant's local step, e.g. STE for the server-pruned variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_step: Option<LocalStepKind>,
    /// ℓ1 weight; only meaningful for `rand_prox_l1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_l1: Option<f64>,
    #[serde(default)]
    pub guard: DivergenceGuard,
    /// Set per repeat by the runner.
    #[serde(skip)]
    pub seed: u64,
}

impl AlgorithmConfig {
    pub fn new(variant: Variant, gamma: f64, p: f64, iterations: u64, sparsity: SparsityTarget) -> Self {
        AlgorithmConfig {
            name: None,
            variant,
            gamma,
            p,
            iterations,
            sparsity,
            schedule: None,
            local_step: None,
            lambda_l1: None,
            guard: DivergenceGuard::default(),
            seed: 0,
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.variant.name().to_string())
    }

    pub fn schedule_mode(&self) -> ScheduleMode {
        self.schedule.unwrap_or_else(|| self.variant.default_schedule())
    }

    pub fn local_step_kind(&self) -> LocalStepKind {
        self.local_step.unwrap_or_else(|| self.variant.local_step())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive and finite, got {}", self.gamma)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(invalid(format!("p must lie in (0, 1], got {}", self.p)));
        }
        let soft = self.local_step_kind() == LocalStepKind::Soft;
        match self.lambda_l1 {
            Some(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(invalid(format!("lambda_l1 must be non-negative, got {l}")));
            }
            Some(l) if l != 0.0 && !soft => {
                return Err(invalid(format!("lambda_l1 = {l} is only used by soft-threshold steps")));
            }
            _ => {}
        }
        if !(self.guard.loss_factor > 0.0 && self.guard.max_norm > 0.0) {
            return Err(invalid("divergence guard thresholds must be positive"));
        }
        Ok(())
    }
}

/// Why and when a run was stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub iter: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// `TopK` of the last global model.
    pub final_w: Vec<f64>,
    /// The last global model before the final pruning.
    pub last_global: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub ledger: CommLedger,
    /// Per-round, per-client uplink nonzeros.
    pub uplink_nnz: Vec<Vec<usize>>,
    pub diverged: Option<DivergenceInfo>,
}

impl RunResult {
    pub fn final_metric(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.test_metric)
    }
}

/// Starting model: zero for regression, small uniform weights for softmax.
pub fn initial_model(problem: &FederatedProblem, seed: u64) -> Vec<f64> {
    let d = problem.model_dim();
    match problem.task {
        Task::Regression => vec![0.0; d],
        Task::Classification { .. } => {
            let scale = 1.0 / (problem.test.x.ncols() as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(INIT_STREAM);
            (0..d).map(|_| rng.random_range(-scale..=scale)).collect()
        }
    }
}

pub fn run_algorithm(config: &AlgorithmConfig, problem: &FederatedProblem) -> Result<RunResult> {
    run_algorithm_with_sink(config, problem, &mut |_, _| {})
}

/// Runs `T` local iterations, emitting one trace row for the initial model and
/// one per communication round. The sink also receives the unpruned global
/// model of that row. Divergence stops the run and is reported in the result
/// rather than as an error.
pub fn run_algorithm_with_sink(
    config: &AlgorithmConfig,
    problem: &FederatedProblem,
    sink: &mut dyn FnMut(&TraceRow, &[f64]),
) -> Result<RunResult> {
    config.validate()?;
    let d = problem.model_dim();
    let k = config.sparsity.resolve(d)?;
    let target = SparsityTarget::Count(k);
    let schedule = make_schedule(config.p, config.iterations, config.schedule_mode(), config.seed)?;
    let rule = StepRule {
        variant: config.variant,
        local_step: config.local_step_kind(),
        gamma: config.gamma,
        p: config.p,
        k,
        lambda: config.lambda_l1.unwrap_or(0.0),
        bits: BitModel::default(),
    };

    let w0 = initial_model(problem, config.seed);
    let mut clients: Vec<ClientState> = (0..problem.n_clients()).map(|_| ClientState::new(w0.clone())).collect();
    let mut global = w0;
    let mut ledger = CommLedger::default();
    let mut trace = Vec::new();
    let mut uplink_nnz = Vec::new();
    let mut diverged = None;

    let eval0 = evaluate_pruned(&global, target, problem)?;
    let initial_loss = eval0.train_loss;
    let row0 = TraceRow {
        round: 0,
        iter: 0,
        uplink_bits: 0,
        downlink_bits: 0,
        train_loss: eval0.train_loss,
        test_metric: eval0.test_metric,
        sparsity: pruned_sparsity(&global, k),
        sum_h_norm: 0.0,
        mean_h_norm: 0.0,
        w_norm: norm2(&global),
    };
    sink(&row0, &global);
    trace.push(row0);

    for (t, &communicate) in schedule.theta.iter().enumerate() {
        let t = t as u64;
        let tildes: Result<Vec<Vec<f64>>> = clients
            .iter()
            .zip(&problem.objectives)
            .map(|(c, o)| rule.local_step(c, o))
            .collect();
        let tildes = match tildes {
            Ok(v) => v,
            Err(Error::Divergence { reason, .. }) => {
                diverged = Some(DivergenceInfo { iter: t, reason });
                break;
            }
            Err(e) => return Err(e),
        };
        if !communicate {
            skip_round(&mut clients, tildes)?;
            continue;
        }
        let outcome = match communication_round(&mut clients, tildes, &rule) {
            Ok(o) => o,
            Err(Error::Divergence { reason, .. }) => {
                diverged = Some(DivergenceInfo { iter: t, reason });
                break;
            }
            Err(e) => return Err(e),
        };
        ledger.record_round(outcome.uplink_bits, outcome.downlink_bits);
        uplink_nnz.push(outcome.uplink_nnz);
        let w_norm = norm2(&outcome.global_w);
        let eval = evaluate_pruned(&outcome.global_w, target, problem)?;
        let row = TraceRow {
            round: ledger.rounds() as u64,
            iter: t + 1,
            uplink_bits: ledger.uplink_bits,
            downlink_bits: ledger.downlink_bits,
            train_loss: eval.train_loss,
            test_metric: eval.test_metric,
            sparsity: pruned_sparsity(&outcome.global_w, k),
            sum_h_norm: outcome.sum_h_norm,
            mean_h_norm: outcome.mean_h_norm,
            w_norm,
        };
        sink(&row, &outcome.global_w);
        trace.push(row);
        if let Some(reason) = guard_trip(&config.guard, initial_loss, eval.train_loss, w_norm) {
            diverged = Some(DivergenceInfo { iter: t, reason });
            break;
        }
        global = outcome.global_w;
    }

    let mut final_w = global.clone();
    hard_threshold_in_place(&mut final_w, k);
    Ok(RunResult { final_w, last_global: global, trace, ledger, uplink_nnz, diverged })
}

fn pruned_sparsity(w: &[f64], k: usize) -> f64 {
    let mut v = w.to_vec();
    hard_threshold_in_place(&mut v, k);
    sparsity(&v)
}

fn guard_trip(guard: &DivergenceGuard, initial_loss: f64, loss: f64, w_norm: f64) -> Option<String> {
    if !loss.is_finite() || !w_norm.is_finite() {
        return Some("non-finite loss or model".into());
    }
    if loss > guard.loss_factor * initial_loss.abs().max(f64::MIN_POSITIVE) {
        return Some(format!("training loss {loss:e} exceeds {} x initial {initial_loss:e}", guard.loss_factor));
    }
    if w_norm > guard.max_norm {
        return Some(format!("model norm {w_norm:e} exceeds {:e}", guard.max_norm));
    }
    None
}

/// True when the output of `config` on a fixed problem does not depend on its seed.
pub fn seed_invariant(config: &AlgorithmConfig, problem: &FederatedProblem) -> bool {
    config.schedule_mode() == ScheduleMode::Deterministic && problem.task == Task::Regression
}
