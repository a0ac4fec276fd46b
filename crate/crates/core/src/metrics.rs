//! Communication accounting and evaluation metrics.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datasets::{DataBlock, Task};
use crate::error::{check_dim, invalid, Error, Result};
use crate::objectives::global_loss;
use crate::ops::{hard_threshold_in_place, nnz, norm2, SparsityTarget};
use crate::problem::FederatedProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Every coordinate as a value.
    Dense,
    /// Coordinate list: one value plus one index per nonzero.
    Sparse,
}

/// Bit widths used to cost payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitModel {
    pub value_bits: u64,
}

impl Default for BitModel {
    fn default() -> Self {
        BitModel { value_bits: 32 }
    }
}

/// `⌈log₂ d⌉`, the index width for a `d`-dimensional model.
pub fn index_bits(d: usize) -> u64 {
    if d <= 1 {
        0
    } else {
        u64::from(usize::BITS - (d - 1).leading_zeros())
    }
}

impl BitModel {
    pub fn bits_for(&self, nnz: usize, d: usize, encoding: Encoding) -> u64 {
        match encoding {
            Encoding::Dense => self.value_bits * d as u64,
            Encoding::Sparse => nnz as u64 * (self.value_bits + index_bits(d)),
        }
    }
}

/// Size of `v` on the wire with 32-bit values.
pub fn payload_bits(v: &[f64], encoding: Encoding) -> u64 {
    BitModel::default().bits_for(nnz(v), v.len(), encoding)
}

/// Cumulative uplink/downlink bit counters with per-round history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// `(uplink, downlink)` bits spent in each communication round.
    pub history: Vec<(u64, u64)>,
}

impl CommLedger {
    pub fn record_round(&mut self, uplink: u64, downlink: u64) {
        self.uplink_bits += uplink;
        self.downlink_bits += downlink;
        self.history.push((uplink, downlink));
    }

    pub fn rounds(&self) -> usize {
        self.history.len()
    }
}

/// One row per communication round (plus the initial evaluation at round 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u64,
    pub iter: u64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub train_loss: f64,
    pub test_metric: f64,
    pub sparsity: f64,
    pub sum_h_norm: f64,
    pub mean_h_norm: f64,
    pub w_norm: f64,
}

pub fn r_squared(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(y.len(), pred.len())?;
    if y.len() < 2 {
        return Err(invalid("R² needs at least two samples"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² of a constant target".into()));
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of positions where the predicted label equals the true one.
pub fn accuracy(pred: &[usize], y: &[usize]) -> Result<f64> {
    check_dim(y.len(), pred.len())?;
    if y.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len() as f64)
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Test-split quality of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// R² for regression, accuracy for classification.
    pub test_metric: f64,
    /// Mean squared residual / 2 for regression, mean negative log-likelihood
    /// for classification.
    pub test_loss: f64,
    /// `(1/N) Σ f_i(w)`.
    pub train_loss: f64,
}

fn test_scores(w: &[f64], test: &DataBlock, task: Task) -> Result<(f64, f64)> {
    match task {
        Task::Regression => {
            let pred = test.x.dot(&ArrayView1::from(w));
            let y = test.y.as_slice().expect("contiguous");
            let pred = pred.as_slice().expect("contiguous");
            let loss = y.iter().zip(pred).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>()
                / y.len().max(1) as f64;
            Ok((r_squared(pred, y)?, loss))
        }
        Task::Classification { classes } => {
            let weights = ArrayView2::from_shape((classes, test.x.ncols()), w)
                .map_err(|_| Error::DimensionMismatch { expected: classes * test.x.ncols(), got: w.len() })?;
            let logits = test.x.dot(&weights.t());
            let labels = test.labels()?;
            let mut nll = 0.0;
            let mut pred = Vec::with_capacity(labels.len());
            for (row, &l) in logits.axis_iter(Axis(0)).zip(&labels) {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                nll += lse - row[l];
                pred.push(argmax(row));
            }
            Ok((accuracy(&pred, &labels)?, nll / labels.len().max(1) as f64))
        }
    }
}

/// Evaluates `w` exactly as given.
pub fn evaluate(w: &[f64], problem: &FederatedProblem) -> Result<Evaluation> {
    check_dim(problem.model_dim(), w.len())?;
    let (test_metric, test_loss) = test_scores(w, &problem.test, problem.task)?;
    Ok(Evaluation {
        test_metric,
        test_loss,
        train_loss: global_loss(&problem.objectives, w)?,
    })
}

/// Prunes `w` to the target sparsity, then evaluates. Every variant is
/// evaluated through this function so that reported models are comparable.
pub fn evaluate_pruned(w: &[f64], k: SparsityTarget, problem: &FederatedProblem) -> Result<Evaluation> {
    let k = k.resolve(w.len())?;
    let mut pruned = w.to_vec();
    hard_threshold_in_place(&mut pruned, k);
    evaluate(&pruned, problem)
}

/// Exact control-variate diagnostics `(‖Σh‖₂, mean ‖h_i‖₂)` summed in client order.
pub fn control_norms<'a>(hs: impl IntoIterator<Item = &'a [f64]>) -> (f64, f64) {
    let mut sum: Vec<f64> = Vec::new();
    let mut norms = 0.0;
    let mut n = 0usize;
    for h in hs {
        if sum.is_empty() {
            sum = vec![0.0; h.len()];
        }
        for (s, v) in sum.iter_mut().zip(h) {
            *s += v;
        }
        norms += norm2(h);
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    (norm2(&sum), norms / n as f64)
}

/// Bits at which one trace first reaches one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupCell {
    pub threshold: f64,
    /// `None` when the threshold is never reached.
    pub bits: Option<u64>,
    /// Baseline bits over these bits; `None` when either side is unreached.
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub name: String,
    pub cells: Vec<SpeedupCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub baseline: String,
    pub thresholds: Vec<f64>,
    pub rows: Vec<SpeedupRow>,
}

/// Cumulative uplink bits at the first row whose test metric reaches
/// `threshold` (higher is better).
pub fn bits_to_threshold(trace: &[TraceRow], threshold: f64) -> Option<u64> {
    trace
        .iter()
        .find(|r| r.test_metric >= threshold)
        .map(|r| r.uplink_bits)
}

/// Uplink communication needed to reach each threshold, relative to a baseline.
pub fn speedup_table(
    traces: &[(&str, &[TraceRow])],
    thresholds: &[f64],
    baseline: &str,
) -> Result<SpeedupTable> {
    let base = traces
        .iter()
        .find(|(n, _)| *n == baseline)
        .ok_or_else(|| invalid(format!("unknown baseline {baseline:?}")))?
        .1;
    let base_bits: Vec<Option<u64>> = thresholds.iter().map(|&t| bits_to_threshold(base, t)).collect();
    let rows = traces
        .iter()
        .map(|(name, trace)| SpeedupRow {
            name: name.to_string(),
            cells: thresholds
                .iter()
                .zip(&base_bits)
                .map(|(&t, &b)| {
                    let bits = bits_to_threshold(trace, t);
                    let speedup = match (b, bits) {
                        (Some(b), Some(m)) if m > 0 => Some(b as f64 / m as f64),
                        (Some(b), Some(_)) if b == 0 => Some(1.0),
                        _ => None,
                    };
                    SpeedupCell { threshold: t, bits, speedup }
                })
                .collect(),
        })
        .collect();
    Ok(SpeedupTable {
        baseline: baseline.to_string(),
        thresholds: thresholds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: u64, metric: f64) -> TraceRow {
        TraceRow {
            round: 0,
            iter: 0,
            uplink_bits: bits,
            downlink_bits: 0,
            train_loss: 0.0,
            test_metric: metric,
            sparsity: 0.0,
            sum_h_norm: 0.0,
            mean_h_norm: 0.0,
            w_norm: 0.0,
        }
    }

    #[test]
    fn payload_examples() {
        assert_eq!(payload_bits(&vec![1.0; 100], Encoding::Dense), 3200);
        let mut v = vec![0.0; 100];
        v[..10].iter_mut().for_each(|x| *x = 1.0);
        assert_eq!(payload_bits(&v, Encoding::Sparse), 390);
        assert_eq!(payload_bits(&[0.0; 100], Encoding::Sparse), 0);
    }

    #[test]
    fn index_width() {
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(100), 7);
        assert_eq!(index_bits(128), 7);
        assert_eq!(index_bits(129), 8);
        assert_eq!(index_bits(200), 8);
    }

    #[test]
    fn r_squared_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &y).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0, 4.0], &y).unwrap(), 0.5);
        assert!(matches!(
            r_squared(&[1.0, 1.0], &[3.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 2, 3]).unwrap(), 0.75);
    }

    #[test]
    fn diagnostics_examples() {
        let z = [0.0, 0.0];
        assert_eq!(control_norms([&z[..], &z[..]]), (0.0, 0.0));
        let (s, m) = control_norms([&[1.0, 0.0][..], &[-1.0, 0.0][..]]);
        assert_eq!((s, m), (0.0, 1.0));
        let (s, m) = control_norms([&[3.0, 4.0][..], &[3.0, 4.0][..]]);
        assert_eq!((s, m), (10.0, 5.0));
    }

    #[test]
    fn speedup_examples() {
        let method = vec![row(0, 0.0), row(90_000, 0.23)];
        let base = vec![row(0, 0.0), row(1_000_000, 0.21), row(1_440_000, 0.23)];
        let never = vec![row(0, 0.0), row(5, 0.1)];
        let table = speedup_table(
            &[("ours", &method), ("final", &base), ("never", &never)],
            &[0.225],
            "final",
        )
        .unwrap();
        assert_eq!(table.rows[0].cells[0].bits, Some(90_000));
        assert!((table.rows[0].cells[0].speedup.unwrap() - 16.0).abs() < 1e-12);
        assert_eq!(table.rows[1].cells[0].speedup, Some(1.0));
        assert_eq!(table.rows[2].cells[0].bits, None);
        assert_eq!(table.rows[2].cells[0].speedup, None);
        assert!(speedup_table(&[("ours", &method)], &[0.2], "missing").is_err());
    }

    #[test]
    fn ledger_accumulates() {
        let mut l = CommLedger::default();
        assert_eq!((l.uplink_bits, l.downlink_bits), (0, 0));
        l.record_round(10, 4);
        l.record_round(6, 0);
        assert_eq!((l.uplink_bits, l.downlink_bits, l.rounds()), (16, 4, 2));
    }
}
