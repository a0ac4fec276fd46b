//! Vector primitives shared by every algorithm variant: hard thresholding
//! (TopK), soft thresholding (the l1 prox) and sparsity measurement.
//!
//! Model vectors are plain `f64` slices. All functions here are pure.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of nonzeros kept by hard thresholding, either as an explicit count
/// or as a target sparsity fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityTarget {
    /// Keep exactly `K` entries, `1 <= K <= d`.
    Count(usize),
    /// Fraction `s` of zero entries, `s` in `[0, 1)`.
    Fraction(f64),
}

impl SparsityTarget {
    /// Resolves the target against model dimension `d`.
    ///
    /// A fraction maps to `round((1 - s) * d)` clamped into `[1, d]`.
    pub fn resolve(&self, d: usize) -> Result<usize> {
        if d == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        match *self {
            SparsityTarget::Count(k) => {
                if k == 0 || k > d {
                    Err(invalid(format!("K = {k} outside [1, {d}]")))
                } else {
                    Ok(k)
                }
            }
            SparsityTarget::Fraction(s) => {
                if !(0.0..1.0).contains(&s) {
                    return Err(invalid(format!("sparsity fraction {s} outside [0, 1)")));
                }
                let k = ((1.0 - s) * d as f64).round() as usize;
                Ok(k.clamp(1, d))
            }
        }
    }

    /// Target that keeps every entry.
    pub fn dense(d: usize) -> Self {
        SparsityTarget::Count(d)
    }
}

/// Strict total order used for TopK selection: larger magnitude first,
/// lower index first among equal magnitudes.
fn magnitude_order(v: &[f64], i: usize, j: usize) -> Ordering {
    v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j))
}

/// Indices of the `k` largest-magnitude entries, sorted ascending.
///
/// Panics if `k > v.len()`; callers resolve `k` through [`SparsityTarget`].
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    assert!(k <= v.len(), "k = {k} exceeds dimension {}", v.len());
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if k < v.len() {
        if k > 0 {
            idx.select_nth_unstable_by(k - 1, |&i, &j| magnitude_order(v, i, j));
        }
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

/// Support of `top_k(v, k)` as a sorted index set.
pub fn top_k_mask(v: &[f64], k: SparsityTarget) -> Result<Vec<usize>> {
    let k = k.resolve(v.len())?;
    Ok(top_k_indices(v, k))
}

/// Zeroes all but the `k` largest-magnitude entries in place.
pub fn hard_threshold_in_place(v: &mut [f64], k: usize) {
    if k >= v.len() {
        return;
    }
    if k == 0 {
        v.fill(0.0);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let cut = *kth;
    let above = v.iter().filter(|x| x.abs().total_cmp(&cut) == Ordering::Greater).count();
    // Entries tied with the cut are kept lowest index first.
    let mut ties = k - above;
    for x in v.iter_mut() {
        match x.abs().total_cmp(&cut) {
            Ordering::Greater => {}
            Ordering::Equal if ties > 0 => ties -= 1,
            _ => *x = 0.0,
        }
    }
}

/// Hard thresholding: keeps the `K` largest-magnitude entries of `v`
/// unchanged and zeroes the rest. Ties go to the lowest index.
pub fn top_k(v: &[f64], k: SparsityTarget) -> Result<Vec<f64>> {
    let k = k.resolve(v.len())?;
    let mut out = v.to_vec();
    hard_threshold_in_place(&mut out, k);
    Ok(out)
}

/// Prox of `tau * |x|_1`, applied in place.
pub fn soft_threshold_in_place(v: &mut [f64], tau: f64) {
    for x in v.iter_mut() {
        *x = if *x > tau {
            *x - tau
        } else if *x < -tau {
            *x + tau
        } else {
            0.0
        };
    }
}

/// Soft thresholding `sign(v_i) * max(|v_i| - tau, 0)`.
pub fn soft_threshold(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) {
        return Err(invalid(format!("soft-threshold level {tau} must be >= 0")));
    }
    let mut out = v.to_vec();
    soft_threshold_in_place(&mut out, tau);
    Ok(out)
}

/// Count of entries that are not exactly zero.
pub fn nnz(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// Fraction of exactly-zero entries.
pub fn sparsity(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.len() - nnz(v)) as f64 / v.len() as f64
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Elementwise mean of equally sized vectors, using pairwise summation over
/// the vectors in their given order.
pub fn pairwise_mean(vectors: &[&[f64]]) -> Vec<f64> {
    assert!(!vectors.is_empty(), "mean of zero vectors");
    let mut sum = pairwise_sum(vectors);
    let n = vectors.len() as f64;
    for x in sum.iter_mut() {
        *x /= n;
    }
    sum
}

fn pairwise_sum(vectors: &[&[f64]]) -> Vec<f64> {
    match vectors.len() {
        1 => vectors[0].to_vec(),
        2 => vectors[0]
            .iter()
            .zip(vectors[1])
            .map(|(a, b)| a + b)
            .collect(),
        n => {
            let (left, right) = vectors.split_at(n / 2);
            let mut acc = pairwise_sum(left);
            for (a, b) in acc.iter_mut().zip(pairwise_sum(right)) {
                *a += b;
            }
            acc
        }
    }
}
