use crate::error::{check_dim, invalid, Error, Result};
use crate::metrics::{control_norms, BitModel, Encoding};
use crate::objectives::Objective;
use crate::ops::{all_finite, hard_threshold_in_place, nnz, pairwise_mean, soft_threshold_in_place};

use super::variant::{ControlReference, LocalStepKind, Variant};

/// Local iterate and control variate of one client. Client `i` is paired with
/// the `i`-th objective of the problem being solved.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub w: Vec<f64>,
    pub h: Vec<f64>,
}

impl ClientState {
    pub fn new(w0: Vec<f64>) -> Self {
        let h = vec![0.0; w0.len()];
        ClientState { w: w0, h }
    }
}

fn nonfinite(what: &str) -> Error {
    Error::Divergence { iter: 0, reason: format!("non-finite {what}") }
}

/// `out ← w − γ(g − h)` after checking the gradient.
fn descend(c: &ClientState, g: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !all_finite(g) {
        return Err(nonfinite("gradient"));
    }
    let out: Vec<f64> = c.w.iter().zip(g).zip(&c.h).map(|((w, g), h)| w - gamma * (g - h)).collect();
    if !all_finite(&out) {
        return Err(nonfinite("iterate"));
    }
    Ok(out)
}

pub fn local_step_plain<O: Objective + ?Sized>(c: &ClientState, objective: &O, gamma: f64) -> Result<Vec<f64>> {
    check_dim(objective.dim(), c.w.len())?;
    let g = objective.gradient(&c.w)?;
    descend(c, &g, gamma)
}

/// Gradient evaluated at `TopK(w)`, applied to the dense `w`.
pub fn local_step_ste<O: Objective + ?Sized>(c: &ClientState, objective: &O, gamma: f64, k: usize) -> Result<Vec<f64>> {
    check_dim(objective.dim(), c.w.len())?;
    let mut pruned = c.w.clone();
    hard_threshold_in_place(&mut pruned, k);
    let g = objective.gradient(&pruned)?;
    descend(c, &g, gamma)
}

pub fn local_step_topk<O: Objective + ?Sized>(c: &ClientState, objective: &O, gamma: f64, k: usize) -> Result<Vec<f64>> {
    let mut out = local_step_plain(c, objective, gamma)?;
    hard_threshold_in_place(&mut out, k);
    Ok(out)
}

pub fn local_step_soft<O: Objective + ?Sized>(c: &ClientState, objective: &O, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("l1 weight must be non-negative, got {lambda}")));
    }
    let mut out = local_step_plain(c, objective, gamma)?;
    soft_threshold_in_place(&mut out, gamma * lambda);
    Ok(out)
}

/// Everything a round needs besides the client states.
#[derive(Clone, Copy, Debug)]
pub struct StepRule {
    pub variant: Variant,
    pub local_step: LocalStepKind,
    pub gamma: f64,
    pub p: f64,
    pub k: usize,
    pub lambda: f64,
    pub bits: BitModel,
}

impl StepRule {
    pub fn local_step<O: Objective + ?Sized>(&self, c: &ClientState, objective: &O) -> Result<Vec<f64>> {
        match self.local_step {
            LocalStepKind::Plain => local_step_plain(c, objective, self.gamma),
            LocalStepKind::Ste => local_step_ste(c, objective, self.gamma, self.k),
            LocalStepKind::TopK => local_step_topk(c, objective, self.gamma, self.k),
            LocalStepKind::Soft => local_step_soft(c, objective, self.gamma, self.lambda),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// Model every client holds after the round.
    pub global_w: Vec<f64>,
    pub uplink_nnz: Vec<usize>,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// `‖Σ h_i‖₂` after the control-variate update.
    pub sum_h_norm: f64,
    pub mean_h_norm: f64,
}

/// Ends every client's local iteration without communicating.
pub fn skip_round(clients: &mut [ClientState], tildes: Vec<Vec<f64>>) -> Result<()> {
    check_dim(clients.len(), tildes.len())?;
    for (c, t) in clients.iter_mut().zip(tildes) {
        c.w = t;
    }
    Ok(())
}

/// Upload, aggregate, update control variates and broadcast.
pub fn communication_round(clients: &mut [ClientState], tildes: Vec<Vec<f64>>, rule: &StepRule) -> Result<RoundOutcome> {
    check_dim(clients.len(), tildes.len())?;
    let n = clients.len();
    if n == 0 {
        return Err(invalid("communication round with no clients"));
    }
    let d = clients[0].w.len();
    let v = rule.variant;

    let uploads: Vec<Vec<f64>> = if v.prunes_upload() {
        tildes
            .iter()
            .map(|t| {
                let mut u = t.clone();
                hard_threshold_in_place(&mut u, rule.k);
                u
            })
            .collect()
    } else {
        tildes.clone()
    };
    let encoding = v.uplink_encoding();
    let uplink_nnz: Vec<usize> = uploads.iter().map(|u| nnz(u)).collect();
    let uplink_bits = uplink_nnz.iter().map(|&z| rule.bits.bits_for(z, d, encoding)).sum();

    let refs: Vec<&[f64]> = uploads.iter().map(Vec::as_slice).collect();
    let mut aggregate = pairwise_mean(&refs);
    if !all_finite(&aggregate) {
        return Err(nonfinite("aggregate"));
    }
    if v.prunes_at_server() {
        hard_threshold_in_place(&mut aggregate, rule.k);
    }

    if let Some(reference) = v.control_reference() {
        let scale = rule.p / rule.gamma;
        for (i, c) in clients.iter_mut().enumerate() {
            let base = match reference {
                ControlReference::Uploaded => &uploads[i],
                ControlReference::Unpruned => &tildes[i],
            };
            for ((h, g), b) in c.h.iter_mut().zip(&aggregate).zip(base) {
                *h += scale * (g - b);
            }
        }
    }

    // The variant that prunes on arrival receives the dense average.
    let broadcast_nnz = nnz(&aggregate);
    let global_w = if v.prunes_after_round() {
        let mut pruned = aggregate;
        hard_threshold_in_place(&mut pruned, rule.k);
        pruned
    } else {
        aggregate
    };
    for c in clients.iter_mut() {
        c.w.clone_from(&global_w);
    }
    let (sum_h_norm, mean_h_norm) = control_norms(clients.iter().map(|c| c.h.as_slice()));
    let downlink_bits = n as u64 * rule.bits.bits_for(broadcast_nnz, d, Encoding::Sparse);
    Ok(RoundOutcome { global_w, uplink_nnz, uplink_bits, downlink_bits, sum_h_norm, mean_h_norm })
}
