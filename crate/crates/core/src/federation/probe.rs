use crate::error::{check_dim, invalid, Result};
use crate::objectives::{global_gradient, Objective};
use crate::ops::{norm_inf, pairwise_mean};

use super::step::{local_step_plain, ClientState};

/// Starting every client at the consensus optimum `w*` with control variates
/// `h_i`, runs one plain local step and returns the average of the results.
/// With `h_i = ∇f_i(w*)` this is `w* + (γ/N) Σ h_i`.
///
/// Requires `Σ ∇f_i(w*) ≈ 0`, checked relative to the size of the individual gradients.
pub fn fixed_point_probe<O: Objective>(objectives: &[O], w_star: &[f64], h: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    check_dim(objectives.len(), h.len())?;
    let n = objectives.len() as f64;
    let total = global_gradient(objectives, w_star)?;
    let mut scale = 0.0;
    for o in objectives {
        scale += norm_inf(&o.gradient(w_star)?);
    }
    if n * norm_inf(&total) > 1e-9 * scale.max(1.0) {
        return Err(invalid("w_star is not a stationary point of the average loss"));
    }
    let steps: Vec<Vec<f64>> = objectives
        .iter()
        .zip(h)
        .map(|(o, hi)| {
            let c = ClientState { w: w_star.to_vec(), h: hi.clone() };
            local_step_plain(&c, o, gamma)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = steps.iter().map(Vec::as_slice).collect();
    Ok(pairwise_mean(&refs))
}
