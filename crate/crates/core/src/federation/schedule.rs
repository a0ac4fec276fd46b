use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// RNG stream reserved for the communication coin flips.
pub(crate) const SCHEDULE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Communicate every `⌊1/p⌋` iterations, starting at iteration 0.
    Deterministic,
    /// Communicate independently with probability `p`.
    Bernoulli,
}

/// Communication flags `θ_0, …, θ_{T−1}`, fixed before training starts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub theta: Vec<bool>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn communications(&self) -> usize {
        self.theta.iter().filter(|&&b| b).count()
    }
}

/// `⌊1/p⌋`, tolerant of `p` values like `1/3` that are not exactly representable.
pub fn local_steps_per_round(p: f64) -> u64 {
    ((1.0 / p) * (1.0 + 1e-12)).floor() as u64
}

pub fn make_schedule(p: f64, iterations: u64, mode: ScheduleMode, seed: u64) -> Result<Schedule> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("communication probability p = {p} outside (0, 1]")));
    }
    let theta = match mode {
        ScheduleMode::Deterministic => {
            let k = local_steps_per_round(p);
            (0..iterations).map(|t| t % k == 0).collect()
        }
        ScheduleMode::Bernoulli => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(SCHEDULE_STREAM);
            (0..iterations).map(|_| rng.random::<f64>() < p).collect()
        }
    };
    Ok(Schedule { theta })
}
