use serde::{Deserialize, Serialize};

use crate::metrics::Encoding;

use super::schedule::ScheduleMode;

/// Algorithm family member. Each variant fixes its local step, uplink
/// pruning, server rule and control-variate handling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// STE local steps, client TopK before upload, deterministic schedule.
    SparseProxSkip,
    /// TopK after every local step, Bernoulli schedule.
    SparseProxSkipLocal,
    /// `SparseProxSkip` with the control variate updated from the unpruned iterate.
    SparseProxSkipModified,
    /// Plain ProxSkip with TopK applied at the server after averaging.
    AcceleratedServerPruning,
    /// Dense averaging and control-variate update, then clients prune the
    /// received model before continuing.
    AcceleratedServerPruningModified,
    /// Soft thresholding in place of TopK in the local step.
    #[serde(rename = "rand_prox_l1")]
    RandProxL1,
    /// Dense ProxSkip, pruned only at the end.
    FinalTopK,
    /// Local gradient descent with server-side TopK.
    FedHt,
    /// Local iterative hard thresholding with sparse uploads.
    FedIht,
    ProxSkipPlain,
    LocalGdPlain,
}

pub const ALL_VARIANTS: [Variant; 11] = [
    Variant::SparseProxSkip,
    Variant::SparseProxSkipLocal,
    Variant::SparseProxSkipModified,
    Variant::AcceleratedServerPruning,
    Variant::AcceleratedServerPruningModified,
    Variant::RandProxL1,
    Variant::FinalTopK,
    Variant::FedHt,
    Variant::FedIht,
    Variant::ProxSkipPlain,
    Variant::LocalGdPlain,
];

/// What a client computes between communications.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStepKind {
    /// `w − γ(∇f(w) − h)`
    Plain,
    /// `w − γ(∇f(TopK(w)) − h)`
    Ste,
    /// `TopK(w − γ(∇f(w) − h))`
    TopK,
    /// `soft(w − γ(∇f(w) − h), γλ)`
    Soft,
}

/// Which iterate the control-variate update subtracts from the new global model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlReference {
    /// The uploaded (pruned) iterate; keeps `Σ h_i = 0`.
    Uploaded,
    /// The local iterate before upload pruning.
    Unpruned,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::SparseProxSkip => "sparse_prox_skip",
            Variant::SparseProxSkipLocal => "sparse_prox_skip_local",
            Variant::SparseProxSkipModified => "sparse_prox_skip_modified",
            Variant::AcceleratedServerPruning => "accelerated_server_pruning",
            Variant::AcceleratedServerPruningModified => "accelerated_server_pruning_modified",
            Variant::RandProxL1 => "rand_prox_l1",
            Variant::FinalTopK => "final_top_k",
            Variant::FedHt => "fed_ht",
            Variant::FedIht => "fed_iht",
            Variant::ProxSkipPlain => "prox_skip_plain",
            Variant::LocalGdPlain => "local_gd_plain",
        }
    }

    pub fn local_step(self) -> LocalStepKind {
        match self {
            Variant::SparseProxSkip | Variant::SparseProxSkipModified => LocalStepKind::Ste,
            Variant::SparseProxSkipLocal | Variant::FedIht => LocalStepKind::TopK,
            Variant::RandProxL1 => LocalStepKind::Soft,
            Variant::AcceleratedServerPruning
            | Variant::AcceleratedServerPruningModified
            | Variant::FinalTopK
            | Variant::FedHt
            | Variant::ProxSkipPlain
            | Variant::LocalGdPlain => LocalStepKind::Plain,
        }
    }

    pub fn default_schedule(self) -> ScheduleMode {
        match self {
            Variant::SparseProxSkip
            | Variant::SparseProxSkipModified
            | Variant::FedHt
            | Variant::FedIht
            | Variant::LocalGdPlain => ScheduleMode::Deterministic,
            _ => ScheduleMode::Bernoulli,
        }
    }

    /// Clients apply TopK to their iterate before uploading it.
    pub fn prunes_upload(self) -> bool {
        matches!(
            self,
            Variant::SparseProxSkip
                | Variant::SparseProxSkipLocal
                | Variant::SparseProxSkipModified
                | Variant::FedIht
        )
    }

    pub fn uplink_encoding(self) -> Encoding {
        if self.prunes_upload() || self == Variant::RandProxL1 {
            Encoding::Sparse
        } else {
            Encoding::Dense
        }
    }

    /// The server applies TopK to the average before broadcasting.
    pub fn prunes_at_server(self) -> bool {
        matches!(self, Variant::AcceleratedServerPruning | Variant::FedHt)
    }

    /// Clients prune the received model after updating their control variate.
    pub fn prunes_after_round(self) -> bool {
        self == Variant::AcceleratedServerPruningModified
    }

    /// `None` for variants without control variates.
    pub fn control_reference(self) -> Option<ControlReference> {
        match self {
            Variant::FedHt | Variant::FedIht | Variant::LocalGdPlain => None,
            Variant::SparseProxSkipModified => Some(ControlReference::Unpruned),
            _ => Some(ControlReference::Uploaded),
        }
    }

    /// Variants whose construction keeps `Σ h_i = 0` in exact arithmetic.
    pub fn preserves_zero_sum(self) -> bool {
        !matches!(
            self,
            Variant::AcceleratedServerPruning | Variant::SparseProxSkipModified
        )
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}
