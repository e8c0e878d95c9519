//! Synthetic workloads and expert fleets.

mod fleet;
mod kmeans;
mod tokens;
mod workload;

pub use fleet::{generate_fleet, home_clusters, CompetenceProfile, FleetSpec, HardwareTier, Span};
pub use kmeans::{align_labels, kmeans_cluster, KMeansResult};
pub use tokens::TokenModel;
pub use workload::{generate_workload, WorkloadSpec};

use crate::domain::{ExpertProfile, Prompt, VocabDistribution};
use crate::error::Result;

/// `f_n(h(x, t))` for one expert, prompt and step.
pub fn expert_next_token_dist(
    model: &TokenModel,
    expert: &ExpertProfile,
    prompt: &Prompt,
    step: usize,
) -> Result<VocabDistribution> {
    model.next_token_dist(expert, prompt, step)
}
