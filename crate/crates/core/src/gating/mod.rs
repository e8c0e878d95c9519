//! The gating network, weight normalization, fusion and the ensemble loss.

mod loss;
mod mlp;
mod tabular;
mod train;
mod weights;

pub use loss::{
    batch_loss, empirical_loss, gate_weights, loss_gradient, loss_with_weights, sequence_loss, GatingDataset, LOG_FLOOR,
};
pub use mlp::{ForwardCache, GatingArch, GatingParams, Layer, PARAMS_SCHEMA_VERSION};
pub use tabular::{
    tabular_optimal_loss, tabular_optimal_weights, tabular_optimum, tabular_prompt_loss, TabularGating, GAP_TOL,
    SUPPORT_TOL,
};
pub use train::{train_gating, TrainConfig, TrainOutcome};
pub use weights::{fuse_distributions, normalize_weights, positive_scores, SCORE_CLAMP};
