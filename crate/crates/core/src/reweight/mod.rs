//! Learned reweighting of imaginary transition sets.
//!
//! Each set is summarized by a feature vector (trunk state, action, and the
//! spread of the predicted rewards and next states). A GRU reads a rollout's
//! features in depth order and emits one weight in `(0, 1)` per set. The weight
//! net is trained by differentiating the real-data SAC losses through one
//! plain SGD step on the weighted imaginary losses.

mod features;
mod meta;
mod update;
mod wnet;

pub use features::{build_features, feature_dim, FeatureNormalizer};
pub use meta::{meta_step, Candidate, MetaEvaluation, MetaProblem, MetaSizes, MetaStepReport, SetGradients};
pub use update::{reweighted_policy_value_update, set_items};
pub use wnet::{WeightNet, HEAD_BIAS_INIT};

use crate::error::Result;

/// Weights for one rollout: normalize each set's features, then run the net.
pub fn weight_rollout(
    wnet: &WeightNet,
    normalizer: &FeatureNormalizer,
    rollout: &[crate::dynamics::TransitionSet],
) -> Result<Vec<f64>> {
    if rollout.is_empty() {
        return Err(crate::error::Error::Empty("rollout"));
    }
    let f = rollout
        .iter()
        .map(|s| build_features(s).map(|x| normalizer.normalize(&x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(wnet.weights(&f))
}
