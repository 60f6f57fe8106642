//! Bootstrapped ensemble of probabilistic dynamics models.
//!
//! Each model maps a normalized `s ⊕ a` to the mean and log-std of a diagonal
//! Gaussian over the state delta `Δ = s' − s`. Rollouts fan out `M` samples
//! from each of the `B` models per step and continue from one uniformly chosen
//! candidate.

mod ensemble;
mod rollout;

pub use ensemble::{
    gaussian_nll, nll_loss, Affine, FitOptions, GaussianEnsemble, ModelData, ProbabilisticModel, TrainReport,
};
pub use rollout::{generate_rollouts, rollout, sample_transition_set, ActionSource, PolicyFn, RewardFn, TransitionSet};
