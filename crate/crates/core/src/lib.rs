//! Model-based soft actor-critic with a meta-learned weight function over
//! imaginary transitions.
//!
//! A bootstrapped ensemble of probabilistic dynamics models branches short
//! rollouts from real states. Each rollout step yields a *transition set*
//! (every ensemble member's sampled next states). A GRU weight network scores
//! each set in `(0, 1)`; it is trained with an exact one-step meta-gradient so
//! that a virtual SGD step on the weighted imaginary losses lowers the critic
//! and actor losses measured on real transitions. The actor and critics are
//! then trained on the reweighted imaginary data plus real batches.
//!
//! Modules, bottom up: [`nn`], [`envs`], [`replay`], [`dynamics`], [`sac`],
//! [`reweight`], [`harness`]. [`par`] holds the chunked data-parallel helpers.

pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod par;
pub mod replay;
pub mod reweight;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
