//! One-step meta-gradient for the weight net.
//!
//! A [`MetaProblem`] freezes everything that does not depend on `θ_w`: the
//! rollouts, their normalized features, the Bellman targets and the policy
//! noise for both the imaginary sets and the real batch. The meta objective is
//! then a deterministic function of `θ_w`, which is what makes the analytic
//! gradient checkable against finite differences.

use crate::dynamics::{generate_rollouts, ActionSource, GaussianEnsemble, RewardFn, TransitionSet};
use crate::error::{Error, Result};
use crate::nn::{dot, sgd_step, ParamVector};
use crate::par;
use crate::replay::ReplayBuffer;
use crate::rng::SimRng;
use crate::sac::{ActorItem, CriticItem, SacState};

use super::{build_features, set_items, FeatureNormalizer, WeightNet};

/// Sizes and rates of one meta-step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaSizes {
    /// Number of real start states and action sequences (`N_e`).
    pub rollouts: usize,
    /// Real transitions in the meta objective (`N_v`).
    pub real_batch: usize,
    pub horizon: usize,
    pub fanout_per_model: usize,
    /// Step size of the virtual SGD update (`μ`).
    pub inner_lr: f64,
}

#[derive(Clone, Debug)]
pub struct MetaProblem {
    pub rollouts: Vec<Vec<TransitionSet>>,
    /// Normalized features, one sequence per rollout.
    pub features: Vec<Vec<Vec<f64>>>,
    /// Imaginary loss terms with unit weight, index `i·H + h`.
    pub critic_items: Vec<CriticItem>,
    pub actor_items: Vec<ActorItem>,
    pub real_critic: Vec<CriticItem>,
    pub real_actor: Vec<ActorItem>,
    pub inner_lr: f64,
}

/// Per-set gradients of the unweighted imaginary losses at the current
/// parameters (`∂J_Q(tr̂)/∂θ_q`, `∂J_π(tr̂)/∂θ_π`).
#[derive(Clone, Debug)]
pub struct SetGradients {
    pub critic: Vec<Vec<f64>>,
    pub actor: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub critics: ParamVector,
    pub actor: ParamVector,
}

#[derive(Clone, Debug)]
pub struct MetaEvaluation {
    pub value: f64,
    pub critic_grad: Vec<f64>,
    pub actor_grad: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct MetaStepReport {
    pub meta_loss: f64,
    pub weights: Vec<f64>,
    pub grad_norm: f64,
    pub applied: bool,
}

impl MetaProblem {
    /// Rolls the ensemble along real action sequences, refreshes the
    /// normalizer with the raw features, and freezes targets and noise.
    pub fn build(
        sac: &SacState,
        ensemble: &GaussianEnsemble,
        normalizer: &mut FeatureNormalizer,
        buffer: &ReplayBuffer,
        sizes: MetaSizes,
        reward: &RewardFn<'_>,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if sizes.rollouts == 0 || sizes.real_batch == 0 {
            return Err(Error::Config("meta-step batch sizes must be positive".into()));
        }
        let seqs = buffer.sample_state_action_sequences(sizes.rollouts, sizes.horizon, rng)?;
        let starts: Vec<(Vec<f64>, ActionSource<'_>)> = seqs
            .iter()
            .map(|q| (q.start.clone(), ActionSource::Fixed(&q.actions)))
            .collect();
        let rollouts = generate_rollouts(ensemble, &starts, sizes.horizon, sizes.fanout_per_model, reward, rng)?;
        let raw: Vec<Vec<Vec<f64>>> = rollouts
            .iter()
            .map(|r| r.iter().map(build_features).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        normalizer.update(&raw.iter().flatten().cloned().collect::<Vec<_>>());
        let features = raw
            .iter()
            .map(|r| r.iter().map(|x| normalizer.normalize(x)).collect())
            .collect();
        let sets: Vec<&TransitionSet> = rollouts.iter().flatten().collect();
        let (critic_items, actor_items) = set_items(sac, &sets, &vec![1.0; sets.len()], rng);
        let real = buffer.sample_batch(sizes.real_batch, rng)?;
        let real_critic = sac.critic_items(&real, rng);
        let real_actor = sac.actor_items(real.iter().map(|t| t.s.as_slice()), rng);
        Ok(Self {
            rollouts,
            features,
            critic_items,
            actor_items,
            real_critic,
            real_actor,
            inner_lr: sizes.inner_lr,
        })
    }

    pub fn num_sets(&self) -> usize {
        self.critic_items.len()
    }

    /// Virtual step size per unit of summed set gradient: `μ` over the number
    /// of imaginary transitions, so the inner loss is a weighted mean.
    pub fn step_size(&self) -> f64 {
        let n: usize = self.critic_items.iter().map(|c| c.targets.len()).sum();
        self.inner_lr / n.max(1) as f64
    }

    fn real_scale(&self) -> (f64, f64) {
        (
            1.0 / self.real_critic.len().max(1) as f64,
            1.0 / self.real_actor.len().max(1) as f64,
        )
    }

    /// Weights of every set under `params`, flattened as `i·H + h`.
    pub fn weights(&self, wnet: &WeightNet, params: &[f64]) -> Vec<f64> {
        par::map(&self.features, |_, f| wnet.weights_with(params, f))
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn set_gradients(&self, sac: &SacState) -> SetGradients {
        let critic = sac
            .nets
            .critic_item_grads(sac.critics.values(), &self.critic_items)
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        let actor = sac
            .nets
            .actor_item_grads(sac.actor.values(), sac.critics.values(), sac.alpha(), &self.actor_items)
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        SetGradients { critic, actor }
    }

    /// `θ' = θ − η Σ w·g` for both the critics and the actor, `η` from
    /// [`Self::step_size`].
    pub fn virtual_update(&self, sac: &SacState, grads: &SetGradients, weights: &[f64]) -> Result<Candidate> {
        if weights.len() != self.num_sets() {
            return Err(Error::DimensionMismatch {
                context: "virtual update weights",
                expected: self.num_sets(),
                actual: weights.len(),
            });
        }
        let weighted = |gs: &[Vec<f64>], len: usize| {
            let mut acc = vec![0.0; len];
            for (g, &w) in gs.iter().zip(weights) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += w * v;
                }
            }
            acc
        };
        let eta = self.step_size();
        Ok(Candidate {
            critics: sgd_step(&sac.critics, &weighted(&grads.critic, sac.critics.len()), eta)?,
            actor: sgd_step(&sac.actor, &weighted(&grads.actor, sac.actor.len()), eta)?,
        })
    }

    /// Mean real-batch critic loss at `θ_q'` plus mean actor loss at `θ_π'`;
    /// the actor term keeps the original critics and α.
    pub fn objective(&self, sac: &SacState, cand: &Candidate) -> MetaEvaluation {
        let (sq, sp) = self.real_scale();
        let (jq, mut critic_grad) = sac.nets.critic_loss_grad(cand.critics.values(), &self.real_critic);
        let (jpi, mut actor_grad, _) =
            sac.nets
                .actor_loss_grad(cand.actor.values(), sac.critics.values(), sac.alpha(), &self.real_actor);
        critic_grad.iter_mut().for_each(|g| *g *= sq);
        actor_grad.iter_mut().for_each(|g| *g *= sp);
        MetaEvaluation {
            value: sq * jq + sp * jpi,
            critic_grad,
            actor_grad,
        }
    }

    pub fn objective_value(&self, sac: &SacState, cand: &Candidate) -> f64 {
        let (sq, sp) = self.real_scale();
        sq * sac.nets.critic_loss(cand.critics.values(), &self.real_critic)
            + sp * sac
                .nets
                .actor_loss(cand.actor.values(), sac.critics.values(), sac.alpha(), &self.real_actor)
    }

    /// `c = −η(g_Q·∇J_Q' + g_π·∇J_π')` per set.
    pub fn coefficients(&self, grads: &SetGradients, eval: &MetaEvaluation) -> Vec<f64> {
        let eta = self.step_size();
        grads
            .critic
            .iter()
            .zip(&grads.actor)
            .map(|(gq, gp)| -eta * (dot(gq, &eval.critic_grad) + dot(gp, &eval.actor_grad)))
            .collect()
    }

    /// `Σ c·∂w/∂θ_w`, by backpropagation through each rollout's recurrence.
    pub fn meta_gradient(&self, wnet: &WeightNet, params: &[f64], coefs: &[f64]) -> Result<Vec<f64>> {
        if coefs.len() != self.num_sets() {
            return Err(Error::DimensionMismatch {
                context: "meta-gradient coefficients",
                expected: self.num_sets(),
                actual: coefs.len(),
            });
        }
        let mut offsets = Vec::with_capacity(self.features.len());
        let mut off = 0;
        for f in &self.features {
            offsets.push(off);
            off += f.len();
        }
        let parts = par::map(&self.features, |i, f| {
            let mut g = vec![0.0; params.len()];
            wnet.accumulate_grad(params, f, &coefs[offsets[i]..offsets[i] + f.len()], &mut g);
            g
        });
        let mut grad = vec![0.0; params.len()];
        for g in parts {
            par::add_assign(&mut grad, &g);
        }
        Ok(grad)
    }

    /// `J_meta` as a function of the weight-net parameters alone.
    pub fn meta_loss(&self, sac: &SacState, grads: &SetGradients, wnet: &WeightNet, params: &[f64]) -> Result<f64> {
        let w = self.weights(wnet, params);
        let cand = self.virtual_update(sac, grads, &w)?;
        Ok(self.objective_value(sac, &cand))
    }

    /// Value and analytic gradient of `J_meta` at `params`.
    pub fn value_and_gradient(
        &self,
        sac: &SacState,
        grads: &SetGradients,
        wnet: &WeightNet,
        params: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let w = self.weights(wnet, params);
        let cand = self.virtual_update(sac, grads, &w)?;
        let eval = self.objective(sac, &cand);
        let coefs = self.coefficients(grads, &eval);
        let grad = self.meta_gradient(wnet, params, &coefs)?;
        Ok((eval.value, grad, w))
    }
}

/// Builds a meta problem, differentiates it, and takes one Adam step on the
/// weight net.
#[allow(clippy::too_many_arguments)]
pub fn meta_step(
    sac: &SacState,
    ensemble: &GaussianEnsemble,
    wnet: &mut WeightNet,
    normalizer: &mut FeatureNormalizer,
    buffer: &ReplayBuffer,
    sizes: MetaSizes,
    reward: &RewardFn<'_>,
    rng: &mut SimRng,
) -> Result<MetaStepReport> {
    let problem = MetaProblem::build(sac, ensemble, normalizer, buffer, sizes, reward, rng)?;
    let grads = problem.set_gradients(sac);
    let (value, grad, weights) = problem.value_and_gradient(sac, &grads, wnet, wnet.params.values())?;
    if !value.is_finite() {
        return Err(Error::NonFinite("meta objective"));
    }
    let grad_norm = dot(&grad, &grad).sqrt();
    let applied = wnet.step(&grad)?;
    Ok(MetaStepReport {
        meta_loss: value,
        weights,
        grad_norm,
        applied,
    })
}
