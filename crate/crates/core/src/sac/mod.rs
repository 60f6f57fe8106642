//! Soft actor-critic with twin critics, Polyak targets and a learned
//! temperature.
//!
//! Critic parameters are stored as one flat vector `[q1; q2]`, targets
//! likewise, so a single Adam state and a single gradient buffer cover both.
//! Adam-driven updates divide their summed losses by the transition count.

mod losses;
mod policy;

pub use losses::{ActorItem, CriticItem, SacNets};
pub use policy::{PolicyDraw, PolicyHead, PolicySample, LOG_STD_MAX, LOG_STD_MIN};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, AdamState, MlpSpec, ParamVector, Segment};
use crate::replay::Transition;
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub init_alpha: f64,
    /// Defaults to `−action_dim`.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            init_alpha: 0.2,
            target_entropy: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SacState {
    pub nets: SacNets,
    pub actor: ParamVector,
    pub critics: ParamVector,
    pub targets: ParamVector,
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub gamma: f64,
    pub tau: f64,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub alpha_opt: AdamState,
}

/// Per-transition means observed during an update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

fn twin_layout(spec: &MlpSpec) -> Vec<Segment> {
    ["q1", "q2"]
        .iter()
        .flat_map(|p| spec.layout().into_iter().map(move |s| Segment::new(format!("{p}.{}", s.name), &s.shape)))
        .collect()
}

impl SacState {
    pub fn new(obs_dim: usize, action_low: &[f64], action_high: &[f64], cfg: &SacConfig, rng: &mut SimRng) -> Result<Self> {
        check_dim("action bounds", action_low.len(), action_high.len())?;
        if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", cfg.tau)));
        }
        if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) || cfg.init_alpha <= 0.0 {
            return Err(Error::Config("gamma must lie in (0, 1] and init_alpha must be positive".into()));
        }
        let ad = action_low.len();
        let actor_spec = MlpSpec::new(obs_dim, &cfg.hidden, 2 * ad, Activation::Relu, Activation::Identity);
        let critic_spec = MlpSpec::new(obs_dim + ad, &cfg.hidden, 1, Activation::Relu, Activation::Identity);
        actor_spec.validate()?;
        let actor = actor_spec.init_params(rng);
        let mut values = critic_spec.init_params(rng).into_values();
        values.extend(critic_spec.init_params(rng).into_values());
        let critics = ParamVector::from_values(twin_layout(&critic_spec), values)?;
        let targets = critics.clone();
        Ok(Self {
            actor_opt: AdamState::new(actor.len(), cfg.actor_lr),
            critic_opt: AdamState::new(critics.len(), cfg.critic_lr),
            alpha_opt: AdamState::new(1, cfg.alpha_lr),
            nets: SacNets {
                policy: PolicyHead::new(actor_spec, action_low, action_high),
                critic: critic_spec,
            },
            actor,
            critics,
            targets,
            log_alpha: cfg.init_alpha.ln(),
            target_entropy: cfg.target_entropy.unwrap_or(-(ad as f64)),
            gamma: cfg.gamma,
            tau: cfg.tau,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn action_dim(&self) -> usize {
        self.nets.policy.action_dim()
    }

    /// Stochastic action; `scale` multiplies the pre-squash variance.
    pub fn policy_sample(&self, s: &[f64], rng: &mut SimRng, scale: f64) -> PolicySample {
        self.nets.policy.sample(self.actor.values(), s, rng, scale)
    }

    pub fn mean_action(&self, s: &[f64]) -> Vec<f64> {
        self.nets.policy.mean_action(self.actor.values(), s)
    }

    /// Soft targets for `(r, s')` pairs under the current actor, targets and α.
    /// Noise is drawn sequentially so the result does not depend on scheduling.
    pub fn soft_targets(&self, pairs: &[(f64, &[f64])], rng: &mut SimRng) -> Vec<f64> {
        let eps: Vec<Vec<f64>> = pairs.iter().map(|_| self.nets.policy.draw_eps(rng)).collect();
        self.nets
            .soft_targets(self.actor.values(), self.targets.values(), self.alpha(), self.gamma, pairs, &eps)
    }

    pub fn critic_items(&self, batch: &[Transition], rng: &mut SimRng) -> Vec<CriticItem> {
        let pairs: Vec<(f64, &[f64])> = batch.iter().map(|t| (t.r, t.s_next.as_slice())).collect();
        let ys = self.soft_targets(&pairs, rng);
        batch
            .iter()
            .zip(ys)
            .map(|(t, y)| CriticItem {
                s: t.s.clone(),
                a: t.a.clone(),
                targets: vec![y],
                weight: 1.0,
            })
            .collect()
    }

    pub fn actor_items<'a>(&self, states: impl Iterator<Item = &'a [f64]>, rng: &mut SimRng) -> Vec<ActorItem> {
        states
            .map(|s| ActorItem {
                s: s.to_vec(),
                eps: self.nets.policy.draw_eps(rng),
                count: 1.0,
                weight: 1.0,
            })
            .collect()
    }

    fn check_batch(&self, batch: &[Transition]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("transition batch"));
        }
        let obs = self.nets.critic.input_dim - self.action_dim();
        for t in batch {
            check_dim("transition state", obs, t.s.len())?;
            check_dim("transition action", self.action_dim(), t.a.len())?;
            check_dim("transition next state", obs, t.s_next.len())?;
        }
        Ok(())
    }

    /// Summed soft Bellman residual of both critics over `batch`.
    pub fn critic_loss_jq(&self, batch: &[Transition], rng: &mut SimRng) -> Result<f64> {
        self.check_batch(batch)?;
        let items = self.critic_items(batch, rng);
        Ok(self.nets.critic_loss(self.critics.values(), &items))
    }

    /// Summed policy loss over `states` with reparameterized actions.
    pub fn actor_loss_jpi(&self, states: &[Vec<f64>], rng: &mut SimRng) -> Result<f64> {
        if states.is_empty() {
            return Err(Error::Empty("state batch"));
        }
        let items = self.actor_items(states.iter().map(Vec::as_slice), rng);
        Ok(self
            .nets
            .actor_loss(self.actor.values(), self.critics.values(), self.alpha(), &items))
    }

    /// One Adam step on `log α` for the loss `mean(−α(log π + target_entropy))`.
    pub fn temperature_step(&mut self, log_probs: &[f64]) -> Result<()> {
        if log_probs.is_empty() {
            return Err(Error::Empty("log-probabilities"));
        }
        let mean = log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>() / log_probs.len() as f64;
        let grad = [-self.alpha() * mean];
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &grad)?;
        self.log_alpha = la[0];
        Ok(())
    }

    /// Temperature step on fresh policy samples at `states`.
    pub fn temperature_update(&mut self, states: &[Vec<f64>], rng: &mut SimRng) -> Result<()> {
        let lps: Vec<f64> = states.iter().map(|s| self.policy_sample(s, rng, 1.0).log_prob).collect();
        self.temperature_step(&lps)
    }

    pub fn target_soft_update(&mut self) {
        let tau = self.tau;
        for (t, c) in self.targets.values_mut().iter_mut().zip(self.critics.values()) {
            *t = tau * c + (1.0 - tau) * *t;
        }
    }

    pub(crate) fn adam_critics(&mut self, grad: &mut [f64], n: f64) -> Result<()> {
        grad.iter_mut().for_each(|g| *g /= n);
        self.critic_opt.step(self.critics.values_mut(), grad)
    }

    pub(crate) fn adam_actor(&mut self, grad: &mut [f64], n: f64) -> Result<()> {
        grad.iter_mut().for_each(|g| *g /= n);
        self.actor_opt.step(self.actor.values_mut(), grad)
    }

    /// Critic step, actor step against the updated critics, temperature step,
    /// target update.
    pub fn update_real(&mut self, batch: &[Transition], rng: &mut SimRng) -> Result<UpdateStats> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;
        let c_items = self.critic_items(batch, rng);
        let (c_loss, mut c_grad) = self.nets.critic_loss_grad(self.critics.values(), &c_items);
        if !c_loss.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        self.adam_critics(&mut c_grad, n)?;
        let a_items = self.actor_items(batch.iter().map(|t| t.s.as_slice()), rng);
        let (a_loss, mut a_grad, lps) =
            self.nets
                .actor_loss_grad(self.actor.values(), self.critics.values(), self.alpha(), &a_items);
        if !a_loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        self.adam_actor(&mut a_grad, n)?;
        self.temperature_step(&lps)?;
        self.target_soft_update();
        Ok(UpdateStats {
            critic_loss: c_loss / n,
            actor_loss: a_loss / n,
            alpha: self.alpha(),
        })
    }
}
