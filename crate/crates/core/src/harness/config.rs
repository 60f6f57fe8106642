use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::reweight::MetaSizes;
use crate::sac::SacConfig;

/// Every knob of a training run. Loaded from a flat TOML table; unknown keys
/// are rejected and missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: String,
    pub seed: u64,
    pub total_steps: usize,
    /// Uniform-random actions and no learning before this many steps.
    pub init_random_steps: usize,
    pub buffer_capacity: usize,

    pub gamma: f64,
    pub tau: f64,
    /// Defaults to `−action_dim` when absent.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    pub sac_hidden: Vec<usize>,
    pub sac_lr: f64,
    pub real_batch: usize,

    /// Ensemble size `B`.
    pub ensemble_size: usize,
    /// Samples per model and step, `M`.
    pub fanout_per_model: usize,
    pub model_hidden: Vec<usize>,
    pub model_lr: f64,
    pub model_train_epochs: usize,
    pub model_batch: usize,
    /// Cap on gradient steps per model and retraining.
    pub model_max_steps: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,

    /// Rollout length `H`.
    pub horizon: usize,
    /// Meta-step rollouts `N_e`.
    pub meta_rollouts: usize,
    /// Real transitions in the meta objective `N_v`.
    pub meta_batch: usize,
    /// Explore rollouts per step `N_t`.
    pub train_rollouts: usize,
    /// Reweighted updates per step `K`.
    pub updates_per_step: usize,
    /// Virtual SGD step `μ`.
    pub inner_lr: f64,
    /// Weight-net Adam rate `μ_w`.
    pub weight_lr: f64,
    /// Explore temperature multiplier `λ_e`.
    pub explore_scale: f64,
    pub weight_hidden: usize,
    pub normalizer_rate: f64,
    pub reweight_enabled: bool,

    /// Save a checkpoint every this many episodes; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            seed: 0,
            total_steps: 30_000,
            init_random_steps: 1_000,
            buffer_capacity: 200_000,
            gamma: 0.99,
            tau: 0.005,
            target_entropy: None,
            init_alpha: 0.2,
            sac_hidden: vec![32, 32],
            sac_lr: 1e-3,
            real_batch: 64,
            ensemble_size: 5,
            fanout_per_model: 4,
            model_hidden: vec![32, 32],
            model_lr: 1e-3,
            model_train_epochs: 5,
            model_batch: 64,
            model_max_steps: 100,
            log_std_min: -5.0,
            log_std_max: 0.5,
            horizon: 5,
            meta_rollouts: 8,
            meta_batch: 64,
            train_rollouts: 8,
            updates_per_step: 1,
            inner_lr: 3e-4,
            weight_lr: 1e-4,
            explore_scale: 10.0,
            weight_hidden: 16,
            normalizer_rate: 0.01,
            reweight_enabled: true,
            checkpoint_every: 0,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::by_name(&self.env)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_spec()?;
        let counts = [
            ("total_steps", self.total_steps),
            ("buffer_capacity", self.buffer_capacity),
            ("real_batch", self.real_batch),
            ("ensemble_size", self.ensemble_size),
            ("fanout_per_model", self.fanout_per_model),
            ("model_train_epochs", self.model_train_epochs),
            ("model_batch", self.model_batch),
            ("model_max_steps", self.model_max_steps),
            ("horizon", self.horizon),
            ("meta_rollouts", self.meta_rollouts),
            ("meta_batch", self.meta_batch),
            ("train_rollouts", self.train_rollouts),
            ("updates_per_step", self.updates_per_step),
            ("weight_hidden", self.weight_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("sac_lr", self.sac_lr),
            ("model_lr", self.model_lr),
            ("inner_lr", self.inner_lr),
            ("weight_lr", self.weight_lr),
            ("explore_scale", self.explore_scale),
            ("init_alpha", self.init_alpha),
            ("normalizer_rate", self.normalizer_rate),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if self.sac_hidden.contains(&0) || self.model_hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("gamma and tau must lie in (0, 1]".into()));
        }
        if self.log_std_min >= self.log_std_max {
            return Err(Error::Config("log_std_min must be below log_std_max".into()));
        }
        Ok(())
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden.clone(),
            actor_lr: self.sac_lr,
            critic_lr: self.sac_lr,
            alpha_lr: self.sac_lr,
            gamma: self.gamma,
            tau: self.tau,
            init_alpha: self.init_alpha,
            target_entropy: self.target_entropy,
        }
    }

    pub fn meta_sizes(&self) -> MetaSizes {
        MetaSizes {
            rollouts: self.meta_rollouts,
            real_batch: self.meta_batch,
            horizon: self.horizon,
            fanout_per_model: self.fanout_per_model,
            inner_lr: self.inner_lr,
        }
    }
}
