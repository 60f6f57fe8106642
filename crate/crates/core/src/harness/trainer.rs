use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_rollouts, ActionSource, FitOptions, GaussianEnsemble, TransitionSet};
use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::reweight::{
    feature_dim, meta_step, reweighted_policy_value_update, weight_rollout, FeatureNormalizer, WeightNet,
};
use crate::rng::{seeded, SimRng};
use crate::sac::SacState;

use super::checkpoint;
use super::metrics::{append_metrics, ensure_metrics_file, quartiles, MetricsRecord};
use super::Config;

/// Seed of the environment reset for episode `episode` of a run seeded `seed`.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Running sums for the metrics row of the current episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAccumulator {
    pub episode_return: f64,
    pub critic_loss_sum: f64,
    pub actor_loss_sum: f64,
    pub real_updates: u64,
    pub meta_loss_sum: f64,
    pub meta_steps: u64,
    pub weight_quartiles: Option<[f64; 3]>,
}

fn mean(sum: f64, n: u64) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Complete state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: Config,
    pub spec: EnvSpec,
    pub env: Env,
    pub buffer: ReplayBuffer,
    pub ensemble: GaussianEnsemble,
    pub sac: SacState,
    pub wnet: Option<WeightNet>,
    pub normalizer: Option<FeatureNormalizer>,
    pub rng: SimRng,
    pub timestep: usize,
    pub episode: u64,
    pub acc: EpisodeAccumulator,
    pub last_holdout_nll: Option<f64>,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let spec = config.env_spec()?;
        let mut rng = seeded(config.seed);
        let ensemble = GaussianEnsemble::new(
            config.ensemble_size,
            spec.state_dim,
            spec.action_dim,
            &config.model_hidden,
            (config.log_std_min, config.log_std_max),
            config.model_lr,
            &mut rng,
        );
        let sac = SacState::new(spec.state_dim, &spec.action_low, &spec.action_high, &config.sac_config(), &mut rng)?;
        let fd = feature_dim(spec.state_dim, spec.action_dim);
        let (wnet, normalizer) = if config.reweight_enabled {
            (
                Some(WeightNet::new(fd, config.weight_hidden, config.weight_lr, &mut rng)),
                Some(FeatureNormalizer::new(fd, config.normalizer_rate)),
            )
        } else {
            (None, None)
        };
        let env = Env::new(spec.clone(), episode_seed(config.seed, 0));
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            spec,
            env,
            ensemble,
            sac,
            wnet,
            normalizer,
            rng,
            timestep: 0,
            episode: 0,
            acc: EpisodeAccumulator::default(),
            last_holdout_nll: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.timestep >= self.config.total_steps
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.config.model_train_epochs,
            batch: self.config.model_batch,
            max_steps: self.config.model_max_steps,
        }
    }

    /// One environment step plus, after warm-up, the full update block.
    /// Returns the metrics record when an episode finished.
    pub fn step(&mut self) -> Result<Option<MetricsRecord>> {
        let warm = self.timestep >= self.config.init_random_steps;
        if warm && (!self.ensemble.trained || self.env.state.step_index == 0) {
            let rep = self.ensemble.train(&self.buffer, self.fit_options(), &mut self.rng)?;
            self.last_holdout_nll = rep.holdout_nll_after.is_finite().then_some(rep.holdout_nll_after);
        }
        let s = self.env.observation().to_vec();
        let a = if warm {
            self.sac.policy_sample(&s, &mut self.rng, 1.0).action
        } else {
            let spec = &self.spec;
            (0..spec.action_dim)
                .map(|d| self.rng.random_range(spec.action_low[d]..=spec.action_high[d]))
                .collect()
        };
        let a = self.spec.clip_action(&a);
        let step_in_episode = self.env.state.step_index;
        let (r, done) = self.env.step(&a)?;
        self.buffer.push(Transition {
            s,
            a,
            r,
            s_next: self.env.observation().to_vec(),
            episode_id: self.episode,
            step_in_episode,
        });
        self.acc.episode_return += r;
        if warm {
            self.update_block(step_in_episode == 0)?;
        }
        self.timestep += 1;
        if !done {
            return Ok(None);
        }
        let rec = MetricsRecord {
            timestep: self.timestep,
            episode_return: self.acc.episode_return,
            critic_loss_real: mean(self.acc.critic_loss_sum, self.acc.real_updates),
            actor_loss: mean(self.acc.actor_loss_sum, self.acc.real_updates),
            alpha: Some(self.sac.alpha()),
            model_nll_holdout: self.last_holdout_nll,
            meta_loss: mean(self.acc.meta_loss_sum, self.acc.meta_steps),
            weight_quartiles: self.acc.weight_quartiles,
        };
        self.episode += 1;
        self.env.reset(episode_seed(self.config.seed, self.episode));
        self.acc = EpisodeAccumulator::default();
        Ok(Some(rec))
    }


    fn update_block(&mut self, first_step: bool) -> Result<()> {
        let t = self.timestep;
        let diverged = |e: Error| match e {
            Error::NonFinite(what) => Error::Diverged { timestep: t, what },
            other => other,
        };
        let spec = self.spec.clone();
        let reward = move |s: &[f64], a: &[f64], sn: &[f64]| spec.reward(s, a, sn);
        if let (Some(wnet), Some(norm)) = (self.wnet.as_mut(), self.normalizer.as_mut()) {
            let rep = meta_step(
                &self.sac,
                &self.ensemble,
                wnet,
                norm,
                &self.buffer,
                self.config.meta_sizes(),
                &reward,
                &mut self.rng,
            )
            .map_err(diverged)?;
            self.acc.meta_loss_sum += rep.meta_loss;
            self.acc.meta_steps += 1;
        }
        let rollouts = self.explore_rollouts(self.config.train_rollouts, self.config.horizon, self.config.explore_scale)?;
        let sets: Vec<&TransitionSet> = rollouts.iter().flatten().collect();
        let weights = match (&self.wnet, &self.normalizer) {
            (Some(w), Some(n)) => {
                let mut ws = Vec::with_capacity(sets.len());
                for r in &rollouts {
                    ws.extend(weight_rollout(w, n, r)?);
                }
                if first_step {
                    self.acc.weight_quartiles = quartiles(&ws);
                }
                ws
            }
            _ => vec![1.0; sets.len()],
        };
        for _ in 0..self.config.updates_per_step {
            reweighted_policy_value_update(&mut self.sac, &sets, &weights, &mut self.rng).map_err(diverged)?;
        }
        let batch = self.buffer.sample_batch(self.config.real_batch, &mut self.rng)?;
        let stats = self.sac.update_real(&batch, &mut self.rng).map_err(diverged)?;
        self.acc.critic_loss_sum += stats.critic_loss;
        self.acc.actor_loss_sum += stats.actor_loss;
        self.acc.real_updates += 1;
        Ok(())
    }

    /// Model rollouts from real start states under the policy with its
    /// variance scaled by `scale`.
    pub fn explore_rollouts(&mut self, count: usize, depth: usize, scale: f64) -> Result<Vec<Vec<TransitionSet>>> {
        let starts = self.buffer.sample_batch(count, &mut self.rng)?;
        let sac = &self.sac;
        let policy = move |s: &[f64], r: &mut SimRng| sac.policy_sample(s, r, scale).action;
        let jobs: Vec<(Vec<f64>, ActionSource<'_>)> =
            starts.into_iter().map(|t| (t.s, ActionSource::Policy(&policy))).collect();
        let spec = &self.spec;
        let reward = move |s: &[f64], a: &[f64], sn: &[f64]| spec.reward(s, a, sn);
        generate_rollouts(&self.ensemble, &jobs, depth, self.config.fanout_per_model, &reward, &mut self.rng)
    }
}

/// Where a run writes its outputs.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.out.join("checkpoint")
    }

    pub fn diagnostic(&self) -> PathBuf {
        self.out.join("diagnostic-checkpoint")
    }
}

/// Runs (or resumes) training until `config.total_steps`, appending to
/// `out/metrics.csv` and leaving a final checkpoint in `out/checkpoint`.
pub fn run_training(config: Config, out: &Path, resume: Option<&Path>) -> Result<Trainer> {
    std::fs::create_dir_all(out)?;
    let paths = RunPaths::new(out);
    let mut trainer = match resume {
        Some(ckpt) => {
            let mut t = checkpoint::load_checkpoint(ckpt)?;
            checkpoint::check_resume_config(&t.config, &config, ckpt)?;
            t.config.total_steps = config.total_steps;
            t.config.checkpoint_every = config.checkpoint_every;
            let src = ckpt.join("metrics.csv");
            if src.exists() && src != paths.metrics() {
                std::fs::copy(&src, paths.metrics())?;
            }
            t
        }
        None => {
            let _ = std::fs::remove_file(paths.metrics());
            Trainer::new(config)?
        }
    };
    ensure_metrics_file(&paths.metrics())?;
    while !trainer.is_done() {
        match trainer.step() {
            Ok(Some(rec)) => {
                append_metrics(&paths.metrics(), &rec)?;
                log::info!(
                    "episode {} t={} return={:.2}",
                    trainer.episode,
                    rec.timestep,
                    rec.episode_return
                );
                let every = trainer.config.checkpoint_every as u64;
                if every > 0 && trainer.episode % every == 0 {
                    checkpoint::save_checkpoint(&trainer, &paths.checkpoint(), Some(&paths.metrics()))?;
                }
            }
            Ok(None) => {}
            Err(e @ Error::Diverged { .. }) => {
                if let Err(save_err) = checkpoint::save_checkpoint(&trainer, &paths.diagnostic(), Some(&paths.metrics())) {
                    log::error!("could not write diagnostic checkpoint: {save_err}");
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    checkpoint::save_checkpoint(&trainer, &paths.checkpoint(), Some(&paths.metrics()))?;
    Ok(trainer)
}
