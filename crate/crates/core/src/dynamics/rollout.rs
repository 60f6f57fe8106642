use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::rng::{child, SimRng};

use super::GaussianEnsemble;

/// Known reward `r(s, a, s')`.
pub type RewardFn<'a> = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Sync + 'a;
/// Stochastic policy queried at each trunk state.
pub type PolicyFn<'a> = dyn Fn(&[f64], &mut SimRng) -> Vec<f64> + Sync + 'a;

/// One rollout step: a trunk state, its action, and the `M×B` predicted
/// outcomes. Fanout index `b·M + m` is the `m`-th draw from model `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSet {
    pub trunk_state: Vec<f64>,
    pub action: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
    pub chosen_next: usize,
    pub depth: usize,
}

impl TransitionSet {
    pub fn fanout(&self) -> usize {
        self.rewards.len()
    }

    pub fn chosen_state(&self) -> &[f64] {
        &self.next_states[self.chosen_next]
    }
}

#[derive(Clone, Copy)]
pub enum ActionSource<'a> {
    /// Replays recorded actions; must hold at least `H` entries.
    Fixed(&'a [Vec<f64>]),
    Policy(&'a PolicyFn<'a>),
}

pub fn sample_transition_set(
    ensemble: &GaussianEnsemble,
    state: &[f64],
    action: &[f64],
    m: usize,
    reward: &RewardFn<'_>,
    rng: &mut SimRng,
) -> Result<TransitionSet> {
    if m == 0 {
        return Err(Error::Config("fanout per model must be at least 1".into()));
    }
    check_dim("rollout state", ensemble.state_dim, state.len())?;
    check_dim("rollout action", ensemble.action_dim, action.len())?;
    let next_states = ensemble.sample_next_states(state, action, m, rng);
    let rewards = next_states.iter().map(|sn| reward(state, action, sn)).collect();
    let chosen_next = rng.random_range(0..next_states.len());
    Ok(TransitionSet {
        trunk_state: state.to_vec(),
        action: action.to_vec(),
        rewards,
        next_states,
        chosen_next,
        depth: 0,
    })
}

pub fn rollout(
    ensemble: &GaussianEnsemble,
    start: &[f64],
    actions: ActionSource<'_>,
    h: usize,
    m: usize,
    reward: &RewardFn<'_>,
    rng: &mut SimRng,
) -> Result<Vec<TransitionSet>> {
    if let ActionSource::Fixed(seq) = actions {
        if seq.len() < h {
            return Err(Error::Config(format!(
                "action sequence has {} entries but the rollout needs {h}",
                seq.len()
            )));
        }
    }
    let mut out: Vec<TransitionSet> = Vec::with_capacity(h);
    let mut state = start.to_vec();
    for k in 0..h {
        let action = match actions {
            ActionSource::Fixed(seq) => seq[k].clone(),
            ActionSource::Policy(pi) => pi(&state, rng),
        };
        let mut set = sample_transition_set(ensemble, &state, &action, m, reward, rng)?;
        set.depth = k;
        state = set.chosen_state().to_vec();
        out.push(set);
    }
    Ok(out)
}

/// One rollout per start state. Each rollout draws from its own child stream,
/// so the result does not depend on how the work is scheduled.
pub fn generate_rollouts(
    ensemble: &GaussianEnsemble,
    starts: &[(Vec<f64>, ActionSource<'_>)],
    h: usize,
    m: usize,
    reward: &RewardFn<'_>,
    rng: &mut SimRng,
) -> Result<Vec<Vec<TransitionSet>>> {
    let jobs: Vec<(&(Vec<f64>, ActionSource<'_>), SimRng)> = starts.iter().map(|s| (s, child(rng))).collect();
    par::map(&jobs, |_, (job, r)| {
        let mut r = r.clone();
        rollout(ensemble, &job.0, job.1, h, m, reward, &mut r)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FitOptions;
    use crate::envs::{env_reset, env_step, EnvKind, EnvSpec};
    use crate::replay::{ReplayBuffer, Transition};
    use crate::rng::seeded;

    fn tiny(b: usize) -> GaussianEnsemble {
        GaussianEnsemble::new(b, 2, 1, &[8], (-5.0, 0.5), 1e-3, &mut seeded(1))
    }

    fn zero_reward(_: &[f64], _: &[f64], _: &[f64]) -> f64 {
        0.0
    }

    #[test]
    fn fanout_is_m_times_b_and_rewards_come_from_the_oracle() {
        let e = tiny(3);
        let reward = |s: &[f64], a: &[f64], sn: &[f64]| s[0] + 2.0 * a[0] - sn[1];
        let set = sample_transition_set(&e, &[0.1, 0.2], &[0.5], 4, &reward, &mut seeded(2)).unwrap();
        assert_eq!(set.fanout(), 12);
        assert_eq!(set.next_states.len(), 12);
        for (r, sn) in set.rewards.iter().zip(&set.next_states) {
            assert_eq!(*r, reward(&[0.1, 0.2], &[0.5], sn));
        }
        assert!(set.chosen_next < 12);
    }

    #[test]
    fn zero_fanout_is_rejected() {
        assert!(sample_transition_set(&tiny(1), &[0.0, 0.0], &[0.0], 0, &zero_reward, &mut seeded(0)).is_err());
    }

    #[test]
    fn chosen_next_is_uniform() {
        let e = tiny(5);
        let mut rng = seeded(9);
        let n = 10_000;
        let mut counts = [0usize; 20];
        for _ in 0..n {
            let s = sample_transition_set(&e, &[0.0, 0.0], &[0.0], 4, &zero_reward, &mut rng).unwrap();
            counts[s.chosen_next] += 1;
        }
        let p = 1.0 / 20.0;
        let se = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * se + 1.0, "{counts:?}");
        }
    }

    #[test]
    fn tiny_sigma_concentrates_samples() {
        let mut e = tiny(5);
        for m in &mut e.models {
            // push the log-std logits far below the lower bound
            let n = m.params.len();
            let sd = m.state_dim();
            for d in 0..sd {
                m.params.values_mut()[n - sd + d] = -50.0;
            }
        }
        let set = sample_transition_set(&e, &[0.3, -0.3], &[1.0], 4, &zero_reward, &mut seeded(3)).unwrap();
        let dists = e.predict_distribution(&[0.3, -0.3], &[1.0]).unwrap();
        for (b, (mean, std)) in dists.iter().enumerate() {
            for s in std {
                assert!(*s <= (-5.0f64).exp() * 1.0001);
            }
            for m in 0..4 {
                for d in 0..2 {
                    assert!((set.next_states[b * 4 + m][d] - mean[d]).abs() <= 6.0 * std[d]);
                }
            }
        }
    }

    #[test]
    fn sigma_stays_within_clamp() {
        let e = tiny(4);
        let mut rng = seeded(5);
        for _ in 0..200 {
            let s = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            let a = [rng.random_range(-50.0..50.0)];
            for (_, std) in e.predict_distribution(&s, &a).unwrap() {
                for v in std {
                    assert!(v >= (-5.0f64).exp() * 0.9999 && v <= 0.5f64.exp() * 1.0001, "{v}");
                }
            }
        }
        assert!(e.predict_distribution(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn single_model_gives_single_pair() {
        assert_eq!(tiny(1).predict_distribution(&[0.0, 1.0], &[0.0]).unwrap().len(), 1);
    }

    #[test]
    fn trunk_chains_through_the_chosen_state() {
        let e = tiny(2);
        let acts = vec![vec![0.1], vec![-0.2], vec![0.3], vec![0.0]];
        let sets = rollout(&e, &[0.5, 0.5], ActionSource::Fixed(&acts), 4, 3, &zero_reward, &mut seeded(4)).unwrap();
        assert_eq!(sets.len(), 4);
        for k in 0..4 {
            assert_eq!(sets[k].depth, k);
            assert_eq!(sets[k].action, acts[k]);
        }
        for k in 0..3 {
            assert_eq!(sets[k + 1].trunk_state, sets[k].chosen_state());
        }
        let one = rollout(&e, &[0.5, 0.5], ActionSource::Fixed(&acts), 1, 3, &zero_reward, &mut seeded(4)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].trunk_state, vec![0.5, 0.5]);
        assert!(rollout(&e, &[0.5, 0.5], ActionSource::Fixed(&acts[..2]), 3, 3, &zero_reward, &mut seeded(4)).is_err());
    }

    #[test]
    fn policy_source_is_queried_at_each_trunk_state() {
        let e = tiny(2);
        let pi = |s: &[f64], _: &mut SimRng| vec![s[0]];
        let sets = rollout(&e, &[0.2, 0.0], ActionSource::Policy(&pi), 3, 2, &zero_reward, &mut seeded(6)).unwrap();
        for s in &sets {
            assert_eq!(s.action[0], s.trunk_state[0]);
        }
    }

    #[test]
    fn rollouts_are_deterministic_and_schedule_free() {
        let e = tiny(3);
        let acts = vec![vec![0.1]; 3];
        let starts: Vec<_> = (0..6).map(|i| (vec![0.1 * i as f64, 0.0], ActionSource::Fixed(&acts))).collect();
        let a = generate_rollouts(&e, &starts, 3, 2, &zero_reward, &mut seeded(8)).unwrap();
        crate::par::set_sequential(true);
        let b = generate_rollouts(&e, &starts, 3, 2, &zero_reward, &mut seeded(8)).unwrap();
        crate::par::set_sequential(false);
        assert_eq!(a, b);
    }

    fn linear_gaussian_buffer(n_eps: usize, noise: f64, seed: u64) -> ReplayBuffer {
        let mut rng = seeded(seed);
        let mut buf = ReplayBuffer::new(100_000);
        for ep in 0..n_eps {
            let mut s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            for k in 0..50 {
                let a = vec![rng.random_range(-1.0..1.0)];
                let sn = vec![
                    0.9 * s[0] + 0.1 * s[1] + noise * crate::rng::normal(&mut rng),
                    0.9 * s[1] + 0.2 * a[0] + noise * crate::rng::normal(&mut rng),
                ];
                buf.push(Transition {
                    s: s.clone(),
                    a,
                    r: 0.0,
                    s_next: sn.clone(),
                    episode_id: ep as u64,
                    step_in_episode: k,
                });
                s = sn;
            }
        }
        buf
    }

    #[test]
    fn training_lowers_holdout_nll_and_recovers_noise_scale() {
        let noise = 0.05;
        let buf = linear_gaussian_buffer(40, noise, 11);
        let mut e = GaussianEnsemble::new(3, 2, 1, &[32, 32], (-5.0, 0.5), 3e-3, &mut seeded(12));
        let opts = FitOptions { epochs: 30, batch: 64, max_steps: 100_000 };
        let rep = e.train(&buf, opts, &mut seeded(13)).unwrap();
        assert!(rep.holdout_nll_after < rep.holdout_nll_before, "{rep:?}");
        let mut rng = seeded(14);
        for _ in 0..20 {
            let s = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            for (_, std) in e.predict_distribution(&s, &[0.0]).unwrap() {
                for v in std {
                    assert!(v > noise / 2.0 && v < noise * 2.0, "learned std {v}");
                }
            }
        }
    }

    #[test]
    fn disagreement_grows_outside_the_data() {
        let buf = linear_gaussian_buffer(30, 0.02, 21);
        let mut e = GaussianEnsemble::new(5, 2, 1, &[32, 32], (-5.0, 0.5), 3e-3, &mut seeded(22));
        e.train(&buf, FitOptions { epochs: 20, batch: 64, max_steps: 100_000 }, &mut seeded(23)).unwrap();
        let spread = |s: &[f64]| {
            let d = e.predict_distribution(s, &[0.0]).unwrap();
            let mut tot = 0.0;
            let mut n = 0.0;
            for i in 0..d.len() {
                for j in i + 1..d.len() {
                    tot += d[i].0.iter().zip(&d[j].0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    n += 1.0;
                }
            }
            tot / n
        };
        let inside: f64 = [[0.1, 0.1], [-0.2, 0.0], [0.0, -0.1]].iter().map(|s| spread(s)).sum();
        let outside: f64 = [[8.0, 8.0], [-8.0, 6.0], [7.0, -9.0]].iter().map(|s| spread(s)).sum();
        assert!(outside > inside, "inside {inside} outside {outside}");
    }

    #[test]
    fn identical_bootstraps_and_seeds_give_identical_models_and_distinct_ones_differ() {
        let buf = linear_gaussian_buffer(4, 0.05, 31);
        let opts = FitOptions { epochs: 2, batch: 32, max_steps: 1000 };
        let mut a = GaussianEnsemble::new(2, 2, 1, &[8], (-5.0, 0.5), 1e-3, &mut seeded(32));
        let mut b = a.clone();
        a.train(&buf, opts, &mut seeded(33)).unwrap();
        b.train(&buf, opts, &mut seeded(33)).unwrap();
        assert_eq!(a.models[0].params, b.models[0].params);
        assert_eq!(a.models[1].params, b.models[1].params);
        // same init, but the two members see different resamples
        let mut c = GaussianEnsemble::new(1, 2, 1, &[8], (-5.0, 0.5), 1e-3, &mut seeded(32));
        c.models.push(c.models[0].clone());
        c.train(&buf, opts, &mut seeded(34)).unwrap();
        assert_ne!(c.models[0].params, c.models[1].params);
    }

    #[test]
    fn well_trained_model_tracks_deterministic_dynamics() {
        let spec = EnvSpec::new(EnvKind::PointMass);
        let mut buf = ReplayBuffer::new(100_000);
        let mut rng = seeded(41);
        for ep in 0..60u64 {
            let mut st = env_reset(&spec, ep);
            for k in 0..spec.horizon {
                let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (next, r, _) = env_step(&spec, &st, &a).unwrap();
                buf.push(Transition {
                    s: st.observation.clone(),
                    a,
                    r,
                    s_next: next.observation.clone(),
                    episode_id: ep,
                    step_in_episode: k,
                });
                st = next;
            }
        }
        let mut e = GaussianEnsemble::new(1, 4, 2, &[64, 64], (-5.0, 0.5), 2e-3, &mut seeded(42));
        e.train(&buf, FitOptions { epochs: 40, batch: 128, max_steps: 100_000 }, &mut seeded(43)).unwrap();
        let st0 = env_reset(&spec, 999);
        let acts: Vec<Vec<f64>> = (0..5).map(|k| vec![0.3 * (k as f64).sin(), -0.2]).collect();
        let mut truth = vec![st0.observation.clone()];
        let mut st = st0.clone();
        for a in &acts {
            st = env_step(&spec, &st, a).unwrap().0;
            truth.push(st.observation.clone());
        }
        let r = |s: &[f64], a: &[f64], sn: &[f64]| spec.reward(s, a, sn);
        let sets = rollout(&e, &st0.observation, ActionSource::Fixed(&acts), 5, 1, &r, &mut seeded(44)).unwrap();
        for (k, set) in sets.iter().enumerate() {
            let err: f64 = set.chosen_state().iter().zip(&truth[k + 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 0.05 * (k + 1) as f64 + 0.05, "depth {k}: err {err}");
        }
    }
}
