//! Finite-difference suites behind the `gradcheck` command.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dynamics::{Affine, FitOptions, GaussianEnsemble, ModelData, ProbabilisticModel};
use crate::envs::{Env, EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::{gru_sequence_grad, mlp_grad, Activation, FiniteDiff, GradCheckReport, GruSpec, MlpSpec};
use crate::replay::{ReplayBuffer, Transition};
use crate::reweight::{feature_dim, FeatureNormalizer, MetaProblem, MetaSizes, WeightNet};
use crate::rng::{seeded, SimRng};
use crate::sac::{SacConfig, SacState};

pub const INSTANCES: usize = 20;
pub const META_INSTANCES: usize = 5;
pub const NETWORK_TOLERANCE: f64 = 1e-6;
pub const META_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Nn,
    Sac,
    Dynamics,
    Meta,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Nn, Scope::Sac, Scope::Dynamics, Scope::Meta];
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Scope::Nn),
            "sac" => Ok(Scope::Sac),
            "dynamics" => Ok(Scope::Dynamics),
            "meta" => Ok(Scope::Meta),
            other => Err(Error::Config(format!("unknown gradcheck scope {other:?}"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Nn => "nn",
            Scope::Sac => "sac",
            Scope::Dynamics => "dynamics",
            Scope::Meta => "meta",
        })
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn from_report(name: String, rep: &GradCheckReport) -> Self {
        Self {
            name,
            max_rel_err: rep.max_rel_err,
            tolerance: rep.tolerance,
            passed: rep.passed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub scope: Scope,
    pub checks: Vec<CheckOutcome>,
    /// The deliberately corrupted gradient was rejected.
    pub control_rejected: bool,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.control_rejected && self.checks.iter().all(|c| c.passed)
    }

    pub fn count(&self, prefix: &str) -> usize {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).count()
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

fn fd(tolerance: f64) -> FiniteDiff {
    FiniteDiff {
        tolerance,
        ..FiniteDiff::default()
    }
}

/// Bumps the largest gradient coordinate by 0.1% and checks again.
fn control<F: FnMut(&[f64]) -> f64>(f: F, params: &[f64], analytic: &[f64], checker: FiniteDiff) -> bool {
    let mut bad = analytic.to_vec();
    let i = bad
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    bad[i] = if bad[i] == 0.0 { 1e-3 } else { bad[i] * 1.001 };
    !checker.check(f, params, &bad).passed
}

/// Zero-initialized biases can put a ReLU exactly on its kink; nudging every
/// parameter moves the instance to a differentiable point.
fn jitter(values: &mut [f64], rng: &mut SimRng) {
    for v in values {
        *v += rng.random_range(-0.1..0.1);
    }
}

fn rand_vec(n: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn run_gradcheck(scope: Scope) -> Result<SuiteReport> {
    match scope {
        Scope::Nn => nn_suite(),
        Scope::Sac => sac_suite(),
        Scope::Dynamics => dynamics_suite(),
        Scope::Meta => meta_suite(),
    }
}

fn nn_suite() -> Result<SuiteReport> {
    let mut rng = seeded(101);
    let mut checks = Vec::new();
    let mut control_rejected = false;
    let checker = fd(NETWORK_TOLERANCE);
    for k in 0..INSTANCES {
        let din = rng.random_range(1..5);
        let dout = rng.random_range(1..4);
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(2..7)).collect();
        let act = if k % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let spec = MlpSpec::new(din, &hidden, dout, act, Activation::Identity);
        let mut p = spec.init_params(&mut rng);
        jitter(p.values_mut(), &mut rng);
        let x = rand_vec(din, &mut rng);
        let up = rand_vec(dout, &mut rng);
        let (g, _) = mlp_grad(&spec, &p, &x, &up)?;
        let f = |v: &[f64]| crate::nn::dot(&spec.forward(v, &x), &up);
        let rep = checker.check(f, p.values(), g.values());
        checks.push(CheckOutcome::from_report(format!("mlp#{k}"), &rep));
        if k == 0 {
            control_rejected = control(f, p.values(), g.values(), checker);
        }
    }
    for k in 0..INSTANCES {
        let spec = GruSpec::new(rng.random_range(1..5), rng.random_range(1..5));
        let p = spec.init_params(&mut rng);
        let len = rng.random_range(1..5);
        let xs: Vec<Vec<f64>> = (0..len).map(|_| rand_vec(spec.input_dim, &mut rng)).collect();
        let ups: Vec<Vec<f64>> = (0..len).map(|_| rand_vec(spec.hidden_dim, &mut rng)).collect();
        let g = gru_sequence_grad(&spec, &p, &xs, &ups)?;
        let f = |v: &[f64]| {
            let h0 = vec![0.0; spec.hidden_dim];
            spec.sequence_forward(v, &h0, &xs)
                .iter()
                .zip(&ups)
                .map(|(c, u)| crate::nn::dot(&c.h, u))
                .sum()
        };
        let rep = checker.check(f, p.values(), g.values());
        checks.push(CheckOutcome::from_report(format!("gru#{k}"), &rep));
    }
    Ok(SuiteReport {
        scope: Scope::Nn,
        checks,
        control_rejected,
    })
}

fn random_transitions(n: usize, sd: usize, ad: usize, rng: &mut SimRng) -> Vec<Transition> {
    (0..n)
        .map(|i| Transition {
            s: rand_vec(sd, rng),
            a: rand_vec(ad, rng),
            r: rng.random_range(-1.0..1.0),
            s_next: rand_vec(sd, rng),
            episode_id: 0,
            step_in_episode: i,
        })
        .collect()
}

fn sac_suite() -> Result<SuiteReport> {
    let mut rng = seeded(202);
    let mut checks = Vec::new();
    let mut control_rejected = false;
    let checker = fd(NETWORK_TOLERANCE);
    for k in 0..INSTANCES {
        let sd = rng.random_range(1..4);
        let ad = rng.random_range(1..3);
        let cfg = SacConfig {
            hidden: vec![rng.random_range(3..7), rng.random_range(3..7)],
            ..SacConfig::default()
        };
        let low = vec![-1.5; ad];
        let high = vec![1.5; ad];
        let mut sac = SacState::new(sd, &low, &high, &cfg, &mut rng)?;
        jitter(sac.critics.values_mut(), &mut rng);
        jitter(sac.actor.values_mut(), &mut rng);
        let batch = random_transitions(4, sd, ad, &mut rng);
        let mut items = sac.critic_items(&batch, &mut rng);
        items[1].weight = rng.random_range(0.0..1.0);
        let (_, g) = sac.nets.critic_loss_grad(sac.critics.values(), &items);
        let f = |p: &[f64]| sac.nets.critic_loss(p, &items);
        let rep = checker.check(f, sac.critics.values(), &g);
        checks.push(CheckOutcome::from_report(format!("critic#{k}"), &rep));
        if k == 0 {
            control_rejected = control(f, sac.critics.values(), &g, checker);
        }

        let mut items = sac.actor_items(batch.iter().map(|t| t.s.as_slice()), &mut rng);
        items[0].count = 3.0;
        items[2].weight = rng.random_range(0.0..1.0);
        let alpha = rng.random_range(0.05..1.0);
        let (_, g, _) = sac.nets.actor_loss_grad(sac.actor.values(), sac.critics.values(), alpha, &items);
        let f = |p: &[f64]| sac.nets.actor_loss(p, sac.critics.values(), alpha, &items);
        let rep = checker.check(f, sac.actor.values(), &g);
        checks.push(CheckOutcome::from_report(format!("actor#{k}"), &rep));
    }
    Ok(SuiteReport {
        scope: Scope::Sac,
        checks,
        control_rejected,
    })
}

fn dynamics_suite() -> Result<SuiteReport> {
    let mut rng = seeded(303);
    let mut checks = Vec::new();
    let mut control_rejected = false;
    let checker = fd(NETWORK_TOLERANCE);
    for k in 0..INSTANCES {
        let sd = rng.random_range(1..4);
        let ad = rng.random_range(1..3);
        let hidden = [rng.random_range(3..7), rng.random_range(3..7)];
        let mut model = ProbabilisticModel::new(sd, ad, &hidden, (-5.0, 0.5), 1e-3, &mut rng);
        jitter(model.params.values_mut(), &mut rng);
        let out_norm = Affine {
            mean: rand_vec(sd, &mut rng),
            std: (0..sd).map(|_| rng.random_range(0.2..2.0)).collect(),
        };
        let data = ModelData {
            inputs: (0..4).map(|_| rand_vec(sd + ad, &mut rng)).collect(),
            deltas: (0..4).map(|_| rand_vec(sd, &mut rng)).collect(),
        };
        let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        let (_, g) = model.batch_nll_grad(model.params.values(), &data, &idx, &out_norm);
        let f = |p: &[f64]| model.batch_nll_grad(p, &data, &idx, &out_norm).0;
        let rep = checker.check(f, model.params.values(), &g);
        checks.push(CheckOutcome::from_report(format!("nll#{k}"), &rep));
        if k == 0 {
            control_rejected = control(f, model.params.values(), &g, checker);
        }
    }
    Ok(SuiteReport {
        scope: Scope::Dynamics,
        checks,
        control_rejected,
    })
}

/// Small pendulum setup for the bilevel check: two random episodes, a 2-model
/// ensemble, tiny SAC and weight nets with a randomized head.
pub struct MetaFixture {
    pub spec: EnvSpec,
    pub buffer: ReplayBuffer,
    pub ensemble: GaussianEnsemble,
    pub sac: SacState,
    pub wnet: WeightNet,
    pub normalizer: FeatureNormalizer,
}

impl MetaFixture {
    pub fn new(seed: u64) -> Result<Self> {
        let spec = EnvSpec::new(EnvKind::Pendulum);
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        let mut rng = seeded(seed);
        let mut buffer = ReplayBuffer::new(1_000);
        let mut env = Env::new(spec.clone(), seed);
        for ep in 0..2u64 {
            env.reset(seed.wrapping_mul(31).wrapping_add(ep));
            for k in 0..spec.horizon {
                let s = env.observation().to_vec();
                let a = vec![rng.random_range(spec.action_low[0]..spec.action_high[0])];
                let (r, _) = env.step(&a)?;
                buffer.push(Transition {
                    s,
                    a,
                    r,
                    s_next: env.observation().to_vec(),
                    episode_id: ep,
                    step_in_episode: k,
                });
            }
        }
        let mut ensemble = GaussianEnsemble::new(2, sd, ad, &[8], (-5.0, 0.5), 1e-3, &mut rng);
        ensemble.train(&buffer, FitOptions { epochs: 1, batch: 32, max_steps: 20 }, &mut rng)?;
        let cfg = SacConfig {
            hidden: vec![6, 5],
            ..SacConfig::default()
        };
        let sac = SacState::new(sd, &spec.action_low, &spec.action_high, &cfg, &mut rng)?;
        let mut wnet = WeightNet::new(feature_dim(sd, ad), 4, 1e-3, &mut rng);
        let n = wnet.params.len();
        for v in &mut wnet.params.values_mut()[n - 5..n - 1] {
            *v = rng.random_range(-1.0..1.0);
        }
        Ok(Self {
            normalizer: FeatureNormalizer::new(feature_dim(sd, ad), 0.01),
            spec,
            buffer,
            ensemble,
            sac,
            wnet,
        })
    }

    pub fn sizes() -> MetaSizes {
        MetaSizes {
            rollouts: 4,
            real_batch: 8,
            horizon: 3,
            fanout_per_model: 2,
            inner_lr: 3e-3,
        }
    }

    pub fn problem(&mut self, rng: &mut SimRng) -> Result<MetaProblem> {
        let spec = self.spec.clone();
        let reward = move |s: &[f64], a: &[f64], sn: &[f64]| spec.reward(s, a, sn);
        MetaProblem::build(
            &self.sac,
            &self.ensemble,
            &mut self.normalizer,
            &self.buffer,
            Self::sizes(),
            &reward,
            rng,
        )
    }
}

fn meta_suite() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let mut control_rejected = false;
    let checker = FiniteDiff {
        step: 1e-4,
        tolerance: META_TOLERANCE,
        floor_ratio: 1e-3,
    };
    for k in 0..META_INSTANCES as u64 {
        let mut fx = MetaFixture::new(500 + k)?;
        let p = fx.problem(&mut seeded(600 + k))?;
        let grads = p.set_gradients(&fx.sac);
        let theta = fx.wnet.params.values();
        let (_, g, _) = p.value_and_gradient(&fx.sac, &grads, &fx.wnet, theta)?;
        let f = |w: &[f64]| p.meta_loss(&fx.sac, &grads, &fx.wnet, w).unwrap_or(f64::NAN);
        let rep = checker.check(f, theta, &g);
        checks.push(CheckOutcome::from_report(format!("meta#{k}"), &rep));
        if k == 0 {
            control_rejected = control(f, theta, &g, checker);
        }
    }
    Ok(SuiteReport {
        scope: Scope::Meta,
        checks,
        control_rejected,
    })
}
