//! Analytic continuous-control tasks with closed-form rewards.
//!
//! | name               | obs                          | action      | Δt   | horizon |
//! |--------------------|------------------------------|-------------|------|---------|
//! | `pendulum`         | `[cos θ, sin θ, θ̇]`          | torque ±2   | 0.05 | 200     |
//! | `pointmass`        | `[x, y, vx, vy]`             | force ±1 ×2 | 0.1  | 100     |
//! | `cartpole-swingup` | `[x, ẋ, cos θ, sin θ, θ̇]`    | force ±1    | 0.05 | 200     |
//!
//! All tasks integrate with semi-implicit Euler (velocity first, then
//! position) and never terminate before the horizon. Rewards are functions of
//! `(s, a, s')` only, so the dynamics rollout can score predicted next states.
//! Angles are measured from upright.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{seeded, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "pendulum")]
    Pendulum,
    #[serde(rename = "pointmass")]
    PointMass,
    #[serde(rename = "cartpole-swingup")]
    CartPoleSwingUp,
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" => Ok(EnvKind::PointMass),
            "cartpole-swingup" => Ok(EnvKind::CartPoleSwingUp),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
            EnvKind::CartPoleSwingUp => "cartpole-swingup",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub observation: Vec<f64>,
    /// Integrator state; differs from the observation for angle-based tasks.
    pub physics: Vec<f64>,
    pub step_index: usize,
    pub rng: SimRng,
}

const PENDULUM_DT: f64 = 0.05;
const PENDULUM_MAX_SPEED: f64 = 8.0;
const PENDULUM_G: f64 = 10.0;

const POINT_DT: f64 = 0.1;
const POINT_BOUND: f64 = 2.0;
const POINT_MAX_SPEED: f64 = 2.0;
const POINT_START: f64 = 1.5;

const CART_DT: f64 = 0.05;
const CART_TRACK: f64 = 2.4;
const CART_MAX_SPEED: f64 = 10.0;
const CART_MAX_SPIN: f64 = 20.0;

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        let (state_dim, action_dim, bound, horizon) = match kind {
            EnvKind::Pendulum => (3, 1, 2.0, 200),
            EnvKind::PointMass => (4, 2, 1.0, 100),
            EnvKind::CartPoleSwingUp => (5, 1, 1.0, 200),
        };
        Self {
            kind,
            state_dim,
            action_dim,
            action_low: vec![-bound; action_dim],
            action_high: vec![bound; action_dim],
            horizon,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }

    /// Reward of a transition; pure and unchecked.
    pub fn reward(&self, _s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        match self.kind {
            EnvKind::Pendulum => {
                let theta = s_next[1].atan2(s_next[0]);
                let u = a[0].clamp(self.action_low[0], self.action_high[0]);
                -(theta * theta + 0.1 * s_next[2] * s_next[2] + 0.001 * u * u)
            }
            EnvKind::PointMass => {
                let dist = (s_next[0] * s_next[0] + s_next[1] * s_next[1]).sqrt();
                let u2: f64 = a.iter().map(|v| v.clamp(-1.0, 1.0).powi(2)).sum();
                -dist - 0.01 * u2
            }
            EnvKind::CartPoleSwingUp => {
                let u = a[0].clamp(-1.0, 1.0);
                s_next[2] - 0.01 * s_next[0] * s_next[0] - 0.001 * u * u
            }
        }
    }

    fn observe(&self, physics: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![physics[0].cos(), physics[0].sin(), physics[1]],
            EnvKind::PointMass => physics.to_vec(),
            EnvKind::CartPoleSwingUp => vec![
                physics[0],
                physics[1],
                physics[2].cos(),
                physics[2].sin(),
                physics[3],
            ],
        }
    }

    fn initial_physics(&self, rng: &mut SimRng) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => vec![rng.random_range(-PI..=PI), rng.random_range(-1.0..=1.0)],
            EnvKind::PointMass => vec![
                rng.random_range(-POINT_START..=POINT_START),
                rng.random_range(-POINT_START..=POINT_START),
                0.0,
                0.0,
            ],
            EnvKind::CartPoleSwingUp => vec![
                rng.random_range(-0.2..=0.2),
                rng.random_range(-0.2..=0.2),
                PI + rng.random_range(-0.2..=0.2),
                rng.random_range(-0.2..=0.2),
            ],
        }
    }

    fn integrate(&self, p: &[f64], u: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => {
                let (th, thdot) = (p[0], p[1]);
                let acc = 1.5 * PENDULUM_G * th.sin() + 3.0 * u[0];
                let thdot = (thdot + acc * PENDULUM_DT).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                vec![wrap_angle(th + thdot * PENDULUM_DT), thdot]
            }
            EnvKind::PointMass => {
                let speed = (p[2] * p[2] + p[3] * p[3]).sqrt();
                let mut out = p.to_vec();
                for i in 0..2 {
                    let acc = 2.0 * u[i] - 0.5 * speed * p[2 + i];
                    let mut v = (p[2 + i] + acc * POINT_DT).clamp(-POINT_MAX_SPEED, POINT_MAX_SPEED);
                    let mut x = p[i] + v * POINT_DT;
                    if x.abs() > POINT_BOUND {
                        x = x.clamp(-POINT_BOUND, POINT_BOUND);
                        v = 0.0;
                    }
                    out[i] = x;
                    out[2 + i] = v;
                }
                out
            }
            EnvKind::CartPoleSwingUp => {
                const G: f64 = 9.8;
                const M_CART: f64 = 1.0;
                const M_POLE: f64 = 0.1;
                const HALF_LEN: f64 = 0.5;
                const FRICTION: f64 = 0.1;
                let (x, xdot, th, thdot) = (p[0], p[1], p[2], p[3]);
                let total = M_CART + M_POLE;
                let force = 10.0 * u[0] - FRICTION * xdot;
                let (s, c) = th.sin_cos();
                let temp = (force + M_POLE * HALF_LEN * thdot * thdot * s) / total;
                let thacc = (G * s - c * temp) / (HALF_LEN * (4.0 / 3.0 - M_POLE * c * c / total));
                let xacc = temp - M_POLE * HALF_LEN * thacc * c / total;
                let mut xdot = (xdot + xacc * CART_DT).clamp(-CART_MAX_SPEED, CART_MAX_SPEED);
                let thdot = (thdot + thacc * CART_DT).clamp(-CART_MAX_SPIN, CART_MAX_SPIN);
                let mut x = x + xdot * CART_DT;
                if x.abs() > CART_TRACK {
                    x = x.clamp(-CART_TRACK, CART_TRACK);
                    xdot = 0.0;
                }
                vec![x, xdot, wrap_angle(th + thdot * CART_DT), thdot]
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

pub fn env_reset(spec: &EnvSpec, seed: u64) -> EnvState {
    let mut rng = seeded(seed);
    let physics = spec.initial_physics(&mut rng);
    EnvState {
        observation: spec.observe(&physics),
        physics,
        step_index: 0,
        rng,
    }
}

/// Advances one step. The action is clipped to the box before integration.
pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64, bool)> {
    check_dim("env action", spec.action_dim, action.len())?;
    if state.step_index >= spec.horizon {
        return Err(Error::Config("episode already finished; reset the environment".into()));
    }
    let u = spec.clip_action(action);
    let physics = spec.integrate(&state.physics, &u);
    let observation = spec.observe(&physics);
    let reward = spec.reward(&state.observation, &u, &observation);
    let step_index = state.step_index + 1;
    let next = EnvState {
        observation,
        physics,
        step_index,
        rng: state.rng.clone(),
    };
    Ok((next, reward, step_index == spec.horizon))
}

/// Checked reward oracle.
pub fn env_reward(spec: &EnvSpec, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
    check_dim("reward state", spec.state_dim, s.len())?;
    check_dim("reward action", spec.action_dim, a.len())?;
    check_dim("reward next state", spec.state_dim, s_next.len())?;
    Ok(spec.reward(s, a, s_next))
}

/// Stateful convenience wrapper used by the training loop.
#[derive(Clone, Debug)]
pub struct Env {
    pub spec: EnvSpec,
    pub state: EnvState,
}

impl Env {
    pub fn new(spec: EnvSpec, seed: u64) -> Self {
        let state = env_reset(&spec, seed);
        Self { spec, state }
    }

    pub fn reset(&mut self, seed: u64) -> &[f64] {
        self.state = env_reset(&self.spec, seed);
        &self.state.observation
    }

    pub fn observation(&self) -> &[f64] {
        &self.state.observation
    }

    pub fn step(&mut self, action: &[f64]) -> Result<(f64, bool)> {
        let (next, r, done) = env_step(&self.spec, &self.state, action)?;
        self.state = next;
        Ok((r, done))
    }
}
