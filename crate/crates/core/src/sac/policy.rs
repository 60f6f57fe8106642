//! Tanh-squashed Gaussian policy with reparameterized sampling.

use crate::nn::{softplus, soft_clamp, MlpSpec, MlpTrace};
use crate::rng::{normal, SimRng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Shape of the actor plus the action box it squashes into.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHead {
    pub spec: MlpSpec,
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
}

/// Everything the backward pass needs from one reparameterized draw.
#[derive(Clone, Debug)]
pub struct PolicyDraw {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub(crate) trace: MlpTrace,
    pub(crate) eps: Vec<f64>,
    pub(crate) std: Vec<f64>,
    pub(crate) squashed: Vec<f64>,
    pub(crate) clamp_grad: Vec<f64>,
}

/// `ln(1 − tanh²u)` without cancellation.
#[inline]
pub(crate) fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl PolicyHead {
    pub fn new(spec: MlpSpec, low: &[f64], high: &[f64]) -> Self {
        assert_eq!(spec.output_dim, 2 * low.len(), "actor output must be mean and log-std");
        let center = low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect();
        let half_range = low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect();
        Self { spec, center, half_range }
    }

    pub fn action_dim(&self) -> usize {
        self.center.len()
    }

    pub fn draw_eps(&self, rng: &mut SimRng) -> Vec<f64> {
        (0..self.action_dim()).map(|_| normal(rng)).collect()
    }

    /// Squashed sample for fixed noise; the pre-squash std is scaled by `√scale`.
    pub fn draw(&self, params: &[f64], s: &[f64], eps: &[f64], scale: f64) -> PolicyDraw {
        let trace = self.spec.forward_trace(params, s);
        let out = trace.output();
        let ad = self.action_dim();
        let half_ln_scale = 0.5 * scale.ln();
        let mut action = Vec::with_capacity(ad);
        let mut std = Vec::with_capacity(ad);
        let mut squashed = Vec::with_capacity(ad);
        let mut clamp_grad = Vec::with_capacity(ad);
        let mut log_prob = 0.0;
        for d in 0..ad {
            let (ls, dls) = soft_clamp(out[ad + d], LOG_STD_MIN, LOG_STD_MAX);
            let sd = (ls + half_ln_scale).exp();
            let u = out[d] + sd * eps[d];
            let y = u.tanh();
            log_prob += -0.5 * eps[d] * eps[d] - ls - half_ln_scale - HALF_LN_2PI
                - log_one_minus_tanh_sq(u)
                - self.half_range[d].ln();
            action.push(self.center[d] + self.half_range[d] * y);
            std.push(sd);
            squashed.push(y);
            clamp_grad.push(dls);
        }
        PolicyDraw {
            action,
            log_prob,
            trace,
            eps: eps.to_vec(),
            std,
            squashed,
            clamp_grad,
        }
    }

    pub fn sample(&self, params: &[f64], s: &[f64], rng: &mut SimRng, scale: f64) -> PolicySample {
        let eps = self.draw_eps(rng);
        let d = self.draw(params, s, &eps, scale);
        PolicySample {
            action: d.action,
            log_prob: d.log_prob,
        }
    }

    /// `center + half_range · tanh(mean)`.
    pub fn mean_action(&self, params: &[f64], s: &[f64]) -> Vec<f64> {
        let out = self.spec.forward(params, s);
        (0..self.action_dim())
            .map(|d| self.center[d] + self.half_range[d] * out[d].tanh())
            .collect()
    }

    /// Density of an arbitrary in-bounds action; `-inf` on the boundary.
    pub fn log_prob(&self, params: &[f64], s: &[f64], action: &[f64], scale: f64) -> f64 {
        let out = self.spec.forward(params, s);
        let ad = self.action_dim();
        let mut lp = 0.0;
        for d in 0..ad {
            let y = (action[d] - self.center[d]) / self.half_range[d];
            if y.abs() >= 1.0 {
                return f64::NEG_INFINITY;
            }
            let u = y.atanh();
            let ls = soft_clamp(out[ad + d], LOG_STD_MIN, LOG_STD_MAX).0 + 0.5 * scale.ln();
            let z = (u - out[d]) * (-ls).exp();
            lp += -0.5 * z * z - ls - HALF_LN_2PI - (1.0 - y * y).ln() - self.half_range[d].ln();
        }
        lp
    }

    /// Accumulates the actor gradient of `coef·(alpha·log π − Q)` for one draw,
    /// given `∂Q/∂action`.
    pub fn backward(&self, params: &[f64], draw: &PolicyDraw, alpha: f64, dq_da: &[f64], coef: f64, grad: &mut [f64]) {
        let ad = self.action_dim();
        let mut up = vec![0.0; 2 * ad];
        for d in 0..ad {
            let y = draw.squashed[d];
            let da_du = self.half_range[d] * (1.0 - y * y);
            let dloss_du = alpha * 2.0 * y - dq_da[d] * da_du;
            up[d] = coef * dloss_du;
            up[ad + d] = coef * (-alpha + dloss_du * draw.std[d] * draw.eps[d]) * draw.clamp_grad[d];
        }
        self.spec.backward(params, &draw.trace, &up, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, Activation, ParamVector};
    use crate::rng::seeded;
    use rand::Rng;

    fn head(obs: usize, act: usize, hidden: &[usize], low: f64, high: f64) -> PolicyHead {
        let spec = MlpSpec::new(obs, hidden, 2 * act, Activation::Tanh, Activation::Identity);
        PolicyHead::new(spec, &vec![low; act], &vec![high; act])
    }

    #[test]
    fn stable_squash_correction_matches_naive_form() {
        for &u in &[-3.0_f64, -0.7, 0.0, 0.2, 1.5, 4.0] {
            let naive = (1.0 - u.tanh().powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - naive).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn zero_actor_mean_action_is_box_center() {
        let h = head(3, 2, &[4], -2.0, 4.0);
        let p = ParamVector::zeros(h.spec.layout());
        assert_eq!(h.mean_action(p.values(), &[0.1, 0.2, 0.3]), vec![1.0, 1.0]);
    }

    #[test]
    fn sampled_log_prob_matches_density_at_the_action() {
        let h = head(2, 2, &[5], -2.0, 2.0);
        let p = h.spec.init_params(&mut seeded(1));
        let mut rng = seeded(2);
        for scale in [1.0, 10.0] {
            for _ in 0..20 {
                let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let smp = h.sample(p.values(), &s, &mut rng, scale);
                let lp = h.log_prob(p.values(), &s, &smp.action, scale);
                assert!((lp - smp.log_prob).abs() < 1e-7 * (1.0 + lp.abs()), "{lp} vs {}", smp.log_prob);
            }
        }
    }

    #[test]
    fn density_integrates_to_one_on_a_1d_box() {
        // uniform proposal over [-2, 2]: E_U[π(a)/U(a)] = ∫π = 1
        let h = head(1, 1, &[4], -2.0, 2.0);
        let mut p = h.spec.init_params(&mut seeded(3));
        let n = p.len();
        p.values_mut()[n - 1] = -0.5;
        let mut rng = seeded(4);
        let m = 200_000;
        let mut acc = 0.0;
        for _ in 0..m {
            let a = rng.random_range(-2.0..2.0);
            acc += h.log_prob(p.values(), &[0.4], &[a], 1.0).exp() * 4.0;
        }
        let est = acc / m as f64;
        assert!((est - 1.0).abs() < 0.05, "∫π ≈ {est}");
    }

    #[test]
    fn larger_scale_widens_the_spread() {
        let h = head(1, 2, &[4], -1.0, 1.0);
        let mut p = h.spec.init_params(&mut seeded(5));
        let n = p.len();
        p.values_mut()[n - 2..].copy_from_slice(&[-2.0, -2.0]);
        let spread = |scale: f64| {
            let mut rng = seeded(6);
            let xs: Vec<Vec<f64>> = (0..10_000).map(|_| h.sample(p.values(), &[0.2], &mut rng, scale).action).collect();
            (0..2)
                .map(|d| {
                    let mean = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
                    (xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (spread(1.0), spread(10.0));
        for d in 0..2 {
            assert!(b[d] > a[d], "{a:?} {b:?}");
        }
    }

    #[test]
    fn unit_scale_is_the_plain_policy() {
        let h = head(2, 1, &[3], -1.0, 1.0);
        let p = h.spec.init_params(&mut seeded(7));
        let eps = [0.3];
        let d = h.draw(p.values(), &[0.5, -0.5], &eps, 1.0);
        let out = h.spec.forward(p.values(), &[0.5, -0.5]);
        let ls = soft_clamp(out[1], LOG_STD_MIN, LOG_STD_MAX).0;
        assert!((d.action[0] - (out[0] + ls.exp() * 0.3).tanh()).abs() < 1e-15);
    }

    #[test]
    fn log_prob_gradient_matches_differences() {
        let h = head(3, 2, &[6], -2.0, 2.0);
        let mut rng = seeded(8);
        for _ in 0..5 {
            let p = h.spec.init_params(&mut rng);
            let s = [0.3, -0.2, 0.9];
            let eps = h.draw_eps(&mut rng);
            // objective alpha·log π − q·a with a fixed linear Q
            let q = [0.7, -1.1];
            let alpha = 0.3;
            let f = |v: &[f64]| {
                let d = h.draw(v, &s, &eps, 2.0);
                alpha * d.log_prob - q[0] * d.action[0] - q[1] * d.action[1]
            };
            let d = h.draw(p.values(), &s, &eps, 2.0);
            let mut g = vec![0.0; p.len()];
            h.backward(p.values(), &d, alpha, &q, 1.0, &mut g);
            let rep = finite_diff_check(f, p.values(), &g, 1e-6);
            assert!(rep.passed, "{rep:?}");
        }
    }
}
