//! Soft Bellman residual and policy loss, per item and batched.
//!
//! Items carry an explicit weight so the same code serves real batches (weight
//! 1), virtual updates and reweighted updates. Every batched reduction goes
//! through [`par::map_chunks`] and is folded in chunk order.

use crate::nn::{MlpSpec, MlpTrace};
use crate::par;

use super::policy::{PolicyDraw, PolicyHead};

const CHUNK: usize = 8;

/// Critic loss term: the two critics at `(s, a)` regressed onto every target.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticItem {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub targets: Vec<f64>,
    pub weight: f64,
}

/// Actor loss term at state `s` for a fixed reparameterization noise,
/// counted `count` times.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorItem {
    pub s: Vec<f64>,
    pub eps: Vec<f64>,
    pub count: f64,
    pub weight: f64,
}

/// Network shapes shared by every SAC computation; parameters live elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SacNets {
    pub policy: PolicyHead,
    pub critic: MlpSpec,
}

impl SacNets {
    pub fn critic_len(&self) -> usize {
        self.critic.num_params()
    }

    fn critic_trace(&self, critics: &[f64], i: usize, s: &[f64], a: &[f64]) -> MlpTrace {
        let n = self.critic_len();
        let mut x = Vec::with_capacity(s.len() + a.len());
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        self.critic.forward_trace(&critics[i * n..(i + 1) * n], &x)
    }

    pub fn q_value(&self, critics: &[f64], i: usize, s: &[f64], a: &[f64]) -> f64 {
        self.critic_trace(critics, i, s, a).output()[0]
    }

    pub fn min_q(&self, critics: &[f64], s: &[f64], a: &[f64]) -> f64 {
        self.q_value(critics, 0, s, a).min(self.q_value(critics, 1, s, a))
    }

    /// `r + γ(min Q̄(s', a') − α log π(a'|s'))` with `a'` drawn from `eps`.
    pub fn soft_target(
        &self,
        actor: &[f64],
        target_critics: &[f64],
        alpha: f64,
        gamma: f64,
        r: f64,
        s_next: &[f64],
        eps: &[f64],
    ) -> f64 {
        let d = self.policy.draw(actor, s_next, eps, 1.0);
        r + gamma * (self.min_q(target_critics, s_next, &d.action) - alpha * d.log_prob)
    }

    /// Targets for many `(r, s')` pairs; `eps[i]` is the noise for pair `i`.
    #[allow(clippy::too_many_arguments)]
    pub fn soft_targets(
        &self,
        actor: &[f64],
        target_critics: &[f64],
        alpha: f64,
        gamma: f64,
        pairs: &[(f64, &[f64])],
        eps: &[Vec<f64>],
    ) -> Vec<f64> {
        let idx: Vec<usize> = (0..pairs.len()).collect();
        par::map_chunks(&idx, CHUNK * 4, |_, chunk| {
            chunk
                .iter()
                .map(|&i| self.soft_target(actor, target_critics, alpha, gamma, pairs[i].0, pairs[i].1, &eps[i]))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Unweighted `Σ_critics Σ_targets ½(Q − y)²`; accumulates `coef ×` its
    /// gradient when `grad` is given.
    pub fn critic_item(&self, critics: &[f64], item: &CriticItem, coef: f64, grad: Option<&mut [f64]>) -> f64 {
        let n = self.critic_len();
        let mut loss = 0.0;
        let mut grad = grad;
        for i in 0..2 {
            let trace = self.critic_trace(critics, i, &item.s, &item.a);
            let q = trace.output()[0];
            let mut dq = 0.0;
            for &y in &item.targets {
                loss += 0.5 * (q - y) * (q - y);
                dq += q - y;
            }
            if let Some(g) = grad.as_deref_mut() {
                if coef != 0.0 {
                    self.critic
                        .backward(&critics[i * n..(i + 1) * n], &trace, &[coef * dq], &mut g[i * n..(i + 1) * n]);
                }
            }
        }
        loss
    }

    /// `Σ w·J_Q(item)` and its gradient.
    pub fn critic_loss_grad(&self, critics: &[f64], items: &[CriticItem]) -> (f64, Vec<f64>) {
        let parts = par::map_chunks(items, CHUNK, |_, chunk| {
            let mut g = vec![0.0; critics.len()];
            let l: f64 = chunk
                .iter()
                .map(|it| it.weight * self.critic_item(critics, it, it.weight, Some(&mut g)))
                .sum();
            (l, g)
        });
        fold(parts, critics.len())
    }

    /// Per-item unweighted loss and gradient.
    pub fn critic_item_grads(&self, critics: &[f64], items: &[CriticItem]) -> Vec<(f64, Vec<f64>)> {
        par::map(items, |_, it| {
            let mut g = vec![0.0; critics.len()];
            let l = self.critic_item(critics, it, 1.0, Some(&mut g));
            (l, g)
        })
    }

    pub fn critic_loss(&self, critics: &[f64], items: &[CriticItem]) -> f64 {
        par::map_chunks(items, CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|it| it.weight * self.critic_item(critics, it, 0.0, None))
                .sum::<f64>()
        })
        .into_iter()
        .sum()
    }

    fn actor_draw(&self, actor: &[f64], item: &ActorItem) -> PolicyDraw {
        self.policy.draw(actor, &item.s, &item.eps, 1.0)
    }

    /// Unweighted `count·(α log π(â|s) − min Q(s, â))` and `log π`;
    /// accumulates `coef ×` its actor gradient when `grad` is given.
    pub fn actor_item(
        &self,
        actor: &[f64],
        critics: &[f64],
        alpha: f64,
        item: &ActorItem,
        coef: f64,
        grad: Option<&mut [f64]>,
    ) -> (f64, f64) {
        let d = self.actor_draw(actor, item);
        let n = self.critic_len();
        let t0 = self.critic_trace(critics, 0, &item.s, &d.action);
        let t1 = self.critic_trace(critics, 1, &item.s, &d.action);
        let (q0, q1) = (t0.output()[0], t1.output()[0]);
        let (k, trace, q) = if q0 <= q1 { (0, &t0, q0) } else { (1, &t1, q1) };
        let loss = item.count * (alpha * d.log_prob - q);
        if let Some(g) = grad {
            let c = coef * item.count;
            if c != 0.0 {
                let dx = self.critic.backward_input(&critics[k * n..(k + 1) * n], trace, &[1.0]);
                self.policy.backward(actor, &d, alpha, &dx[item.s.len()..], c, g);
            }
        }
        (loss, d.log_prob)
    }

    /// `Σ w·J_π(item)`, its actor gradient, and `log π` per item.
    pub fn actor_loss_grad(&self, actor: &[f64], critics: &[f64], alpha: f64, items: &[ActorItem]) -> (f64, Vec<f64>, Vec<f64>) {
        let parts = par::map_chunks(items, CHUNK, |_, chunk| {
            let mut g = vec![0.0; actor.len()];
            let mut l = 0.0;
            let mut lps = Vec::with_capacity(chunk.len());
            for it in chunk {
                let (li, lp) = self.actor_item(actor, critics, alpha, it, it.weight, Some(&mut g));
                l += it.weight * li;
                lps.push(lp);
            }
            (l, g, lps)
        });
        let mut grad = vec![0.0; actor.len()];
        let mut loss = 0.0;
        let mut lps = Vec::with_capacity(items.len());
        for (l, g, lp) in parts {
            loss += l;
            par::add_assign(&mut grad, &g);
            lps.extend(lp);
        }
        (loss, grad, lps)
    }

    pub fn actor_item_grads(&self, actor: &[f64], critics: &[f64], alpha: f64, items: &[ActorItem]) -> Vec<(f64, Vec<f64>)> {
        par::map(items, |_, it| {
            let mut g = vec![0.0; actor.len()];
            let (l, _) = self.actor_item(actor, critics, alpha, it, 1.0, Some(&mut g));
            (l, g)
        })
    }

    pub fn actor_loss(&self, actor: &[f64], critics: &[f64], alpha: f64, items: &[ActorItem]) -> f64 {
        par::map_chunks(items, CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|it| it.weight * self.actor_item(actor, critics, alpha, it, 0.0, None).0)
                .sum::<f64>()
        })
        .into_iter()
        .sum()
    }
}

fn fold(parts: Vec<(f64, Vec<f64>)>, len: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; len];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        par::add_assign(&mut grad, &g);
    }
    (loss, grad)
}
