use crate::dynamics::TransitionSet;
use crate::error::{check_dim, Error, Result};
use crate::rng::SimRng;
use crate::sac::{ActorItem, CriticItem, SacState, UpdateStats};

/// Loss terms for imaginary sets: the critics at the trunk `(ŝ, a)` regress on
/// one soft target per fanout member, and the actor term at `ŝ` uses one
/// shared reparameterized draw counted once per fanout member.
pub fn set_items(sac: &SacState, sets: &[&TransitionSet], weights: &[f64], rng: &mut SimRng) -> (Vec<CriticItem>, Vec<ActorItem>) {
    let pairs: Vec<(f64, &[f64])> = sets
        .iter()
        .flat_map(|s| s.rewards.iter().copied().zip(s.next_states.iter().map(Vec::as_slice)))
        .collect();
    let ys = sac.soft_targets(&pairs, rng);
    let mut off = 0;
    let mut critic = Vec::with_capacity(sets.len());
    let mut actor = Vec::with_capacity(sets.len());
    for (s, &w) in sets.iter().zip(weights) {
        let n = s.fanout();
        critic.push(CriticItem {
            s: s.trunk_state.clone(),
            a: s.action.clone(),
            targets: ys[off..off + n].to_vec(),
            weight: w,
        });
        off += n;
    }
    for (s, &w) in sets.iter().zip(weights) {
        actor.push(ActorItem {
            s: s.trunk_state.clone(),
            eps: sac.nets.policy.draw_eps(rng),
            count: s.fanout() as f64,
            weight: w,
        });
    }
    (critic, actor)
}

/// Adam steps on the critics and the actor with gradients of the weighted
/// imaginary losses (weights are constants), then an unweighted temperature
/// step and a target update. Gradients are divided by the number of imaginary
/// transitions. When every weight is zero the critic and actor steps are
/// skipped so Adam momentum cannot move them.
pub fn reweighted_policy_value_update(
    sac: &mut SacState,
    sets: &[&TransitionSet],
    weights: &[f64],
    rng: &mut SimRng,
) -> Result<UpdateStats> {
    if sets.is_empty() {
        return Err(Error::Empty("imaginary transition sets"));
    }
    check_dim("set weights", sets.len(), weights.len())?;
    let n: f64 = sets.iter().map(|s| s.fanout() as f64).sum();
    let active = weights.iter().any(|&w| w != 0.0);
    let (c_items, _) = set_items(sac, sets, weights, rng);
    let (c_loss, mut c_grad) = sac.nets.critic_loss_grad(sac.critics.values(), &c_items);
    if !c_loss.is_finite() {
        return Err(Error::NonFinite("imaginary critic loss"));
    }
    if active {
        sac.adam_critics(&mut c_grad, n)?;
    }
    let a_items: Vec<ActorItem> = sets
        .iter()
        .zip(weights)
        .map(|(s, &w)| ActorItem {
            s: s.trunk_state.clone(),
            eps: sac.nets.policy.draw_eps(rng),
            count: s.fanout() as f64,
            weight: w,
        })
        .collect();
    let (a_loss, mut a_grad, lps) =
        sac.nets
            .actor_loss_grad(sac.actor.values(), sac.critics.values(), sac.alpha(), &a_items);
    if !a_loss.is_finite() {
        return Err(Error::NonFinite("imaginary actor loss"));
    }
    if active {
        sac.adam_actor(&mut a_grad, n)?;
    }
    sac.temperature_step(&lps)?;
    sac.target_soft_update();
    Ok(UpdateStats {
        critic_loss: c_loss / n,
        actor_loss: a_loss / n,
        alpha: sac.alpha(),
    })
}
