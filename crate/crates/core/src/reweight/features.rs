use serde::{Deserialize, Serialize};

use crate::dynamics::TransitionSet;
use crate::error::{Error, Result};

/// `[s | a | std(r̂) | per-dimension std(ŝ')]`, population std over the fanout.
pub fn build_features(set: &TransitionSet) -> Result<Vec<f64>> {
    let n = set.fanout();
    if n == 0 {
        return Err(Error::Empty("transition set fanout"));
    }
    let sd = set.trunk_state.len();
    let mut out = Vec::with_capacity(2 * sd + set.action.len() + 1);
    out.extend_from_slice(&set.trunk_state);
    out.extend_from_slice(&set.action);
    out.push(population_std(set.rewards.iter().copied()));
    for d in 0..sd {
        out.push(population_std(set.next_states.iter().map(|s| s[d])));
    }
    Ok(out)
}

pub fn feature_dim(state_dim: usize, action_dim: usize) -> usize {
    2 * state_dim + action_dim + 1
}

fn population_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Exponential running estimates of the per-dimension mean and second moment.
///
/// The first fitted batch sets the statistics exactly; later batches are
/// blended in at `rate`. Before any fit the map is the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub batches: u64,
    pub rate: f64,
    pub floor: f64,
}

impl FeatureNormalizer {
    pub fn new(dim: usize, rate: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            second_moment: vec![1.0; dim],
            batches: 0,
            rate,
            floor: 1e-6,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.dim();
        let mut m = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for x in batch {
            for d in 0..dim {
                m[d] += x[d] / n;
                sq[d] += x[d] * x[d] / n;
            }
        }
        let rho = if self.batches == 0 { 1.0 } else { self.rate };
        for d in 0..dim {
            self.mean[d] += rho * (m[d] - self.mean[d]);
            self.second_moment[d] += rho * (sq[d] - self.second_moment[d]);
        }
        self.batches += 1;
    }

    pub fn std(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.second_moment)
            .map(|(m, s)| (s - m * m).max(0.0).sqrt().max(self.floor))
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(self.std()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}
