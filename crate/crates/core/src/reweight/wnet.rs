use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{sigmoid, AdamState, GruSpec, ParamVector, Segment};

/// Initial head bias; with zero head weights every fresh weight is `σ(3)`.
pub const HEAD_BIAS_INIT: f64 = 3.0;

/// GRU over a rollout's normalized features followed by a sigmoid read-out,
/// one weight per depth. Parameters: GRU block, then head weights, then bias.
#[derive(Clone, Debug)]
pub struct WeightNet {
    pub gru: GruSpec,
    pub params: ParamVector,
    pub optimizer: AdamState,
}

impl WeightNet {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, lr: f64, rng: &mut R) -> Self {
        let gru = GruSpec::new(input_dim, hidden_dim);
        let mut values = gru.init_params(rng).into_values();
        values.extend(std::iter::repeat_n(0.0, hidden_dim));
        values.push(HEAD_BIAS_INIT);
        let params = ParamVector::from_values(Self::layout(&gru), values).expect("finite initial weights");
        let optimizer = AdamState::new(params.len(), lr);
        Self { gru, params, optimizer }
    }

    pub fn layout(gru: &GruSpec) -> Vec<Segment> {
        let mut l = gru.layout();
        l.push(Segment::new("head.weight", &[1, gru.hidden_dim]));
        l.push(Segment::new("head.bias", &[1]));
        l
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64], f64) {
        let g = self.gru.num_params();
        let h = self.gru.hidden_dim;
        (&params[..g], &params[g..g + h], params[g + h])
    }

    /// Weights for one rollout under explicit parameters.
    pub fn weights_with(&self, params: &[f64], features: &[Vec<f64>]) -> Vec<f64> {
        let (gp, hw, hb) = self.split(params);
        let h0 = vec![0.0; self.gru.hidden_dim];
        self.gru
            .sequence_forward(gp, &h0, features)
            .iter()
            .map(|c| sigmoid(crate::nn::dot(hw, &c.h) + hb))
            .collect()
    }

    pub fn weights(&self, features: &[Vec<f64>]) -> Vec<f64> {
        self.weights_with(self.params.values(), features)
    }

    /// Accumulates `∂(Σ_k coef_k · w_k)/∂θ_w` for one rollout into `grad`.
    pub fn accumulate_grad(&self, params: &[f64], features: &[Vec<f64>], coefs: &[f64], grad: &mut [f64]) {
        assert_eq!(features.len(), coefs.len(), "one coefficient per depth");
        let (gp, hw, hb) = self.split(params);
        let g = self.gru.num_params();
        let hd = self.gru.hidden_dim;
        let caches = self.gru.sequence_forward(gp, &vec![0.0; hd], features);
        let mut ups = Vec::with_capacity(caches.len());
        for (c, &coef) in caches.iter().zip(coefs) {
            let w = sigmoid(crate::nn::dot(hw, &c.h) + hb);
            let dz = coef * w * (1.0 - w);
            for (gw, hv) in grad[g..g + hd].iter_mut().zip(&c.h) {
                *gw += dz * hv;
            }
            grad[g + hd] += dz;
            ups.push(hw.iter().map(|v| dz * v).collect::<Vec<f64>>());
        }
        self.gru.sequence_backward(gp, &caches, &ups, &mut grad[..g]);
    }

    /// Adam step. A non-finite gradient is skipped with a warning and
    /// `Ok(false)` is returned.
    pub fn step(&mut self, grad: &[f64]) -> Result<bool> {
        match self.optimizer.step(self.params.values_mut(), grad) {
            Ok(()) => Ok(true),
            Err(Error::NonFinite(_)) => {
                log::warn!("skipping weight-net step: non-finite meta-gradient");
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }
}
