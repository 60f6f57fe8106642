use rand::seq::SliceRandom;

use crate::error::{check_dim, Error, Result};
use crate::nn::{soft_clamp, Activation, AdamState, MlpSpec, ParamVector};
use crate::par;
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{child, SimRng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const STD_FLOOR: f64 = 1e-6;
/// Holdout NLL is computed on at most this many samples per model.
const HOLDOUT_CAP: usize = 2048;
const CHUNK: usize = 16;

/// Per-dimension affine map `x ↦ (x − mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Affine {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1.0;
            for d in 0..dim {
                sum[d] += r[d];
                sq[d] += r[d] * r[d];
            }
        }
        if n == 0.0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = (0..dim)
            .map(|d| (sq[d] / n - mean[d] * mean[d]).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    #[inline]
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Negative log-likelihood of `delta` under `N(mean, exp(log_std)²)`, summed
/// over dimensions, constant included.
pub fn gaussian_nll(delta: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    delta
        .iter()
        .zip(mean.iter().zip(log_std))
        .map(|(d, (m, ls))| {
            let z = (d - m) * (-ls).exp();
            ls + 0.5 * z * z + HALF_LN_2PI
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct ProbabilisticModel {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub log_std_bounds: (f64, f64),
    pub optimizer: AdamState,
}

/// Normalized training matrix built from the replay buffer.
#[derive(Clone, Debug)]
pub struct ModelData {
    pub inputs: Vec<Vec<f64>>,
    pub deltas: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub holdout_nll_before: f64,
    pub holdout_nll_after: f64,
    pub steps: usize,
}

impl ProbabilisticModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        log_std_bounds: (f64, f64),
        lr: f64,
        rng: &mut SimRng,
    ) -> Self {
        let spec = MlpSpec::new(state_dim + action_dim, hidden, 2 * state_dim, Activation::Relu, Activation::Identity);
        let params = spec.init_params(rng);
        let optimizer = AdamState::new(params.len(), lr);
        Self {
            spec,
            params,
            log_std_bounds,
            optimizer,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.spec.output_dim / 2
    }

    /// Raw-space delta mean and log-std for a normalized input.
    pub fn head(&self, params: &[f64], x_norm: &[f64], out_norm: &Affine) -> (Vec<f64>, Vec<f64>) {
        let out = self.spec.forward(params, x_norm);
        let sd = self.state_dim();
        let (lo, hi) = self.log_std_bounds;
        let mean = (0..sd).map(|d| out_norm.mean[d] + out_norm.std[d] * out[d]).collect();
        let log_std = (0..sd)
            .map(|d| soft_clamp(out[sd + d] + out_norm.std[d].ln(), lo, hi).0)
            .collect();
        (mean, log_std)
    }

    /// NLL of one sample and its gradient, accumulated into `grad`.
    pub fn nll_grad(&self, params: &[f64], x_norm: &[f64], delta: &[f64], out_norm: &Affine, grad: &mut [f64]) -> f64 {
        let trace = self.spec.forward_trace(params, x_norm);
        let out = trace.output();
        let sd = self.state_dim();
        let (lo, hi) = self.log_std_bounds;
        let mut up = vec![0.0; 2 * sd];
        let mut loss = 0.0;
        for d in 0..sd {
            let mean = out_norm.mean[d] + out_norm.std[d] * out[d];
            let (ls, dls) = soft_clamp(out[sd + d] + out_norm.std[d].ln(), lo, hi);
            let inv_var = (-2.0 * ls).exp();
            let r = delta[d] - mean;
            loss += ls + 0.5 * r * r * inv_var + HALF_LN_2PI;
            up[d] = -r * inv_var * out_norm.std[d];
            up[sd + d] = (1.0 - r * r * inv_var) * dls;
        }
        self.spec.backward(params, &trace, &up, grad);
        loss
    }

    /// Mean NLL and gradient over `idx`.
    pub fn batch_nll_grad(&self, params: &[f64], data: &ModelData, idx: &[usize], out_norm: &Affine) -> (f64, Vec<f64>) {
        let parts = par::map_chunks(idx, CHUNK, |_, chunk| {
            let mut g = vec![0.0; params.len()];
            let mut l = 0.0;
            for &i in chunk {
                l += self.nll_grad(params, &data.inputs[i], &data.deltas[i], out_norm, &mut g);
            }
            (l, g)
        });
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            par::add_assign(&mut grad, &g);
        }
        let n = idx.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    pub fn mean_nll(&self, data: &ModelData, idx: &[usize], out_norm: &Affine) -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        let total: f64 = idx
            .iter()
            .map(|&i| {
                let (m, ls) = self.head(self.params.values(), &data.inputs[i], out_norm);
                gaussian_nll(&data.deltas[i], &m, &ls)
            })
            .sum();
        total / idx.len() as f64
    }

    /// Adam on minibatches of `train_idx` for `epochs` passes, capped at `max_steps`.
    pub fn fit(
        &mut self,
        data: &ModelData,
        train_idx: &[usize],
        out_norm: &Affine,
        epochs: usize,
        batch: usize,
        max_steps: usize,
        rng: &mut SimRng,
    ) -> Result<usize> {
        let mut order = train_idx.to_vec();
        let mut steps = 0;
        'outer: for _ in 0..epochs {
            order.shuffle(rng);
            for mb in order.chunks(batch.max(1)) {
                if steps >= max_steps {
                    break 'outer;
                }
                let (_, g) = self.batch_nll_grad(self.params.values(), data, mb, out_norm);
                self.optimizer.step(self.params.values_mut(), &g)?;
                steps += 1;
            }
        }
        Ok(steps)
    }
}

/// Mean Gaussian NLL of `model` over raw transitions, using the given normalizers.
pub fn nll_loss(model: &ProbabilisticModel, in_norm: &Affine, out_norm: &Affine, batch: &[Transition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("nll batch"));
    }
    let sd = model.state_dim();
    let mut total = 0.0;
    for t in batch {
        check_dim("nll state", sd, t.s.len())?;
        let x = in_norm.apply(&[t.s.as_slice(), t.a.as_slice()].concat());
        let delta: Vec<f64> = t.s_next.iter().zip(&t.s).map(|(a, b)| a - b).collect();
        let (m, ls) = model.head(model.params.values(), &x, out_norm);
        total += gaussian_nll(&delta, &m, &ls);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Debug)]
pub struct GaussianEnsemble {
    pub models: Vec<ProbabilisticModel>,
    pub bootstrap_indices: Vec<Vec<usize>>,
    pub input_norm: Affine,
    pub output_norm: Affine,
    pub state_dim: usize,
    pub action_dim: usize,
    pub trained: bool,
}

/// Knobs for one retraining pass.
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch: usize,
    pub max_steps: usize,
}

impl GaussianEnsemble {
    pub fn new(
        size: usize,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        log_std_bounds: (f64, f64),
        lr: f64,
        rng: &mut SimRng,
    ) -> Self {
        assert!(size >= 1, "ensemble needs at least one model");
        let models = (0..size)
            .map(|_| ProbabilisticModel::new(state_dim, action_dim, hidden, log_std_bounds, lr, rng))
            .collect();
        Self {
            models,
            bootstrap_indices: Vec::new(),
            input_norm: Affine::identity(state_dim + action_dim),
            output_norm: Affine::identity(state_dim),
            state_dim,
            action_dim,
            trained: false,
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Refits the normalizers on the whole buffer and returns the normalized data.
    pub fn prepare_data(&mut self, buffer: &ReplayBuffer) -> ModelData {
        let sd = self.state_dim;
        let raw_in: Vec<Vec<f64>> = buffer.iter().map(|t| [t.s.as_slice(), t.a.as_slice()].concat()).collect();
        let deltas: Vec<Vec<f64>> = buffer
            .iter()
            .map(|t| t.s_next.iter().zip(&t.s).map(|(a, b)| a - b).collect())
            .collect();
        self.input_norm = Affine::fit(raw_in.iter().map(Vec::as_slice), sd + self.action_dim);
        self.output_norm = Affine::fit(deltas.iter().map(Vec::as_slice), sd);
        let inputs = raw_in.iter().map(|x| self.input_norm.apply(x)).collect();
        ModelData { inputs, deltas }
    }

    /// Redraws the bootstrap resamples and warm-starts every model on its own
    /// resample; the last 10% of each (shuffled) resample is held out.
    pub fn train(&mut self, buffer: &ReplayBuffer, opts: FitOptions, rng: &mut SimRng) -> Result<TrainReport> {
        if buffer.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let data = self.prepare_data(buffer);
        self.bootstrap_indices = buffer.bootstrap_datasets(self.models.len(), rng)?;
        let seeds: Vec<SimRng> = (0..self.models.len()).map(|_| child(rng)).collect();
        let out_norm = self.output_norm.clone();
        let boots = &self.bootstrap_indices;
        let mut jobs: Vec<(&mut ProbabilisticModel, SimRng)> = self.models.iter_mut().zip(seeds).collect();
        let results = par::map_mut(&mut jobs, |b, (model, r)| -> Result<(f64, f64, usize)> {
            let mut idx = boots[b].clone();
            idx.shuffle(r);
            let n_hold = if idx.len() >= 10 { idx.len() / 10 } else { 0 };
            let (train, hold) = idx.split_at(idx.len() - n_hold);
            let hold = &hold[..hold.len().min(HOLDOUT_CAP)];
            let before = model.mean_nll(&data, hold, &out_norm);
            let steps = model.fit(&data, train, &out_norm, opts.epochs, opts.batch, opts.max_steps, r)?;
            let after = model.mean_nll(&data, hold, &out_norm);
            Ok((before, after, steps))
        });
        let mut report = TrainReport::default();
        let n = results.len() as f64;
        for r in results {
            let (b, a, s) = r?;
            report.holdout_nll_before += b / n;
            report.holdout_nll_after += a / n;
            report.steps += s;
        }
        self.trained = true;
        Ok(report)
    }

    /// Per-model `(mean, std)` of the next state.
    pub fn predict_distribution(&self, s: &[f64], a: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        check_dim("ensemble state", self.state_dim, s.len())?;
        check_dim("ensemble action", self.action_dim, a.len())?;
        Ok(self.predict_unchecked(s, a))
    }

    pub(crate) fn predict_unchecked(&self, s: &[f64], a: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut x = Vec::with_capacity(s.len() + a.len());
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        let x = self.input_norm.apply(&x);
        self.models
            .iter()
            .map(|m| {
                let (dm, ls) = m.head(m.params.values(), &x, &self.output_norm);
                let mean = s.iter().zip(&dm).map(|(a, b)| a + b).collect();
                let std = ls.iter().map(|v| v.exp()).collect();
                (mean, std)
            })
            .collect()
    }

    pub fn sample_next_states(&self, s: &[f64], a: &[f64], per_model: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(per_model * self.models.len());
        for (mean, std) in self.predict_unchecked(s, a) {
            for _ in 0..per_model {
                out.push(
                    mean.iter()
                        .zip(&std)
                        .map(|(m, sd)| m + sd * crate::rng::normal(rng))
                        .collect(),
                );
            }
        }
        out
    }
}
