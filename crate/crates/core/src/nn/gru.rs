//! GRU cell with the update convention
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! ĥ  = tanh(W_h x + U_h (r ∘ h) + b_h)
//! h' = (1 − z) ∘ h + z ∘ ĥ
//! ```
//!
//! Parameters are stored as `w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{matvec_acc, matvec_t_acc, outer_acc, sigmoid, xavier_fill, ParamVector, Segment};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

struct Offsets {
    w: [usize; 3],
    u: [usize; 3],
    b: [usize; 3],
}

impl GruSpec {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("GRU dimensions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, h) = (self.input_dim, self.hidden_dim);
        3 * (h * d + h * h + h)
    }

    pub fn layout(&self) -> Vec<Segment> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        ["z", "r", "h"]
            .iter()
            .flat_map(|g| {
                [
                    Segment::new(format!("gru.w_{g}"), &[h, d]),
                    Segment::new(format!("gru.u_{g}"), &[h, h]),
                    Segment::new(format!("gru.b_{g}"), &[h]),
                ]
            })
            .collect()
    }

    fn offsets(&self) -> Offsets {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let block = h * d + h * h + h;
        let mut o = Offsets {
            w: [0; 3],
            u: [0; 3],
            b: [0; 3],
        };
        for g in 0..3 {
            o.w[g] = g * block;
            o.u[g] = g * block + h * d;
            o.b[g] = g * block + h * d + h * h;
        }
        o
    }

    /// Glorot-uniform input and recurrent matrices, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let mut p = ParamVector::zeros(self.layout());
        let o = self.offsets();
        let v = p.values_mut();
        for g in 0..3 {
            xavier_fill(&mut v[o.w[g]..o.w[g] + h * d], d, h, rng);
            xavier_fill(&mut v[o.u[g]..o.u[g] + h * h], h, h, rng);
        }
        p
    }

    pub fn step(&self, params: &[f64], hidden: &[f64], input: &[f64]) -> Vec<f64> {
        self.step_cached(params, hidden, input).h
    }

    pub fn step_cached(&self, params: &[f64], hidden: &[f64], input: &[f64]) -> GruStepCache {
        let (d, h) = (self.input_dim, self.hidden_dim);
        assert_eq!(input.len(), d, "GRU input length");
        assert_eq!(hidden.len(), h, "GRU hidden length");
        assert_eq!(params.len(), self.num_params(), "GRU parameter length");
        let o = self.offsets();
        let gate = |g: usize, hv: &[f64]| {
            let mut a = params[o.b[g]..o.b[g] + h].to_vec();
            matvec_acc(&params[o.w[g]..o.w[g] + h * d], input, &mut a);
            matvec_acc(&params[o.u[g]..o.u[g] + h * h], hv, &mut a);
            a
        };
        let z: Vec<f64> = gate(0, hidden).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(1, hidden).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(hidden).map(|(a, b)| a * b).collect();
        let candidate: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
        let new_h = (0..h)
            .map(|i| (1.0 - z[i]) * hidden[i] + z[i] * candidate[i])
            .collect();
        GruStepCache {
            x: input.to_vec(),
            h_prev: hidden.to_vec(),
            z,
            r,
            candidate,
            h: new_h,
        }
    }

    /// Runs the recurrence from `h0`, keeping every step's cache.
    pub fn sequence_forward(&self, params: &[f64], h0: &[f64], inputs: &[Vec<f64>]) -> Vec<GruStepCache> {
        let mut out: Vec<GruStepCache> = Vec::with_capacity(inputs.len());
        for x in inputs {
            let c = {
                let h = out.last().map_or(h0, |c| &c.h);
                self.step_cached(params, h, x)
            };
            out.push(c);
        }
        out
    }

    /// Backpropagation through time of `Σ_t upstream_t · h_t`, accumulated into `grad`.
    /// Returns the gradient with respect to the initial hidden state.
    pub fn sequence_backward(
        &self,
        params: &[f64],
        caches: &[GruStepCache],
        upstreams: &[Vec<f64>],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        assert_eq!(caches.len(), upstreams.len(), "GRU sequence lengths");
        assert_eq!(grad.len(), params.len(), "GRU gradient buffer length");
        let o = self.offsets();
        let mut dh_next = vec![0.0; h];
        for (c, up) in caches.iter().zip(upstreams).rev() {
            assert_eq!(up.len(), h, "GRU upstream length");
            let dh: Vec<f64> = dh_next.iter().zip(up).map(|(a, b)| a + b).collect();
            let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - c.z[i])).collect();

            // candidate branch
            let da_h: Vec<f64> = (0..h)
                .map(|i| dh[i] * c.z[i] * (1.0 - c.candidate[i] * c.candidate[i]))
                .collect();
            let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(a, b)| a * b).collect();
            outer_acc(&mut grad[o.w[2]..o.w[2] + h * d], &da_h, &c.x);
            outer_acc(&mut grad[o.u[2]..o.u[2] + h * h], &da_h, &rh);
            for (g, v) in grad[o.b[2]..o.b[2] + h].iter_mut().zip(&da_h) {
                *g += v;
            }
            let mut d_rh = vec![0.0; h];
            matvec_t_acc(&params[o.u[2]..o.u[2] + h * h], &da_h, &mut d_rh);
            for i in 0..h {
                dh_prev[i] += d_rh[i] * c.r[i];
            }

            // update and reset gates
            let da_z: Vec<f64> = (0..h)
                .map(|i| dh[i] * (c.candidate[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]))
                .collect();
            let da_r: Vec<f64> = (0..h)
                .map(|i| d_rh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]))
                .collect();
            for (g, da) in [(0usize, &da_z), (1, &da_r)] {
                outer_acc(&mut grad[o.w[g]..o.w[g] + h * d], da, &c.x);
                outer_acc(&mut grad[o.u[g]..o.u[g] + h * h], da, &c.h_prev);
                for (gb, v) in grad[o.b[g]..o.b[g] + h].iter_mut().zip(da.iter()) {
                    *gb += v;
                }
                matvec_t_acc(&params[o.u[g]..o.u[g] + h * h], da, &mut dh_prev);
            }
            dh_next = dh_prev;
        }
        dh_next
    }
}

/// Checked single GRU step.
pub fn gru_step(spec: &GruSpec, params: &ParamVector, hidden: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dim("gru hidden", spec.hidden_dim, hidden.len())?;
    check_dim("gru input", spec.input_dim, input.len())?;
    check_dim("gru parameters", spec.num_params(), params.len())?;
    Ok(spec.step(params.values(), hidden, input))
}

/// Gradient of `Σ_t upstream_t · h_t` for the recurrence started from a zero hidden state.
pub fn gru_sequence_grad(
    spec: &GruSpec,
    params: &ParamVector,
    inputs: &[Vec<f64>],
    upstreams: &[Vec<f64>],
) -> Result<ParamVector> {
    spec.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("gru input sequence"));
    }
    check_dim("gru upstream sequence", inputs.len(), upstreams.len())?;
    check_dim("gru parameters", spec.num_params(), params.len())?;
    for (x, u) in inputs.iter().zip(upstreams) {
        check_dim("gru input", spec.input_dim, x.len())?;
        check_dim("gru upstream", spec.hidden_dim, u.len())?;
    }
    let h0 = vec![0.0; spec.hidden_dim];
    let caches = spec.sequence_forward(params.values(), &h0, inputs);
    let mut g = params.zeros_like();
    spec.sequence_backward(params.values(), &caches, upstreams, g.values_mut());
    Ok(g)
}
