use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{matvec_acc, matvec_t_acc, outer_acc, xavier_fill, ParamVector, Segment};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense feed-forward network shape.
///
/// Layer `l` stores a row-major weight matrix `(out, in)` followed by its bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    /// One entry per layer (`hidden_dims.len() + 1`).
    pub activations: Vec<Activation>,
}

/// Post-activation values of every layer for one input, input included.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl MlpTrace {
    fn layer(&self, l: usize) -> &[f64] {
        &self.values[self.offsets[l]..self.offsets[l + 1]]
    }

    pub fn output(&self) -> &[f64] {
        self.layer(self.offsets.len() - 2)
    }
}

impl MlpSpec {
    /// Hidden layers share `hidden`, the output layer uses `output`.
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        hidden: Activation,
        output: Activation,
    ) -> Self {
        let mut activations = vec![hidden; hidden_dims.len()];
        activations.push(output);
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("MLP dimensions must be at least 1".into()));
        }
        if self.activations.len() != self.hidden_dims.len() + 1 {
            return Err(Error::Config(format!(
                "MLP needs {} activations, got {}",
                self.hidden_dims.len() + 1,
                self.activations.len()
            )));
        }
        Ok(())
    }

    /// `(in, out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn layout(&self) -> Vec<Segment> {
        self.layer_dims()
            .iter()
            .enumerate()
            .flat_map(|(l, &(i, o))| {
                [
                    Segment::new(format!("l{l}.weight"), &[o, i]),
                    Segment::new(format!("l{l}.bias"), &[o]),
                ]
            })
            .collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout());
        let v = p.values_mut();
        let mut off = 0;
        for (i, o) in self.layer_dims() {
            xavier_fill(&mut v[off..off + i * o], i, o, rng);
            off += i * o + o;
        }
        p
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let trace = self.forward_trace(params, input);
        trace.output().to_vec()
    }

    pub fn forward_trace(&self, params: &[f64], input: &[f64]) -> MlpTrace {
        assert_eq!(input.len(), self.input_dim, "MLP input length");
        assert_eq!(params.len(), self.num_params(), "MLP parameter length");
        let dims = self.layer_dims();
        let total = self.input_dim + dims.iter().map(|d| d.1).sum::<usize>();
        let mut values = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(dims.len() + 2);
        offsets.push(0);
        values.extend_from_slice(input);
        offsets.push(values.len());
        let mut poff = 0;
        for (l, &(i, o)) in dims.iter().enumerate() {
            let w = &params[poff..poff + i * o];
            let b = &params[poff + i * o..poff + i * o + o];
            poff += i * o + o;
            let start = values.len();
            values.extend_from_slice(b);
            let (prev, cur) = values.split_at_mut(start);
            matvec_acc(w, &prev[offsets[l]..offsets[l + 1]], cur);
            let act = self.activations[l];
            if act != Activation::Identity {
                for c in cur.iter_mut() {
                    *c = act.apply(*c);
                }
            }
            offsets.push(values.len());
        }
        MlpTrace { values, offsets }
    }

    /// Accumulates `∂(upstream·output)/∂params` into `grad` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, params: &[f64], trace: &MlpTrace, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), params.len(), "MLP gradient buffer length");
        self.backward_impl(params, trace, upstream, Some(grad))
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, params: &[f64], trace: &MlpTrace, upstream: &[f64]) -> Vec<f64> {
        self.backward_impl(params, trace, upstream, None)
    }

    fn backward_impl(&self, params: &[f64], trace: &MlpTrace, upstream: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim, "MLP upstream length");
        let dims = self.layer_dims();
        let mut offs = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offs.push(off);
            off += i * o + o;
        }
        let mut delta = upstream.to_vec();
        for l in (0..dims.len()).rev() {
            let (i, o) = dims[l];
            let act = self.activations[l];
            let y = trace.layer(l + 1);
            if act != Activation::Identity {
                for (d, &yv) in delta.iter_mut().zip(y) {
                    *d *= act.grad_from_output(yv);
                }
            }
            let x = trace.layer(l);
            let p0 = offs[l];
            if let Some(grad) = grad.as_deref_mut() {
                let (gw, gb) = grad[p0..p0 + i * o + o].split_at_mut(i * o);
                outer_acc(gw, &delta, x);
                for (g, d) in gb.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            let mut dx = vec![0.0; i];
            matvec_t_acc(&params[p0..p0 + i * o], &delta, &mut dx);
            delta = dx;
        }
        delta
    }
}

/// Checked single forward pass.
pub fn mlp_eval(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dim("mlp input", spec.input_dim, input.len())?;
    check_dim("mlp parameters", spec.num_params(), params.len())?;
    Ok(spec.forward(params.values(), input))
}

/// Checked gradient of `upstream · mlp(input)` with respect to parameters and input.
pub fn mlp_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    upstream: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    spec.validate()?;
    check_dim("mlp input", spec.input_dim, input.len())?;
    check_dim("mlp upstream", spec.output_dim, upstream.len())?;
    check_dim("mlp parameters", spec.num_params(), params.len())?;
    let trace = spec.forward_trace(params.values(), input);
    let mut g = params.zeros_like();
    let gx = spec.backward(params.values(), &trace, upstream, g.values_mut());
    Ok((g, gx))
}
