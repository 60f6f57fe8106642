//! Minimal differentiable kernel: flat parameter storage, dense MLPs and GRU
//! cells with hand-written backward passes, optimizers, and a central
//! finite-difference verifier.
//!
//! Everything works on `f64` slices. Gradients are accumulated into
//! caller-provided buffers so batch loops do not allocate per sample.

mod gradcheck;
mod gru;
mod mlp;
mod optim;
mod params;

pub use gradcheck::{central_difference, finite_diff_check, FiniteDiff, GradCheckReport};
pub use gru::{gru_sequence_grad, gru_step, GruSpec, GruStepCache};
pub use mlp::{mlp_eval, mlp_grad, Activation, MlpSpec, MlpTrace};
pub use optim::{adam_step, sgd_step, AdamState};
pub use params::{ParamVector, Segment};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Glorot-uniform fill: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn xavier_fill<R: Rng + ?Sized>(out: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    for w in out {
        *w = dist.sample(rng);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Smoothly squashes `x` into `(lo, hi)`; returns the value and `d/dx`.
///
/// `hi - softplus(hi - x)` bounds from above, then `lo + softplus(y - lo)`
/// bounds from below. The second stage can overshoot `hi` by at most
/// `ln(1 + e^(lo - hi))` far above the interval, which the final clamp removes.
#[inline]
pub fn soft_clamp(x: f64, lo: f64, hi: f64) -> (f64, f64) {
    let a = hi - x;
    let y = hi - softplus(a);
    let dy = sigmoid(a);
    let b = y - lo;
    let out = lo + softplus(b);
    if out >= hi {
        return (hi, 0.0);
    }
    (out, sigmoid(b) * dy)
}

/// `y += A x` for row-major `A` with shape `(y.len(), x.len())`.
#[inline]
pub(crate) fn matvec_acc(a: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(a.len(), n * y.len());
    for (row, yi) in a.chunks_exact(n).zip(y.iter_mut()) {
        let mut s = 0.0;
        for (w, xv) in row.iter().zip(x) {
            s += w * xv;
        }
        *yi += s;
    }
}

/// `x += Aᵀ d` for row-major `A` with shape `(d.len(), x.len())`.
#[inline]
pub(crate) fn matvec_t_acc(a: &[f64], d: &[f64], x: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(a.len(), n * d.len());
    for (row, &di) in a.chunks_exact(n).zip(d) {
        if di == 0.0 {
            continue;
        }
        for (xv, w) in x.iter_mut().zip(row) {
            *xv += w * di;
        }
    }
}

/// `G += d xᵀ` for row-major `G` with shape `(d.len(), x.len())`.
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let n = x.len();
    debug_assert_eq!(g.len(), n * d.len());
    for (row, &di) in g.chunks_exact_mut(n).zip(d) {
        if di == 0.0 {
            continue;
        }
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += di * xv;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
