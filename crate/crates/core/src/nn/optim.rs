use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{check_dim, Error, Result};

/// One plain gradient-descent step, `θ − lr·g`.
pub fn sgd_step(params: &ParamVector, grad: &[f64], lr: f64) -> Result<ParamVector> {
    check_dim("sgd gradient", params.len(), grad.len())?;
    if !(lr > 0.0) {
        return Err(Error::Config(format!("sgd learning rate must be positive, got {lr}")));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("sgd gradient"));
    }
    let values = params.values().iter().zip(grad).map(|(p, g)| p - lr * g).collect();
    Ok(params.with_values(values))
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    #[serde(skip)]
    pub first_moment: Vec<f64>,
    #[serde(skip)]
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// In-place update. Rejects non-finite gradients without touching state.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("adam parameters", self.len(), params.len())?;
        check_dim("adam gradient", self.len(), grad.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam gradient"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &ParamVector, grad: &[f64]) -> Result<(AdamState, ParamVector)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step(p.values_mut(), grad)?;
    Ok((s, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Segment;

    fn scalar(v: f64) -> ParamVector {
        ParamVector::from_values(vec![Segment::new("x", &[1])], vec![v]).unwrap()
    }

    #[test]
    fn sgd_arithmetic() {
        let p = sgd_step(&scalar(1.0), &[2.0], 0.1).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(sgd_step(&scalar(1.0), &[0.0], 0.1).unwrap().values(), &[1.0]);
    }

    #[test]
    fn sgd_twice_equals_double_rate() {
        let p0 = ParamVector::from_values(vec![Segment::new("x", &[3])], vec![0.5, -1.0, 2.0]).unwrap();
        let g = [0.25, 1.0, -0.5];
        let twice = sgd_step(&sgd_step(&p0, &g, 0.125).unwrap(), &g, 0.125).unwrap();
        let once = sgd_step(&p0, &g, 0.25).unwrap();
        assert_eq!(twice.values(), once.values());
    }

    #[test]
    fn sgd_rejects_nan_and_bad_rate() {
        assert!(matches!(sgd_step(&scalar(1.0), &[f64::NAN], 0.1), Err(Error::NonFinite(_))));
        assert!(sgd_step(&scalar(1.0), &[1.0], 0.0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let st = AdamState::new(1, 0.001);
        let (st, p) = adam_step(&st, &scalar(0.0), &[1.0]).unwrap();
        assert!((p.values()[0] + 0.001).abs() < 1e-10);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_zero_grad_from_zero_moments_is_identity() {
        let (_, p) = adam_step(&AdamState::new(1, 0.01), &scalar(3.0), &[0.0]).unwrap();
        assert_eq!(p.values(), &[3.0]);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut st = AdamState::new(1, 0.01);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            st.step(&mut p, &[0.3]).unwrap();
            last = before - p[0];
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
        assert!(st.second_moment[0] >= 0.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut st = AdamState::new(1, 0.01);
        let mut p = vec![0.0];
        assert!(st.step(&mut p, &[f64::INFINITY]).is_err());
        assert_eq!(st.step_count, 0);
    }
}
