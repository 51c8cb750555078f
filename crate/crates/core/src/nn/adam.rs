use crate::autodiff::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AdamError {
    #[error("gradient set does not match the parameter structure (first bad entry: `{0}`)")]
    Structure(String),
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    /// Fresh state with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<(), AdamError> {
        if !params.same_structure(grads) || !params.same_structure(&self.m) {
            let bad = params
                .names()
                .find(|n| grads.get(n).map(Tensor::shape) != params.get(n).map(Tensor::shape))
                .unwrap_or("?")
                .to_string();
            return Err(AdamError::Structure(bad));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((name, p), (m, v)) in
            params.iter_mut().zip(self.m.iter_mut().map(|(_, m)| m).zip(self.v.iter_mut().map(|(_, v)| v)))
        {
            let g = grads.get(name).expect("structure checked");
            for (((pi, mi), vi), gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("theta", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = theta(0.7);
        let mut s = AdamState::new(&p, 0.1);
        s.step(&mut p, &theta(0.0)).unwrap();
        assert_eq!(p, theta(0.7));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 1e4] {
            let mut p = theta(0.0);
            let mut s = AdamState::new(&p, 0.05);
            s.step(&mut p, &theta(g)).unwrap();
            let moved = p.get("theta").unwrap().item();
            assert!((moved + 0.05 * f64::signum(g)).abs() < 1e-6, "{g}: {moved}");
        }
    }

    #[test]
    fn three_steps_on_half_square() {
        // hand-rolled recurrence for L = θ²/2, so g = θ
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut p = theta(1.0);
        let mut s = AdamState::new(&p, lr);
        for t in 1..=3 {
            let g = th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            th -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            let grad = theta(p.get("theta").unwrap().item());
            s.step(&mut p, &grad).unwrap();
        }
        assert_eq!(p.get("theta").unwrap().item(), th);
    }

    #[test]
    fn mismatched_structure_is_rejected() {
        let mut p = theta(1.0);
        let mut s = AdamState::new(&p, 0.1);
        let mut g = ParamSet::new();
        g.insert("other", Tensor::scalar(1.0));
        assert!(s.step(&mut p, &g).is_err());
    }
}
