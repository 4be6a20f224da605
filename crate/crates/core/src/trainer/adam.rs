use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "adam moments must lie in [0, 1) and eps must be > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Parameters plus first and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        Self { params, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }
}

/// One bias-corrected Adam descent step on `gradient`.
///
/// A non-finite gradient leaves the state untouched.
pub fn adam_step(state: &mut AdamState, gradient: &[f64], lr: f64, adam: &AdamParams) -> Result<()> {
    if gradient.len() != state.params.len() {
        return Err(Error::LengthMismatch { expected: state.params.len(), found: gradient.len() });
    }
    if let Some(index) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.t += 1;
    let c1 = 1.0 - adam.beta1.powi(state.t as i32);
    let c2 = 1.0 - adam.beta2.powi(state.t as i32);
    for (k, &g) in gradient.iter().enumerate() {
        state.m[k] = adam.beta1 * state.m[k] + (1.0 - adam.beta1) * g;
        state.v[k] = adam.beta2 * state.v[k] + (1.0 - adam.beta2) * g * g;
        let mh = state.m[k] / c1;
        let vh = state.v[k] / c2;
        state.params[k] -= lr * mh / (vh.sqrt() + adam.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(vec![1.0, -2.0]);
        adam_step(&mut s, &[0.0, 0.0], 5e-3, &AdamParams::default()).unwrap();
        assert_eq!(s.params, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut s = AdamState::new(vec![0.0, 0.0]);
        let lr = 1e-2;
        let mut prev = s.params.clone();
        for _ in 0..200 {
            adam_step(&mut s, &[3.0, -0.01], lr, &AdamParams::default()).unwrap();
            let d0 = prev[0] - s.params[0];
            let d1 = prev[1] - s.params[1];
            assert!((d0 - lr).abs() < 1e-6 * lr * 100.0);
            assert!((d1 + lr).abs() < 1e-4);
            prev = s.params.clone();
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::new(vec![0.5; 3]);
            for t in 0..50 {
                let g: Vec<f64> = (0..3).map(|k| ((t * 7 + k) as f64).sin()).collect();
                adam_step(&mut s, &g, 5e-3, &AdamParams::default()).unwrap();
            }
            s.params
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn non_finite_gradient_halts() {
        let mut s = AdamState::new(vec![0.0; 3]);
        let err = adam_step(&mut s, &[0.0, f64::NAN, 1.0], 1e-3, &AdamParams::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(s.steps_taken(), 0);
        assert!(adam_step(&mut s, &[0.0], 1e-3, &AdamParams::default()).is_err());
    }
}
