use serde::{Deserialize, Serialize};

use crate::dist::{normalize, Categorical};
use crate::error::{Error, Result};

/// Softmax policy over a fixed set of active indices.
///
/// Inactive indices carry probability zero; their logits stay at 0 and are
/// never updated. This is how reverse-KL policies are kept inside the
/// reference support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    logits: Vec<f64>,
    active: Vec<bool>,
}

impl SoftmaxPolicy {
    /// All-zero logits over the full index set.
    pub fn zeros(n: usize) -> Self {
        Self { logits: vec![0.0; n], active: vec![true; n] }
    }

    /// All-zero logits restricted to `active`.
    pub fn zeros_on(active: &[bool]) -> Result<Self> {
        if !active.iter().any(|&a| a) {
            return Err(Error::InvalidDistribution("policy has no active index".into()));
        }
        Ok(Self { logits: vec![0.0; active.len()], active: active.to_vec() })
    }

    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let n = logits.len();
        Self::from_parts(logits, vec![true; n])
    }

    pub fn from_parts(logits: Vec<f64>, active: Vec<bool>) -> Result<Self> {
        if logits.len() != active.len() {
            return Err(Error::LengthMismatch { expected: active.len(), found: logits.len() });
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::InvalidDistribution(format!("logit {i} is not finite")));
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::InvalidDistribution("policy has no active index".into()));
        }
        Ok(Self { logits, active })
    }

    /// The policy whose softmax equals `p`; zero-mass indices become inactive.
    pub fn from_distribution(p: &Categorical) -> Self {
        let active = p.support_mask().to_vec();
        let logits = p
            .log_masses()
            .iter()
            .map(|&l| if l.is_finite() { l } else { 0.0 })
            .collect();
        Self { logits, active }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn distribution(&self) -> Categorical {
        let masked: Vec<f64> = self
            .logits
            .iter()
            .zip(&self.active)
            .map(|(&l, &a)| if a { l } else { f64::NEG_INFINITY })
            .collect();
        normalize(&masked).expect("finite logits with an active index always normalize")
    }
}
