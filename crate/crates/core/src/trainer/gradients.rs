//! Objective values and gradients with respect to policy logits.
//!
//! Every gradient here is an ascent direction for the regularized objective,
//! except [`matching_step_sft`], which returns the gradient of a loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::SoftmaxPolicy;
use crate::dist::{seeded_rng, Categorical, Sampler};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::targets::{TargetKind, TargetSpec};

/// Regularized objective being maximized.
pub type Objective = TargetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Batch mean of the coefficients, rescaled by `B / (B - 1)` so the
    /// estimator stays unbiased.
    #[default]
    BatchMean,
    LeaveOneOut,
}

impl Baseline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Baseline::None => "none",
            Baseline::BatchMean => "batch_mean",
            Baseline::LeaveOneOut => "leave_one_out",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Baseline::None),
            "batch_mean" | "mean" => Ok(Baseline::BatchMean),
            "leave_one_out" | "loo" => Ok(Baseline::LeaveOneOut),
            other => Err(Error::InvalidConfig(format!(
                "unknown baseline '{other}' (expected none, batch_mean or leave_one_out)"
            ))),
        }
    }
}

/// How the forward-KL regularizer gradient `β E_ref[∇ log π]` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardRegularizer {
    /// Full sum over the reference support.
    #[default]
    Exact,
    /// A batch drawn from the reference.
    Sampled,
}

/// Reference weights and rewards a policy is scored against. The weights
/// need not sum to one (reference-view augmentation changes them).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Landscape {
    pub ref_w: Vec<f64>,
    pub log_ref: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl Landscape {
    pub fn of(s: &Scenario) -> Self {
        Self {
            ref_w: s.reference.masses(),
            log_ref: s.reference.log_masses().to_vec(),
            rewards: s.rewards.values().to_vec(),
        }
    }

    pub fn from_weights(ref_w: Vec<f64>, rewards: Vec<f64>) -> Self {
        let log_ref = ref_w.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
        Self { ref_w, log_ref, rewards }
    }

    pub fn n(&self) -> usize {
        self.rewards.len()
    }

    fn check(&self, pi: &Categorical) -> Result<()> {
        if pi.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), found: pi.len() });
        }
        Ok(())
    }

    /// `π(y) (log π(y) - log ref(y))` summed; infinite outside the reference support.
    fn reverse_kl(&self, pi: &Categorical) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.n() {
            if pi.is_supported(k) {
                if self.log_ref[k] == f64::NEG_INFINITY {
                    return Err(Error::InfiniteDivergence { index: k });
                }
                total += pi.mass(k) * (pi.log_mass(k) - self.log_ref[k]);
            }
        }
        Ok(total)
    }

    fn forward_kl(&self, pi: &Categorical) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.n() {
            if self.ref_w[k] > 0.0 {
                if !pi.is_supported(k) {
                    return Err(Error::InfiniteDivergence { index: k });
                }
                total += self.ref_w[k] * (self.log_ref[k] - pi.log_mass(k));
            }
        }
        Ok(total)
    }

    pub fn objective(&self, pi: &Categorical, obj: &Objective) -> Result<f64> {
        self.check(pi)?;
        let reward: f64 = (0..self.n()).filter(|&k| pi.is_supported(k)).map(|k| pi.mass(k) * self.rewards[k]).sum();
        Ok(match obj.kind {
            TargetKind::ReverseKl => reward - obj.beta * self.reverse_kl(pi)?,
            TargetKind::ForwardKl => reward - obj.beta * self.forward_kl(pi)?,
            TargetKind::Generalized => {
                let kl = if obj.beta > 0.0 { obj.beta * self.reverse_kl(pi)? } else { 0.0 };
                reward - kl + obj.eta * crate::dist::entropy(pi)
            }
        })
    }

    pub fn gradient(&self, pi: &Categorical, obj: &Objective) -> Result<Vec<f64>> {
        self.check(pi)?;
        let n = self.n();
        match obj.kind {
            TargetKind::ReverseKl | TargetKind::Generalized => {
                let eta = if obj.kind == TargetKind::Generalized { obj.eta } else { 0.0 };
                let mut adv = vec![0.0; n];
                for k in 0..n {
                    if !pi.is_supported(k) {
                        continue;
                    }
                    let lp = pi.log_mass(k);
                    let mut a = self.rewards[k] - eta * lp;
                    if obj.beta > 0.0 {
                        if self.log_ref[k] == f64::NEG_INFINITY {
                            return Err(Error::InfiniteDivergence { index: k });
                        }
                        a -= obj.beta * (lp - self.log_ref[k]);
                    }
                    adv[k] = a;
                }
                let mean: f64 = (0..n).map(|k| pi.mass(k) * adv[k]).sum();
                Ok((0..n).map(|k| pi.mass(k) * (adv[k] - mean)).collect())
            }
            TargetKind::ForwardKl => {
                if let Some(k) = (0..n).find(|&k| self.ref_w[k] > 0.0 && !pi.is_supported(k)) {
                    return Err(Error::InfiniteDivergence { index: k });
                }
                let total_w: f64 = self.ref_w.iter().sum();
                let mean: f64 = (0..n).map(|k| pi.mass(k) * self.rewards[k]).sum();
                Ok((0..n)
                    .map(|k| {
                        let p = pi.mass(k);
                        p * (self.rewards[k] - mean) + obj.beta * (self.ref_w[k] - p * total_w)
                    })
                    .collect())
            }
        }
    }
}

/// `E_π[R]` minus the exact regularizer (plus the entropy bonus for the
/// generalized objective), summed over the full support.
pub fn exact_objective(policy: &SoftmaxPolicy, s: &Scenario, objective: &Objective) -> Result<f64> {
    objective.validate()?;
    Landscape::of(s).objective(&policy.distribution(), objective)
}

/// Analytic gradient of [`exact_objective`] with respect to the logits.
pub fn exact_gradient(policy: &SoftmaxPolicy, s: &Scenario, objective: &Objective) -> Result<Vec<f64>> {
    objective.validate()?;
    Landscape::of(s).gradient(&policy.distribution(), objective)
}

/// Score-function combination `Σ w_i (e_{y_i} - π)` with per-sample
/// coefficients adjusted by `baseline`.
pub(crate) fn score_estimate(pi: &Categorical, ys: &[usize], coeffs: &[f64], baseline: Baseline) -> Result<Vec<f64>> {
    let b = ys.len();
    if b == 0 {
        return Err(Error::Precondition("batch must be nonempty".into()));
    }
    if baseline != Baseline::None && b < 2 {
        return Err(Error::Precondition(format!("baseline {} needs a batch of at least 2", baseline.as_str())));
    }
    let weights: Vec<f64> = match baseline {
        Baseline::None => coeffs.iter().map(|c| c / b as f64).collect(),
        Baseline::BatchMean => {
            let mean = coeffs.iter().sum::<f64>() / b as f64;
            coeffs.iter().map(|c| (c - mean) / (b - 1) as f64).collect()
        }
        Baseline::LeaveOneOut => {
            let total: f64 = coeffs.iter().sum();
            coeffs.iter().map(|c| (c - (total - c) / (b - 1) as f64) / b as f64).collect()
        }
    };
    let mut g = vec![0.0; pi.len()];
    for (&y, &w) in ys.iter().zip(&weights) {
        g[y] += w;
    }
    let wsum: f64 = weights.iter().sum();
    for (k, gk) in g.iter_mut().enumerate() {
        *gk -= wsum * pi.mass(k);
    }
    Ok(g)
}

/// Reverse-KL (or generalized) estimator from an already drawn batch with
/// per-sample rewards and reference log-probabilities.
pub(crate) fn reverse_batch_gradient(
    pi: &Categorical,
    ys: &[usize],
    rewards: &[f64],
    ref_logprobs: &[f64],
    beta: f64,
    eta: f64,
    baseline: Baseline,
) -> Result<Vec<f64>> {
    let mut coeffs = Vec::with_capacity(ys.len());
    for (i, &y) in ys.iter().enumerate() {
        let lp = pi.log_mass(y);
        let mut c = rewards[i] - eta * lp;
        if beta > 0.0 {
            if ref_logprobs[i] == f64::NEG_INFINITY {
                return Err(Error::InfiniteDivergence { index: y });
            }
            c -= beta * (lp - ref_logprobs[i]);
        }
        coeffs.push(c);
    }
    score_estimate(pi, ys, &coeffs, baseline)
}

/// Forward-KL estimator: sampled reward term plus the regularizer term
/// `β (w - π Σw)`, exact or estimated from reference samples.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_batch_gradient<R: Rng + ?Sized>(
    pi: &Categorical,
    ys: &[usize],
    rewards: &[f64],
    ref_w: &[f64],
    beta: f64,
    baseline: Baseline,
    regularizer: ForwardRegularizer,
    ref_rng: &mut R,
) -> Result<Vec<f64>> {
    let mut g = score_estimate(pi, ys, rewards, baseline)?;
    if beta == 0.0 {
        return Ok(g);
    }
    let total_w: f64 = ref_w.iter().sum();
    match regularizer {
        ForwardRegularizer::Exact => {
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += beta * (ref_w[k] - pi.mass(k) * total_w);
            }
        }
        ForwardRegularizer::Sampled => {
            let reference = Categorical::from_masses(ref_w)?;
            let draws = Sampler::new(&reference).draw_many(ref_rng, ys.len());
            let ones = vec![1.0; draws.len()];
            let reg = score_estimate(pi, &draws, &ones, Baseline::None)?;
            for (gk, rk) in g.iter_mut().zip(reg) {
                *gk += beta * total_w * rk;
            }
        }
    }
    Ok(g)
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::Precondition("batch must be at least 1".into()));
    }
    Ok(())
}

/// Score-function estimate of the reverse-KL objective gradient from `batch`
/// policy samples.
pub fn mc_gradient_reverse(
    policy: &SoftmaxPolicy,
    s: &Scenario,
    beta: f64,
    batch: usize,
    baseline: Baseline,
    seed: u64,
) -> Result<Vec<f64>> {
    crate::targets::TargetSpec::reverse(beta).validate()?;
    check_batch(batch)?;
    let pi = policy.distribution();
    let ys = Sampler::new(&pi).draw_many(&mut seeded_rng(seed, 0), batch);
    let rewards: Vec<f64> = ys.iter().map(|&y| s.reward(y)).collect();
    let lrefs: Vec<f64> = ys.iter().map(|&y| s.ref_log_prob(y)).collect();
    reverse_batch_gradient(&pi, &ys, &rewards, &lrefs, beta, 0.0, baseline)
}

/// Forward-KL estimate: plain REINFORCE reward term plus the exact
/// regularizer term `β (π_ref - π)`.
pub fn mc_gradient_forward(policy: &SoftmaxPolicy, s: &Scenario, beta: f64, batch: usize, seed: u64) -> Result<Vec<f64>> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidCoefficient(format!("beta must be >= 0, got {beta}")));
    }
    check_batch(batch)?;
    let pi = policy.distribution();
    let mut rng = seeded_rng(seed, 0);
    let ys = Sampler::new(&pi).draw_many(&mut rng, batch);
    let rewards: Vec<f64> = ys.iter().map(|&y| s.reward(y)).collect();
    let w = s.reference.masses();
    forward_batch_gradient(&pi, &ys, &rewards, &w, beta, Baseline::None, ForwardRegularizer::Exact, &mut rng)
}

/// Maximum-likelihood step toward `target`: the gradient of
/// `-mean log π(y)` over `batch` draws from the target.
pub fn matching_step_sft(policy: &SoftmaxPolicy, target: &Categorical, batch: usize, seed: u64) -> Result<Vec<f64>> {
    check_batch(batch)?;
    if target.len() != policy.len() {
        return Err(Error::LengthMismatch { expected: policy.len(), found: target.len() });
    }
    let pi = policy.distribution();
    let ys = Sampler::new(target).draw_many(&mut seeded_rng(seed, 0), batch);
    if let Some(&y) = ys.iter().find(|&&y| !pi.is_supported(y)) {
        return Err(Error::InfiniteDivergence { index: y });
    }
    let ones = vec![-1.0; batch];
    score_estimate(&pi, &ys, &ones, Baseline::None)
}
