//! Exact optima of the regularized reward objectives and the log-ratio algebra
//! that predicts their mode structure.
//!
//! * reverse KL, `E_π[R] - β KL(π || π_ref)`: `G(y) ∝ π_ref(y) exp(R(y)/β)`
//! * reverse KL plus entropy bonus `η H(π)`:
//!   `G(y) ∝ π_ref(y)^{β/(β+η)} exp(R(y)/(β+η))`
//! * forward KL, `E_π[R] - β KL(π_ref || π)`: `G(y) = β π_ref(y) / (Λ - R(y))`
//!   with `Λ` fixed by normalization.

use serde::{Deserialize, Serialize};

use crate::dist::{normalize, Categorical};
use crate::error::{Error, FlipFailure, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    ReverseKl,
    ForwardKl,
    Generalized,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::ReverseKl => "reverse",
            TargetKind::ForwardKl => "forward",
            TargetKind::Generalized => "generalized",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse" | "reverse_kl" => Ok(TargetKind::ReverseKl),
            "forward" | "forward_kl" => Ok(TargetKind::ForwardKl),
            "generalized" => Ok(TargetKind::Generalized),
            other => Err(Error::InvalidConfig(format!(
                "unknown objective kind '{other}' (expected reverse, forward or generalized)"
            ))),
        }
    }
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A regularizer choice and its coefficients; identifies one analytic optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub beta: f64,
    #[serde(default)]
    pub eta: f64,
}

impl TargetSpec {
    pub fn reverse(beta: f64) -> Self {
        Self { kind: TargetKind::ReverseKl, beta, eta: 0.0 }
    }

    pub fn forward(beta: f64) -> Self {
        Self { kind: TargetKind::ForwardKl, beta, eta: 0.0 }
    }

    pub fn generalized(beta: f64, eta: f64) -> Self {
        Self { kind: TargetKind::Generalized, beta, eta }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TargetKind::ReverseKl | TargetKind::ForwardKl => check_beta(self.beta),
            TargetKind::Generalized => check_beta_eta(self.beta, self.eta),
        }
    }

    pub fn target(&self, s: &Scenario) -> Result<Categorical> {
        match self.kind {
            TargetKind::ReverseKl => reverse_kl_target(s, self.beta),
            TargetKind::ForwardKl => Ok(forward_kl_target(s, self.beta)?.distribution),
            TargetKind::Generalized => generalized_target(s, self.beta, self.eta),
        }
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidCoefficient(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

pub(crate) fn check_beta_eta(beta: f64, eta: f64) -> Result<()> {
    if !(beta.is_finite() && eta.is_finite() && beta >= 0.0 && eta >= 0.0) {
        return Err(Error::InvalidCoefficient(format!(
            "beta and eta must be finite and >= 0, got beta = {beta}, eta = {eta}"
        )));
    }
    if beta + eta <= 0.0 {
        return Err(Error::InvalidCoefficient(format!(
            "beta + eta must be > 0, got beta = {beta}, eta = {eta}"
        )));
    }
    Ok(())
}

/// `normalize(log π_ref + R/β)`; off-support entries stay masked.
pub fn reverse_kl_target(s: &Scenario, beta: f64) -> Result<Categorical> {
    check_beta(beta)?;
    let logs: Vec<f64> = (0..s.n()).map(|i| s.ref_log_prob(i) + s.reward(i) / beta).collect();
    normalize(&logs)
}

/// Optimum of the reverse-KL plus entropy objective.
///
/// At `beta = 0` the reference enters as `π_ref^0 = 1` everywhere, including
/// off-support entries, so the result is `softmax(R/η)` over the full support.
pub fn generalized_target(s: &Scenario, beta: f64, eta: f64) -> Result<Categorical> {
    check_beta_eta(beta, eta)?;
    if beta == 0.0 {
        let logs: Vec<f64> = (0..s.n()).map(|i| s.reward(i) / eta).collect();
        return normalize(&logs);
    }
    let temp = beta + eta;
    let power = beta / temp;
    let logs: Vec<f64> = (0..s.n()).map(|i| power * s.ref_log_prob(i) + s.reward(i) / temp).collect();
    normalize(&logs)
}

/// Forward-KL optimum together with its normalization multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSolution {
    pub distribution: Categorical,
    pub lambda: f64,
    pub off_support_mass: f64,
    pub boundary_case: bool,
}

const Z_TOL: f64 = 1e-12;
const MAX_EXPANSIONS: usize = 200;
const MAX_BISECTIONS: usize = 4000;

/// `Z(Λ) = Σ β w(y) / (Λ - R(y))` over the on-support entries.
fn normalizer(lambda: f64, on: &[(f64, f64)], beta: f64) -> f64 {
    on.iter().map(|&(w, r)| beta * w / (lambda - r)).sum()
}

/// Solves the forward-KL optimum for reference weights `weights` (zero means
/// off-support; the weights need not sum to one).
pub fn solve_forward(weights: &[f64], rewards: &[f64], beta: f64) -> Result<ForwardSolution> {
    check_beta(beta)?;
    if weights.len() != rewards.len() {
        return Err(Error::LengthMismatch { expected: weights.len(), found: rewards.len() });
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidDistribution(format!("reward at index {i} is not finite")));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidDistribution("reference weights must be finite and >= 0".into()));
    }
    let on: Vec<(f64, f64)> = weights
        .iter()
        .zip(rewards)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &r)| (w, r))
        .collect();
    if on.is_empty() {
        return Err(Error::InvalidDistribution("reference has no support".into()));
    }
    let max_in = on.iter().map(|&(_, r)| r).fold(f64::NEG_INFINITY, f64::max);
    let max_out = weights
        .iter()
        .zip(rewards)
        .filter(|(&w, _)| w == 0.0)
        .map(|(_, &r)| r)
        .fold(f64::NEG_INFINITY, f64::max);

    let masses_for = |lambda: f64| -> Vec<f64> {
        weights
            .iter()
            .zip(rewards)
            .map(|(&w, &r)| if w > 0.0 { beta * w / (lambda - r) } else { 0.0 })
            .collect()
    };

    if max_out > max_in {
        let z_out = normalizer(max_out, &on, beta);
        if z_out < 1.0 {
            let argmax_out: Vec<usize> = (0..weights.len())
                .filter(|&i| weights[i] == 0.0 && rewards[i] == max_out)
                .collect();
            let leftover = 1.0 - z_out;
            let share = leftover / argmax_out.len() as f64;
            let mut masses = masses_for(max_out);
            for &i in &argmax_out {
                masses[i] = share;
            }
            return Ok(ForwardSolution {
                distribution: Categorical::from_masses(&masses)?,
                lambda: max_out,
                off_support_mass: leftover,
                boundary_case: true,
            });
        }
        if z_out == 1.0 {
            return Ok(ForwardSolution {
                distribution: Categorical::from_masses(&masses_for(max_out))?,
                lambda: max_out,
                off_support_mass: 0.0,
                boundary_case: false,
            });
        }
        let lambda = bisect_lambda(&on, beta, max_out, Some(max_out))?;
        return Ok(ForwardSolution {
            distribution: Categorical::from_masses(&masses_for(lambda))?,
            lambda,
            off_support_mass: 0.0,
            boundary_case: false,
        });
    }

    let lambda = bisect_lambda(&on, beta, max_in, None)?;
    Ok(ForwardSolution {
        distribution: Categorical::from_masses(&masses_for(lambda))?,
        lambda,
        off_support_mass: 0.0,
        boundary_case: false,
    })
}

/// Bisection on the decreasing map `Λ ↦ Z(Λ)` over `(floor, ∞)`. With
/// `lower = Some(x)` the bracket starts at `x` itself (known `Z(x) > 1`).
fn bisect_lambda(on: &[(f64, f64)], beta: f64, floor: f64, lower: Option<f64>) -> Result<f64> {
    let total: f64 = on.iter().map(|&(w, _)| w).sum();
    let w_min = on.iter().map(|&(w, _)| w).fold(f64::INFINITY, f64::min);
    let n = on.len() as f64;

    let mut lo = match lower {
        Some(x) => x,
        None => {
            let mut eps = 1e-12 * floor.abs().max(1.0);
            let mut lo = floor + eps;
            let mut tries = 0;
            while normalizer(lo, on, beta) < 1.0 {
                eps *= 0.5;
                lo = floor + eps;
                tries += 1;
                if lo <= floor || tries > MAX_EXPANSIONS {
                    return Err(Error::SolverFailure(format!(
                        "could not bracket the root from below near {floor}"
                    )));
                }
            }
            lo
        }
    };
    let mut span = beta * n * total / w_min + 1.0;
    let mut hi = floor + span;
    let mut tries = 0;
    while normalizer(hi, on, beta) > 1.0 {
        span *= 2.0;
        hi = floor + span;
        tries += 1;
        if tries > MAX_EXPANSIONS || !hi.is_finite() {
            return Err(Error::SolverFailure("could not bracket the root from above".into()));
        }
    }

    for _ in 0..MAX_BISECTIONS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let z = normalizer(mid, on, beta);
        if (z - 1.0).abs() <= Z_TOL {
            return Ok(mid);
        }
        if z > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // bracket collapsed to adjacent floats; keep the better end
    let (zl, zh) = (normalizer(lo, on, beta), normalizer(hi, on, beta));
    let best = if (zl - 1.0).abs() <= (zh - 1.0).abs() { lo } else { hi };
    if lower.is_none() && best <= floor {
        return Err(Error::SolverFailure("root collapsed onto the reward maximum".into()));
    }
    Ok(best)
}

/// Forward-KL optimum for a scenario.
pub fn forward_kl_target(s: &Scenario, beta: f64) -> Result<ForwardSolution> {
    solve_forward(&s.reference.masses(), s.rewards.values(), beta)
}

/// Spread (max - min) of `R(y) + β π_ref(y) / G(y)` over on-support entries.
/// Zero at an exact interior forward-KL optimum.
pub fn forward_stationarity_residual(s: &Scenario, beta: f64, g: &Categorical) -> f64 {
    let values: Vec<f64> = (0..s.n())
        .filter(|&i| s.reference.is_supported(i))
        .map(|i| s.reward(i) + beta * s.reference.mass(i) / g.mass(i))
        .collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn check_supported(s: &Scenario, i: usize) -> Result<()> {
    if i >= s.n() {
        return Err(Error::Precondition(format!("index {i} out of range for n = {}", s.n())));
    }
    if !s.reference.is_supported(i) {
        return Err(Error::UndefinedRatio { index: i });
    }
    Ok(())
}

/// `log G(i) - log G(j)` for the reverse-KL target, from the reference and
/// rewards alone: the normalizer cancels.
pub fn log_prob_ratio(s: &Scenario, beta: f64, i: usize, j: usize) -> Result<f64> {
    check_beta(beta)?;
    check_supported(s, i)?;
    check_supported(s, j)?;
    let ref_term = s.ref_log_prob(i) - s.ref_log_prob(j);
    let reward_term = (s.reward(i) - s.reward(j)) / beta;
    Ok(ref_term + reward_term)
}

/// The unique `β* > 0` at which samples `i` and `j` share target probability.
pub fn flip_beta(s: &Scenario, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::NoFiniteFlip(FlipFailure::SameIndex));
    }
    check_supported(s, i)?;
    check_supported(s, j)?;
    let ref_gap = s.ref_log_prob(i) - s.ref_log_prob(j);
    if ref_gap == 0.0 {
        return Err(Error::NoFiniteFlip(FlipFailure::EqualReference));
    }
    let beta = (s.reward(j) - s.reward(i)) / ref_gap;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::NoFiniteFlip(FlipFailure::NonPositive));
    }
    Ok(beta)
}
