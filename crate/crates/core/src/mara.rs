//! Mode anchored reward augmentation.
//!
//! Within a batch, every sample whose reward reaches the threshold `τ` is
//! re-scored relative to an anchor `z` (the qualifying sample with the highest
//! reference probability):
//!
//! ```text
//! r̄(y) = R(z) + β (log π_ref(z) - log π_ref(y))     if R(y) ≥ τ
//! r̄(y) = R(y)                                        otherwise
//! ```
//!
//! The reference-view variant keeps `r̄ = R(z)` and substitutes `π_ref(z)` for
//! the sample's own reference probability. Under reverse-KL regularization
//! both produce the same per-sample gradient coefficient.

use serde::{Deserialize, Serialize};

use crate::dist::{normalize, Categorical};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::targets::{check_beta, solve_forward, ForwardSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Constant(f64),
    /// Empirical q-quantile of the raw batch rewards, linear interpolation.
    BatchPercentile(f64),
}

impl ThresholdRule {
    pub fn describe(&self) -> String {
        match self {
            ThresholdRule::Constant(t) => format!("const:{t}"),
            ThresholdRule::BatchPercentile(q) => format!("pct:{q}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorTiebreak {
    #[default]
    LowestIndex,
    HighestReward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaraConfig {
    pub threshold: ThresholdRule,
    pub beta: f64,
    #[serde(default)]
    pub tiebreak: AnchorTiebreak,
}

impl MaraConfig {
    pub fn constant(tau: f64, beta: f64) -> Self {
        Self { threshold: ThresholdRule::Constant(tau), beta, tiebreak: AnchorTiebreak::LowestIndex }
    }

    pub fn percentile(q: f64, beta: f64) -> Self {
        Self { threshold: ThresholdRule::BatchPercentile(q), beta, tiebreak: AnchorTiebreak::LowestIndex }
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        match self.threshold {
            ThresholdRule::Constant(t) if !t.is_finite() => {
                Err(Error::InvalidConfig(format!("threshold must be finite, got {t}")))
            }
            ThresholdRule::BatchPercentile(q) if !(q > 0.0 && q < 1.0) => {
                Err(Error::InvalidConfig(format!("percentile must lie in (0, 1), got {q}")))
            }
            _ => Ok(()),
        }
    }

    /// Checks the constant threshold against the scenario's best reward.
    pub fn validate_for(&self, s: &Scenario) -> Result<()> {
        self.validate()?;
        if let ThresholdRule::Constant(t) = self.threshold {
            if t > s.rewards.max() {
                return Err(Error::InvalidConfig(format!(
                    "threshold {t} exceeds the maximum reward {} of scenario {}",
                    s.rewards.max(),
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Resolves the threshold for a batch of raw rewards.
    pub fn resolve_threshold(&self, raw_rewards: &[f64]) -> f64 {
        match self.threshold {
            ThresholdRule::Constant(t) => t,
            ThresholdRule::BatchPercentile(q) => quantile_linear(raw_rewards, q),
        }
    }
}

/// Linear-interpolation quantile of `values` (sorted copy), `q ∈ [0, 1]`.
pub fn quantile_linear(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty batch");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A sampled batch after augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedBatch {
    pub indices: Vec<usize>,
    pub raw_rewards: Vec<f64>,
    pub augmented_rewards: Vec<f64>,
    /// Batch position of the anchor.
    pub anchor_position: Option<usize>,
    pub threshold_used: f64,
    /// Reference log-probabilities to use downstream, one per sample.
    pub augmented_ref_logprobs: Vec<f64>,
}

impl AugmentedBatch {
    /// Support index of the anchor sample.
    pub fn anchor_index(&self) -> Option<usize> {
        self.anchor_position.map(|p| self.indices[p])
    }

    pub fn qualifies(&self, position: usize) -> bool {
        self.raw_rewards[position] >= self.threshold_used
    }
}

/// Batch position of the qualifying sample with the highest reference
/// probability, or `None` when no sample reaches `threshold`.
///
/// Samples outside the reference support are never anchors.
pub fn select_anchor(
    batch_indices: &[usize],
    s: &Scenario,
    threshold: f64,
    tiebreak: AnchorTiebreak,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (pos, &y) in batch_indices.iter().enumerate() {
        if s.reward(y) < threshold || !s.reference.is_supported(y) {
            continue;
        }
        best = match best {
            None => Some(pos),
            Some(b) => {
                let (lb, ly) = (s.ref_log_prob(batch_indices[b]), s.ref_log_prob(y));
                let better = if ly != lb {
                    ly > lb
                } else {
                    match tiebreak {
                        AnchorTiebreak::LowestIndex => false,
                        AnchorTiebreak::HighestReward => s.reward(y) > s.reward(batch_indices[b]),
                    }
                };
                if better {
                    Some(pos)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

fn unchanged(batch: &[usize], s: &Scenario, threshold: f64) -> AugmentedBatch {
    let raw: Vec<f64> = batch.iter().map(|&y| s.reward(y)).collect();
    AugmentedBatch {
        indices: batch.to_vec(),
        augmented_rewards: raw.clone(),
        raw_rewards: raw,
        anchor_position: None,
        threshold_used: threshold,
        augmented_ref_logprobs: batch.iter().map(|&y| s.ref_log_prob(y)).collect(),
    }
}

fn prepare(batch: &[usize], s: &Scenario, cfg: &MaraConfig) -> (AugmentedBatch, Option<usize>) {
    let raw: Vec<f64> = batch.iter().map(|&y| s.reward(y)).collect();
    let threshold = cfg.resolve_threshold(&raw);
    let anchor = select_anchor(batch, s, threshold, cfg.tiebreak);
    let mut out = unchanged(batch, s, threshold);
    out.anchor_position = anchor;
    (out, anchor)
}

/// Reward-side augmentation: qualifying samples get
/// `R(z) + β (log π_ref(z) - log π_ref(y))`, reference log-probs unchanged.
///
/// Qualifying samples outside the reference support keep their raw reward
/// (their augmented reward would be infinite).
pub fn augment_rewards(batch: &[usize], s: &Scenario, cfg: &MaraConfig) -> AugmentedBatch {
    let (mut out, anchor) = prepare(batch, s, cfg);
    let Some(a) = anchor else { return out };
    let z = batch[a];
    let (rz, lz) = (s.reward(z), s.ref_log_prob(z));
    for (pos, &y) in batch.iter().enumerate() {
        if out.qualifies(pos) && s.reference.is_supported(y) {
            out.augmented_rewards[pos] = rz + cfg.beta * (lz - s.ref_log_prob(y));
        }
    }
    out
}

/// Reference-side augmentation: qualifying samples get reward `R(z)` and
/// reference log-prob `log π_ref(z)`.
pub fn augment_ref_view(batch: &[usize], s: &Scenario, cfg: &MaraConfig) -> AugmentedBatch {
    let (mut out, anchor) = prepare(batch, s, cfg);
    let Some(a) = anchor else { return out };
    let z = batch[a];
    let (rz, lz) = (s.reward(z), s.ref_log_prob(z));
    for pos in 0..batch.len() {
        if out.qualifies(pos) {
            out.augmented_rewards[pos] = rz;
            out.augmented_ref_logprobs[pos] = lz;
        }
    }
    out
}

/// Anchor over the whole support: the highest-reference index with `R ≥ τ`.
pub fn global_anchor(s: &Scenario, tau: f64, tiebreak: AnchorTiebreak) -> Option<usize> {
    let all: Vec<usize> = (0..s.n()).collect();
    select_anchor(&all, s, tau, tiebreak)
}

fn check_anchor(s: &Scenario, tau: f64, anchor: usize) -> Result<()> {
    if anchor >= s.n() {
        return Err(Error::InvalidAnchor(format!("index {anchor} out of range")));
    }
    if s.reward(anchor) < tau {
        return Err(Error::InvalidAnchor(format!(
            "anchor {anchor} has reward {} below threshold {tau}",
            s.reward(anchor)
        )));
    }
    if !s.reference.is_supported(anchor) {
        return Err(Error::InvalidAnchor(format!("anchor {anchor} has zero reference mass")));
    }
    Ok(())
}

/// Full-support augmented reward vector for a fixed anchor. Off-support
/// entries keep their raw reward.
pub fn augmented_reward_vector(s: &Scenario, beta: f64, tau: f64, anchor: usize) -> Result<Vec<f64>> {
    check_beta(beta)?;
    check_anchor(s, tau, anchor)?;
    let (rz, lz) = (s.reward(anchor), s.ref_log_prob(anchor));
    Ok((0..s.n())
        .map(|y| {
            if s.reward(y) >= tau && s.reference.is_supported(y) {
                rz + beta * (lz - s.ref_log_prob(y))
            } else {
                s.reward(y)
            }
        })
        .collect())
}

/// Reverse-KL optimum under augmented rewards with a fixed anchor: every
/// on-support index with `R ≥ τ` shares the log-mass `log π_ref(z) + R(z)/β`.
pub fn mara_target(s: &Scenario, beta: f64, tau: f64, anchor: usize) -> Result<Categorical> {
    check_beta(beta)?;
    check_anchor(s, tau, anchor)?;
    let anchored = s.ref_log_prob(anchor) + s.reward(anchor) / beta;
    let logs: Vec<f64> = (0..s.n())
        .map(|y| {
            if !s.reference.is_supported(y) {
                f64::NEG_INFINITY
            } else if s.reward(y) >= tau {
                anchored
            } else {
                s.ref_log_prob(y) + s.reward(y) / beta
            }
        })
        .collect();
    normalize(&logs)
}

/// Reference weights and rewards after reference-side augmentation with a
/// fixed anchor. The weights are unnormalized.
pub fn ref_view_vectors(s: &Scenario, tau: f64, anchor: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_anchor(s, tau, anchor)?;
    let (rz, pz) = (s.reward(anchor), s.reference.mass(anchor));
    let mut weights = s.reference.masses();
    let mut rewards = s.rewards.values().to_vec();
    for y in 0..s.n() {
        if s.reward(y) >= tau {
            weights[y] = pz;
            rewards[y] = rz;
        }
    }
    Ok((weights, rewards))
}

/// Forward-KL optimum under reference-side augmentation with a fixed anchor.
/// All indices with `R ≥ τ` receive `β π_ref(z) / (Λ - R(z))`.
pub fn mara_forward_target(s: &Scenario, beta: f64, tau: f64, anchor: usize) -> Result<ForwardSolution> {
    let (weights, rewards) = ref_view_vectors(s, tau, anchor)?;
    solve_forward(&weights, &rewards, beta)
}

/// Reverse-KL score-function coefficient `r - β (log π(y) - log p_ref)`.
pub fn reverse_coefficient(reward: f64, beta: f64, policy_logprob: f64, ref_logprob: f64) -> f64 {
    reward - beta * (policy_logprob - ref_logprob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::seeded_rng;
    use crate::targets::reverse_kl_target;
    use proptest::prelude::*;
    use rand::Rng;

    /// Support of three tokens whose log reference masses are -2, -5, -3
    /// (up to the constant normalization shift, which cancels everywhere).
    fn toy() -> Scenario {
        let w = [(-2f64).exp(), (-5f64).exp(), (-3f64).exp()];
        Scenario::from_parts("toy", &w, &[1.0, 1.0, 0.2]).unwrap()
    }

    #[test]
    fn anchor_examples() {
        let s = toy();
        assert_eq!(select_anchor(&[0, 1, 2], &s, 0.9, AnchorTiebreak::LowestIndex), Some(0));
        assert_eq!(select_anchor(&[2, 2], &s, 0.9, AnchorTiebreak::LowestIndex), None);
        assert_eq!(select_anchor(&[1, 0, 0], &s, 0.9, AnchorTiebreak::LowestIndex), Some(1));
    }

    #[test]
    fn anchor_tiebreak_rules() {
        let s = Scenario::from_parts("tie", &[0.25, 0.25, 0.5], &[0.9, 1.0, 0.0]).unwrap();
        assert_eq!(select_anchor(&[0, 1], &s, 0.5, AnchorTiebreak::LowestIndex), Some(0));
        assert_eq!(select_anchor(&[0, 1], &s, 0.5, AnchorTiebreak::HighestReward), Some(1));
    }

    #[test]
    fn augment_rewards_example() {
        let s = toy();
        let cfg = MaraConfig::constant(0.9, 0.1);
        let out = augment_rewards(&[0, 1, 2], &s, &cfg);
        assert_eq!(out.anchor_position, Some(0));
        assert_eq!(out.anchor_index(), Some(0));
        let want = [1.0, 1.3, 0.2];
        for (a, b) in out.augmented_rewards.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(out.augmented_rewards[0], 1.0);
        assert_eq!(out.augmented_ref_logprobs[1], s.ref_log_prob(1));
    }

    #[test]
    fn all_below_threshold_is_identity() {
        let s = toy();
        let cfg = MaraConfig::constant(1.5, 0.1);
        for f in [augment_rewards, augment_ref_view] {
            let out = f(&[0, 1, 2, 1], &s, &cfg);
            assert_eq!(out.anchor_position, None);
            assert_eq!(out.augmented_rewards, out.raw_rewards);
            assert_eq!(out.augmented_ref_logprobs, vec![
                s.ref_log_prob(0), s.ref_log_prob(1), s.ref_log_prob(2), s.ref_log_prob(1)
            ]);
        }
    }

    #[test]
    fn ref_view_example() {
        let s = toy();
        let cfg = MaraConfig::constant(0.9, 0.1);
        let out = augment_ref_view(&[2, 1, 0], &s, &cfg);
        assert_eq!(out.anchor_index(), Some(0));
        assert_eq!((out.augmented_rewards[1], out.augmented_ref_logprobs[1]), (1.0, s.ref_log_prob(0)));
        assert_eq!((out.augmented_rewards[0], out.augmented_ref_logprobs[0]), (0.2, s.ref_log_prob(2)));
        assert_eq!((out.augmented_rewards[2], out.augmented_ref_logprobs[2]), (1.0, s.ref_log_prob(0)));
    }

    #[test]
    fn percentile_threshold() {
        assert_eq!(quantile_linear(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile_linear(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.9), 4.6);
        assert_eq!(quantile_linear(&[7.0], 0.3), 7.0);
        let s = toy();
        let cfg = MaraConfig::percentile(0.5, 0.1);
        let out = augment_rewards(&[2, 0, 1], &s, &cfg);
        assert_eq!(out.threshold_used, 1.0);
        assert_eq!(out.anchor_index(), Some(0));
    }

    #[test]
    fn config_validation() {
        assert!(MaraConfig::percentile(1.0, 0.1).validate().is_err());
        assert!(MaraConfig::percentile(0.0, 0.1).validate().is_err());
        assert!(MaraConfig::constant(0.5, 0.0).validate().is_err());
        assert!(MaraConfig::constant(2.0, 0.1).validate_for(&toy()).is_err());
        assert!(MaraConfig::constant(1.0, 0.1).validate_for(&toy()).is_ok());
    }

    #[test]
    fn mara_target_examples() {
        let s = toy();
        let g = mara_target(&s, 0.1, 0.9, 0).unwrap();
        assert!((g.log_mass(0) - g.log_mass(1)).abs() < 1e-12);
        assert!(matches!(mara_target(&s, 0.1, 0.9, 2), Err(Error::InvalidAnchor(_))));

        let flat = Scenario::from_parts("flat", &[0.25; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = mara_target(&flat, 0.5, 0.5, 0).unwrap();
        for i in 0..4 {
            assert!((g.mass(i) - 0.25).abs() < 1e-15);
        }

        // only the anchor clears τ: below-threshold entries follow the
        // reverse-KL target, the anchor keeps its own log-mass
        let s = Scenario::from_parts("one", &[0.2, 0.3, 0.5], &[0.1, 0.4, 1.0]).unwrap();
        let g = mara_target(&s, 0.2, 0.9, 2).unwrap();
        let r = reverse_kl_target(&s, 0.2).unwrap();
        for i in 0..3 {
            assert!((g.mass(i) - r.mass(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_mara_target_is_uniform_above_threshold() {
        let s = crate::scenario::scenario_by_name("mara_toy").unwrap();
        let z = global_anchor(&s, 0.5, AnchorTiebreak::LowestIndex).unwrap();
        for beta in [0.01, 0.1, 1.0] {
            let sol = mara_forward_target(&s, beta, 0.5, z).unwrap();
            let above = s.above(0.5);
            let m0 = sol.distribution.mass(above[0]);
            for &i in &above {
                assert!((sol.distribution.mass(i) / m0 - 1.0).abs() < 1e-9);
            }
        }
    }

    fn random_scenario(seed: u64, n: usize) -> Scenario {
        let mut rng = seeded_rng(seed, 11);
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Scenario::from_parts("rand", &masses, &rewards).unwrap()
    }

    proptest! {
        #[test]
        fn prop_uniform_above_threshold(seed in 0u64..10_000, n in 2usize..=32, beta in 0.01f64..2.0, tau in 0.1f64..0.9) {
            let s = random_scenario(seed, n);
            prop_assume!(s.rewards.max() >= tau);
            let z = global_anchor(&s, tau, AnchorTiebreak::LowestIndex).unwrap();
            let g = mara_target(&s, beta, tau, z).unwrap();
            let above = s.above(tau);
            for &i in &above {
                prop_assert!((g.mass(i) / g.mass(above[0]) - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn prop_target_matches_reverse_on_augmented_rewards(seed in 0u64..10_000, n in 2usize..=32, beta in 0.01f64..2.0, tau in 0.1f64..0.9) {
            let s = random_scenario(seed, n);
            prop_assume!(s.rewards.max() >= tau);
            let z = global_anchor(&s, tau, AnchorTiebreak::LowestIndex).unwrap();
            let aug = s.with_rewards(augmented_reward_vector(&s, beta, tau, z).unwrap()).unwrap();
            let a = reverse_kl_target(&aug, beta).unwrap();
            let b = mara_target(&s, beta, tau, z).unwrap();
            for i in 0..n {
                prop_assert!((a.mass(i) - b.mass(i)).abs() <= 1e-12);
            }
        }

        #[test]
        fn prop_coefficients_agree(seed in 0u64..10_000, beta in 0.001f64..5.0, logp in -20.0f64..0.0) {
            let s = random_scenario(seed, 8);
            let batch: Vec<usize> = (0..8).collect();
            let cfg = MaraConfig::constant(0.0, beta);
            let a = augment_rewards(&batch, &s, &cfg);
            let b = augment_ref_view(&batch, &s, &cfg);
            for pos in 0..8 {
                let ca = reverse_coefficient(a.augmented_rewards[pos], beta, logp, a.augmented_ref_logprobs[pos]);
                let cb = reverse_coefficient(b.augmented_rewards[pos], beta, logp, b.augmented_ref_logprobs[pos]);
                prop_assert!((ca - cb).abs() <= 1e-12 * ca.abs().max(1.0));
            }
        }

        #[test]
        fn prop_threshold_above_max_is_identity(seed in 0u64..10_000) {
            let s = random_scenario(seed, 10);
            let batch: Vec<usize> = (0..10).rev().collect();
            let out = augment_rewards(&batch, &s, &MaraConfig::constant(1.5, 0.3));
            prop_assert_eq!(out.augmented_rewards, out.raw_rewards);
            prop_assert!(out.anchor_position.is_none());
        }
    }
}
