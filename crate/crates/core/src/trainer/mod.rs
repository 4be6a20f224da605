//! Policy-gradient training of a softmax policy toward a regularized optimum.

mod adam;
mod gradients;
mod policy;

pub use adam::{adam_step, AdamParams, AdamState};
pub use gradients::{
    exact_gradient, exact_objective, matching_step_sft, mc_gradient_forward, mc_gradient_reverse, Baseline,
    ForwardRegularizer, Objective,
};
pub use policy::SoftmaxPolicy;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{entropy, seeded_rng, tv_distance, Categorical, Sampler};
use crate::error::{Error, Result};
use crate::mara::{
    augment_ref_view, augment_rewards, augmented_reward_vector, global_anchor, mara_forward_target, mara_target,
    quantile_linear, ref_view_vectors, MaraConfig, ThresholdRule,
};
use crate::scenario::Scenario;
use crate::targets::{generalized_target, TargetKind};
use gradients::{forward_batch_gradient, reverse_batch_gradient, Landscape};

pub const DEFAULT_STEPS: usize = 3000;
pub const DEFAULT_LEARNING_RATE: f64 = 5e-3;
pub const DEFAULT_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GradientMode {
    Exact,
    MonteCarlo {
        batch: usize,
        #[serde(default)]
        baseline: Baseline,
    },
}

impl GradientMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradientMode::Exact => "exact",
            GradientMode::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub forward_regularizer: ForwardRegularizer,
    #[serde(default)]
    pub mara: Option<MaraConfig>,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Exact gradients, 3000 Adam steps at 5e-3.
    pub fn exact(objective: Objective) -> Self {
        Self {
            objective,
            gradient_mode: GradientMode::Exact,
            forward_regularizer: ForwardRegularizer::Exact,
            mara: None,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            adam: AdamParams::default(),
            seed: 0,
        }
    }

    pub fn monte_carlo(objective: Objective, batch: usize, seed: u64) -> Self {
        Self {
            gradient_mode: GradientMode::MonteCarlo { batch, baseline: Baseline::default() },
            seed,
            ..Self::exact(objective)
        }
    }

    pub fn with_mara(mut self, mara: MaraConfig) -> Self {
        self.mara = Some(mara);
        self
    }

    pub fn validate(&self, s: &Scenario) -> Result<()> {
        self.objective.validate()?;
        self.adam.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if let GradientMode::MonteCarlo { batch, baseline } = self.gradient_mode {
            if batch == 0 {
                return Err(Error::InvalidConfig("batch must be at least 1".into()));
            }
            if baseline != Baseline::None && batch < 2 {
                return Err(Error::InvalidConfig(format!("baseline {} needs batch >= 2", baseline.as_str())));
            }
        }
        if let Some(m) = &self.mara {
            m.validate_for(s)?;
            if m.beta != self.objective.beta {
                return Err(Error::InvalidConfig(format!(
                    "MARA beta {} differs from the objective beta {}",
                    m.beta, self.objective.beta
                )));
            }
        }
        Ok(())
    }
}

/// Metrics after one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    /// Unaugmented objective of the current policy.
    pub objective: f64,
    pub tv: f64,
    pub entropy: f64,
    pub above_threshold_mass: f64,
    pub anchor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub final_policy: Categorical,
    pub final_logits: Vec<f64>,
    /// Analytic optimum the trace measures TV against.
    pub target: Categorical,
    pub trace: Vec<TraceRecord>,
    /// Anchor used at each step when MARA is active.
    pub anchor_history: Vec<Option<usize>>,
    /// Number of times the anchor changed between consecutive anchored steps.
    pub anchor_churn: usize,
    /// Fixed anchor of the analytic MARA target.
    pub global_anchor: Option<usize>,
}

/// Threshold used by full-support MARA: the constant, or the quantile of
/// rewards over the reference support.
pub fn full_support_threshold(s: &Scenario, mara: &MaraConfig) -> f64 {
    match mara.threshold {
        ThresholdRule::Constant(t) => t,
        ThresholdRule::BatchPercentile(q) => {
            let supported: Vec<f64> = (0..s.n()).filter(|&i| s.reference.is_supported(i)).map(|i| s.reward(i)).collect();
            quantile_linear(&supported, q)
        }
    }
}

/// What exact-mode training optimizes, its analytic optimum and the global
/// anchor (when MARA is active).
fn exact_problem(s: &Scenario, cfg: &TrainConfig) -> Result<(Landscape, Categorical, Option<usize>)> {
    let obj = cfg.objective;
    let Some(m) = &cfg.mara else {
        let target = obj.target(s)?;
        return Ok((Landscape::of(s), target, None));
    };
    let tau = full_support_threshold(s, m);
    let z = global_anchor(s, tau, m.tiebreak)
        .ok_or_else(|| Error::InvalidAnchor(format!("no supported index reaches threshold {tau}")))?;
    match obj.kind {
        TargetKind::ReverseKl => {
            let rewards = augmented_reward_vector(s, obj.beta, tau, z)?;
            Ok((Landscape { rewards, ..Landscape::of(s) }, mara_target(s, obj.beta, tau, z)?, Some(z)))
        }
        TargetKind::Generalized => {
            let aug = s.with_rewards(augmented_reward_vector(s, obj.beta, tau, z)?)?;
            let target = generalized_target(&aug, obj.beta, obj.eta)?;
            Ok((Landscape::of(&aug), target, Some(z)))
        }
        TargetKind::ForwardKl => {
            let (w, r) = ref_view_vectors(s, tau, z)?;
            let target = mara_forward_target(s, obj.beta, tau, z)?.distribution;
            Ok((Landscape::from_weights(w, r), target, Some(z)))
        }
    }
}

/// Analytic optimum of the configured objective, with MARA applied through a
/// fixed global anchor when configured.
pub fn analytic_target(s: &Scenario, cfg: &TrainConfig) -> Result<Categorical> {
    Ok(exact_problem(s, cfg)?.1)
}

fn initial_policy(s: &Scenario, obj: &Objective) -> Result<SoftmaxPolicy> {
    let restrict = match obj.kind {
        TargetKind::ReverseKl => true,
        TargetKind::Generalized => obj.beta > 0.0,
        TargetKind::ForwardKl => false,
    };
    if restrict {
        SoftmaxPolicy::zeros_on(s.reference.support_mask())
    } else {
        Ok(SoftmaxPolicy::zeros(s.n()))
    }
}

/// Runs `cfg.steps` optimizer steps from all-zero logits.
pub fn train(s: &Scenario, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate(s)?;
    let obj = cfg.objective;
    let (landscape, target, fixed_anchor) = exact_problem(s, cfg)?;
    let plain = Landscape::of(s);
    let tau = match &cfg.mara {
        Some(m) => full_support_threshold(s, m),
        None => s.threshold(),
    };
    let above = s.above(tau);
    let ref_w = s.reference.masses();

    let mut policy = initial_policy(s, &obj)?;
    let mut state = AdamState::new(policy.logits().to_vec());
    let mut rng = seeded_rng(cfg.seed, 0);
    let mut ref_rng = seeded_rng(cfg.seed, 1);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut anchors = Vec::new();
    let eta = if obj.kind == TargetKind::Generalized { obj.eta } else { 0.0 };

    for step in 1..=cfg.steps {
        let pi = policy.distribution();
        let (grad, anchor) = match cfg.gradient_mode {
            GradientMode::Exact => (landscape.gradient(&pi, &obj)?, fixed_anchor),
            GradientMode::MonteCarlo { batch, baseline } => {
                let ys = Sampler::new(&pi).draw_many(&mut rng, batch);
                match obj.kind {
                    TargetKind::ReverseKl | TargetKind::Generalized => {
                        let (rewards, lrefs, anchor) = match &cfg.mara {
                            Some(m) => {
                                let a = augment_rewards(&ys, s, m);
                                let z = a.anchor_index();
                                (a.augmented_rewards, a.augmented_ref_logprobs, z)
                            }
                            None => (
                                ys.iter().map(|&y| s.reward(y)).collect(),
                                ys.iter().map(|&y| s.ref_log_prob(y)).collect(),
                                None,
                            ),
                        };
                        (reverse_batch_gradient(&pi, &ys, &rewards, &lrefs, obj.beta, eta, baseline)?, anchor)
                    }
                    TargetKind::ForwardKl => {
                        let (rewards, weights, anchor) = match &cfg.mara {
                            Some(m) => {
                                let a = augment_ref_view(&ys, s, m);
                                let z = a.anchor_index();
                                let w = match z {
                                    Some(z) => ref_view_vectors(s, a.threshold_used, z)?.0,
                                    None => ref_w.clone(),
                                };
                                (a.augmented_rewards, w, z)
                            }
                            None => (ys.iter().map(|&y| s.reward(y)).collect(), ref_w.clone(), None),
                        };
                        let g = forward_batch_gradient(
                            &pi,
                            &ys,
                            &rewards,
                            &weights,
                            obj.beta,
                            baseline,
                            cfg.forward_regularizer,
                            &mut ref_rng,
                        )?;
                        (g, anchor)
                    }
                }
            }
        };
        let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam_step(&mut state, &descent, cfg.learning_rate, &cfg.adam)?;
        policy.logits_mut().copy_from_slice(&state.params);

        let pi = policy.distribution();
        trace.push(TraceRecord {
            step,
            objective: plain.objective(&pi, &obj)?,
            tv: tv_distance(&pi, &target)?,
            entropy: entropy(&pi),
            above_threshold_mass: pi.mass_of(above.iter().copied()),
            anchor,
        });
        if cfg.mara.is_some() {
            anchors.push(anchor);
        }
    }

    let seen: Vec<usize> = anchors.iter().flatten().copied().collect();
    let anchor_churn = seen.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(TrainResult {
        final_policy: policy.distribution(),
        final_logits: policy.logits().to_vec(),
        target,
        trace,
        anchor_history: anchors,
        anchor_churn,
        global_anchor: fixed_anchor,
    })
}

/// Fits a full-support policy to `target` by maximum likelihood on target
/// samples.
pub fn fit_by_matching(target: &Categorical, batch: usize, steps: usize, lr: f64, adam: &AdamParams, seed: u64) -> Result<Categorical> {
    if batch == 0 || steps == 0 {
        return Err(Error::Precondition("batch and steps must be at least 1".into()));
    }
    let mut policy = SoftmaxPolicy::zeros(target.len());
    let mut state = AdamState::new(policy.logits().to_vec());
    let sampler = Sampler::new(target);
    let mut rng = seeded_rng(seed, 0);
    let ones = vec![-1.0; batch];
    for _ in 0..steps {
        let ys = sampler.draw_many(&mut rng, batch);
        let g = gradients::score_estimate(&policy.distribution(), &ys, &ones, Baseline::None)?;
        adam_step(&mut state, &g, lr, adam)?;
        policy.logits_mut().copy_from_slice(&state.params);
    }
    Ok(policy.distribution())
}

pub const TRACE_HEADER: &str = "step,objective,tv,entropy,above_threshold_mass,anchor";

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        let anchor = r.anchor.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.step, r.objective, r.tv, r.entropy, r.above_threshold_mass, anchor
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::scenario_by_name;
    use crate::targets::TargetSpec;

    #[test]
    fn one_step_gives_one_trace_record() {
        let s = scenario_by_name("two_point").unwrap();
        let cfg = TrainConfig { steps: 1, ..TrainConfig::exact(TargetSpec::reverse(1.0)) };
        let r = train(&s, &cfg).unwrap();
        assert_eq!(r.trace.len(), 1);
        let mut buf = Vec::new();
        write_trace_csv(&r.trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let s = scenario_by_name("two_point").unwrap();
        let base = TrainConfig::exact(TargetSpec::reverse(1.0));
        assert!(train(&s, &TrainConfig { steps: 0, ..base }).is_err());
        assert!(train(&s, &TrainConfig { learning_rate: -1.0, ..base }).is_err());
        let loo = TrainConfig {
            gradient_mode: GradientMode::MonteCarlo { batch: 1, baseline: Baseline::LeaveOneOut },
            ..base
        };
        assert!(matches!(train(&s, &loo), Err(Error::InvalidConfig(_))));
        assert!(train(&s, &base.with_mara(MaraConfig::constant(0.5, 0.5))).is_err());
        assert!(train(&s, &TrainConfig::exact(TargetSpec::forward(0.0))).is_err());
    }

    #[test]
    fn exact_training_reaches_target() {
        let s = scenario_by_name("fig2_two_mode").unwrap();
        for spec in [TargetSpec::reverse(0.1), TargetSpec::forward(0.1), TargetSpec::generalized(0.1, 0.05)] {
            let r = train(&s, &TrainConfig::exact(spec)).unwrap();
            assert!(r.trace.last().unwrap().tv <= 0.05, "{spec:?}: {}", r.trace.last().unwrap().tv);
        }
    }

    #[test]
    fn monte_carlo_training_is_deterministic() {
        let s = scenario_by_name("fig2_two_mode").unwrap();
        let cfg = TrainConfig { steps: 200, ..TrainConfig::monte_carlo(TargetSpec::reverse(0.1), 32, 4) };
        let a = train(&s, &cfg).unwrap();
        let b = train(&s, &cfg).unwrap();
        assert!(a.final_logits.iter().zip(&b.final_logits).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = train(&s, &TrainConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a.final_logits, c.final_logits);
    }

    #[test]
    fn mara_training_balances_modes() {
        let s = scenario_by_name("mara_toy").unwrap();
        for spec in [TargetSpec::reverse(0.1), TargetSpec::forward(0.1)] {
            let cfg = TrainConfig::exact(spec).with_mara(MaraConfig::constant(0.5, 0.1));
            let r = train(&s, &cfg).unwrap();
            let m = s.mode_masses(&r.final_policy);
            assert!((m[0] / m[1] - 1.0).abs() <= 0.1, "{spec:?}: {m:?}");
            assert!(r.anchor_history.iter().all(|a| *a == r.global_anchor));
            assert_eq!(r.anchor_churn, 0);
        }
    }

    #[test]
    fn mara_monte_carlo_records_anchors() {
        let s = scenario_by_name("mara_toy").unwrap();
        for spec in [TargetSpec::reverse(0.1), TargetSpec::forward(0.1)] {
            let cfg = TrainConfig { steps: 50, ..TrainConfig::monte_carlo(spec, 32, 1) }
                .with_mara(MaraConfig::percentile(0.9, 0.1));
            let r = train(&s, &cfg).unwrap();
            assert_eq!(r.anchor_history.len(), 50);
            assert!(r.anchor_history.iter().any(|a| a.is_some()));
        }
    }

    #[test]
    fn sampled_forward_regularizer_trains() {
        let s = scenario_by_name("two_point").unwrap();
        let cfg = TrainConfig {
            forward_regularizer: ForwardRegularizer::Sampled,
            ..TrainConfig::monte_carlo(TargetSpec::forward(1.0), 32, 2)
        };
        let r = train(&s, &cfg).unwrap();
        assert!(r.trace.last().unwrap().tv < 0.15);
    }

    #[test]
    fn matching_reaches_two_mode_target() {
        let s = scenario_by_name("fig2_two_mode").unwrap();
        let target = TargetSpec::reverse(0.1).target(&s).unwrap();
        let fitted = fit_by_matching(&target, DEFAULT_BATCH, DEFAULT_STEPS, DEFAULT_LEARNING_RATE, &AdamParams::default(), 0).unwrap();
        assert!(tv_distance(&fitted, &target).unwrap() <= 0.05);
    }
}
