//! The acceptance checks, evaluated from analytic quantities and sweep
//! records.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::presets::{EQUAL_REWARD_BETAS, FAMILY_SCENARIOS, FIG2_BETAS, MARA_BETAS};
use super::RunRecord;
use crate::dist::{kl, seeded_rng};
use crate::mara::{augment_ref_view, augment_rewards, global_anchor, mara_target, reverse_coefficient, MaraConfig};
use crate::scenario::{scenario_by_name, Scenario};
use crate::targets::{flip_beta, forward_kl_target, forward_stationarity_residual, log_prob_ratio, reverse_kl_target, TargetKind, TargetSpec};
use crate::trainer::{exact_gradient, exact_objective, mc_gradient_reverse, Baseline, SoftmaxPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: String,
    pub measured: String,
    /// `None` when the records needed for the check are missing.
    pub passed: Option<bool>,
}

impl CriterionResult {
    pub fn verdict(&self) -> &'static str {
        match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "N/A",
        }
    }

    fn new(id: u8, title: &str, measured: String, passed: Option<bool>) -> Self {
        Self { id, title: title.into(), measured, passed }
    }
}

/// True when no evaluated criterion failed.
pub fn none_failed(results: &[CriterionResult]) -> bool {
    results.iter().all(|r| r.passed != Some(false))
}

/// Relative deviation `|a / b - 1|`.
fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn scenario(name: &str) -> Scenario {
    scenario_by_name(name).expect("shipped scenario")
}

fn random_scenario(rng: &mut impl Rng, n: usize, reward_lo: f64) -> Scenario {
    let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(reward_lo..1.0)).collect();
    Scenario::from_parts("random", &masses, &rewards).expect("positive masses, finite rewards")
}

fn has_beta(betas: &[f64], b: f64) -> bool {
    betas.iter().any(|x| x.to_bits() == b.to_bits())
}

pub fn flip_reproduction() -> CriterionResult {
    let s = scenario("fig2_two_mode");
    let peaks = s.peaks();
    let flip = flip_beta(&s, peaks[0], peaks[1]);
    let pref = |beta: f64| {
        let m = s.mode_masses(&reverse_kl_target(&s, beta).expect("valid beta"));
        m[0] - m[1]
    };
    let (lo, hi) = (pref(0.10), pref(0.15));
    let passed = matches!(flip, Ok(b) if (b - 0.1316).abs() <= 5e-4) && lo * hi < 0.0;
    let measured = match flip {
        Ok(b) => format!("flip β = {b:.5}; mode1 - mode2 mass: {lo:+.3} at 0.10, {hi:+.3} at 0.15"),
        Err(e) => e.to_string(),
    };
    CriterionResult::new(1, "flip-β on fig2_two_mode and mode-preference flip", measured, Some(passed))
}

pub fn extreme_ratio() -> CriterionResult {
    let s = Scenario::from_parts("equal_reference", &[0.5, 0.5], &[0.1, 0.0]).expect("valid");
    let r = log_prob_ratio(&s, 1e-3, 0, 1);
    let passed = matches!(r, Ok(v) if v == 100.0);
    let measured = match r {
        Ok(v) => format!("log ratio = {v:?} nats"),
        Err(e) => e.to_string(),
    };
    CriterionResult::new(2, "log-probability ratio at ΔR = 0.1, β = 1e-3", measured, Some(passed))
}

pub fn equal_reward_invariance(records: &[RunRecord]) -> CriterionResult {
    let s = scenario("equal_reward_unequal_support");
    let ref_m = s.mode_masses(&s.reference);
    let ref_ratio = ref_m[0] / ref_m[1];
    let analytic = EQUAL_REWARD_BETAS
        .iter()
        .map(|&b| {
            let m = s.mode_masses(&reverse_kl_target(&s, b).expect("valid beta"));
            rel(m[0] / m[1], ref_ratio)
        })
        .fold(0.0, f64::max);
    let trained: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.scenario == s.name && r.objective == TargetKind::ReverseKl && r.gradient_mode == "exact" && !r.mara_enabled)
        .collect();
    let covered = EQUAL_REWARD_BETAS.iter().all(|&b| trained.iter().any(|r| r.beta.to_bits() == b.to_bits()));
    let dev = trained.iter().map(|r| rel(r.mode_ratio(), ref_ratio)).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    let failed = trained.iter().any(|r| r.failed());
    let passed = covered.then_some(analytic <= 1e-9 && dev <= 0.10 && !failed);
    let measured = if covered {
        format!("reference ratio {ref_ratio:.4}; target max rel dev {analytic:.1e}; trained max rel dev {dev:.4}")
    } else {
        format!("reference ratio {ref_ratio:.4}; target max rel dev {analytic:.1e}; trained runs missing")
    };
    CriterionResult::new(3, "equal-reward mode ratio follows the reference", measured, passed)
}

pub fn family_convergence(records: &[RunRecord]) -> CriterionResult {
    let family = |r: &&RunRecord| FAMILY_SCENARIOS.contains(&r.scenario.as_str()) && !r.mara_enabled && r.eta == 0.0;
    let exact: Vec<&RunRecord> = records
        .iter()
        .filter(family)
        .filter(|r| r.gradient_mode == "exact" && !(r.objective == TargetKind::ForwardKl && r.boundary_case))
        .collect();
    let worst_exact = exact.iter().map(|r| r.final_tv).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });

    // Monte-Carlo: mean over seeds per (scenario, objective, β)
    let mut cells: Vec<(String, TargetKind, u64, Vec<f64>)> = Vec::new();
    for r in records.iter().filter(family).filter(|r| r.gradient_mode == "monte_carlo" && !(r.objective == TargetKind::ForwardKl && r.boundary_case)) {
        let tv = if r.failed() { f64::INFINITY } else { r.final_tv };
        match cells.iter_mut().find(|c| c.0 == r.scenario && c.1 == r.objective && c.2 == r.beta.to_bits()) {
            Some(c) => c.3.push(tv),
            None => cells.push((r.scenario.clone(), r.objective, r.beta.to_bits(), vec![tv])),
        }
    }
    let worst_mc = cells.iter().map(|c| c.3.iter().sum::<f64>() / c.3.len() as f64).fold(0.0, f64::max);
    let min_seeds = cells.iter().map(|c| c.3.len()).min().unwrap_or(0);

    let fig2_covered = [TargetKind::ReverseKl, TargetKind::ForwardKl].iter().all(|&k| {
        FIG2_BETAS.iter().all(|&b| exact.iter().any(|r| r.scenario == "fig2_two_mode" && r.objective == k && has_beta(&[r.beta], b)))
    });
    let covered = fig2_covered && !cells.is_empty() && min_seeds >= 3;
    let passed = covered.then_some(worst_exact <= 0.05 && worst_mc <= 0.15);
    let measured = format!(
        "exact: {} runs, max TV {worst_exact:.4}; Monte-Carlo: {} cells (>= {min_seeds} seeds), max mean TV {worst_mc:.4}",
        exact.len(),
        cells.len()
    );
    CriterionResult::new(4, "trained policies converge to the analytic family", measured, passed)
}

pub fn forward_solver() -> CriterionResult {
    let two = scenario("two_point");
    let lambda = forward_kl_target(&two, 1.0).map(|s| s.lambda).unwrap_or(f64::NAN);
    let closed_err = (lambda - (1.0 + 0.5f64.sqrt())).abs();

    let mut rng = seeded_rng(20_240, 5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=32);
        let s = random_scenario(&mut rng, n, -1.0);
        let beta = rng.gen_range(0.01..2.0);
        let res = match forward_kl_target(&s, beta) {
            Ok(sol) => forward_stationarity_residual(&s, beta, &sol.distribution),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(res);
    }

    let off = Scenario::from_parts("leftover", &[1.0, 0.0], &[0.0, 2.0]).expect("valid");
    let leftover = forward_kl_target(&off, 1.0).map(|s| s.distribution.masses()).unwrap_or_default();
    let leftover_ok = leftover == vec![0.5, 0.5];
    let passed = closed_err <= 1e-10 && worst <= 1e-8 && leftover_ok;
    let measured = format!("|Λ - (1 + √2/2)| = {closed_err:.1e}; max residual {worst:.1e}; leftover case {leftover:?}");
    CriterionResult::new(5, "forward-KL solver: closed form, stationarity, leftover mass", measured, Some(passed))
}

pub fn gradient_identity() -> CriterionResult {
    let mut rng = seeded_rng(7_001, 6);
    let (mut worst_id, mut worst_fd) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let s = random_scenario(&mut rng, n, -1.0);
        let beta = rng.gen_range(0.05..3.0);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let policy = SoftmaxPolicy::from_logits(logits).expect("finite logits");
        let pi = policy.distribution();
        let g = reverse_kl_target(&s, beta).expect("valid beta");
        let kl_pg = kl(&pi, &g).expect("full support");
        let grad = exact_gradient(&policy, &s, &TargetSpec::reverse(beta)).expect("full support");
        for k in 0..n {
            let d_kl = pi.mass(k) * (pi.log_mass(k) - g.log_mass(k) - kl_pg);
            worst_id = worst_id.max((grad[k] + beta * d_kl).abs());
        }
        for obj in [TargetSpec::reverse(beta), TargetSpec::forward(beta), TargetSpec::generalized(beta, 0.5 * beta)] {
            let grad = exact_gradient(&policy, &s, &obj).expect("full support");
            for k in 0..n {
                let h = 1e-5;
                let mut up = policy.clone();
                up.logits_mut()[k] += h;
                let mut down = policy.clone();
                down.logits_mut()[k] -= h;
                let fd = (exact_objective(&up, &s, &obj).expect("ok") - exact_objective(&down, &s, &obj).expect("ok")) / (2.0 * h);
                worst_fd = worst_fd.max((fd - grad[k]).abs() / grad[k].abs().max(1e-3));
            }
        }
    }
    let passed = worst_id <= 1e-9 && worst_fd <= 1e-6;
    let measured = format!("max |∇J + β∇KL| = {worst_id:.1e}; max finite-difference rel err {worst_fd:.1e}");
    CriterionResult::new(6, "gradient identity and finite differences", measured, Some(passed))
}

pub fn mara_uniformity(records: &[RunRecord]) -> CriterionResult {
    let s = scenario("mara_toy");
    let tau = s.threshold();
    let above = s.above(tau);
    let mut analytic = 0.0f64;
    for &b in &MARA_BETAS {
        let z = global_anchor(&s, tau, Default::default()).expect("mara_toy has qualifying indices");
        let g = mara_target(&s, b, tau, z).expect("valid anchor");
        for &i in &above {
            analytic = analytic.max(rel(g.mass(i), g.mass(above[0])));
        }
    }
    let runs = |mara: bool, kind: TargetKind| -> Vec<&RunRecord> {
        records
            .iter()
            .filter(|r| r.scenario == s.name && r.gradient_mode == "exact" && r.mara_enabled == mara && r.objective == kind)
            .collect()
    };
    let mut covered = true;
    let (mut worst_mara, mut weakest_base) = (0.0f64, f64::INFINITY);
    for kind in [TargetKind::ReverseKl, TargetKind::ForwardKl] {
        let (with, without) = (runs(true, kind), runs(false, kind));
        covered &= !with.is_empty() && !without.is_empty();
        for r in with {
            let d = rel(r.mode_ratio(), 1.0);
            worst_mara = worst_mara.max(if d.is_nan() { f64::INFINITY } else { d });
        }
        for r in without {
            let imbalance = r.mode_ratio().max(1.0 / r.mode_ratio());
            weakest_base = weakest_base.min(if imbalance.is_nan() { 0.0 } else { imbalance });
        }
    }
    let passed = covered.then_some(analytic <= 1e-9 && worst_mara <= 0.10 && weakest_base >= 3.0);
    let measured = format!(
        "target max rel spread {analytic:.1e}; MARA trained max rel imbalance {worst_mara:.4}; baseline min imbalance {weakest_base:.2}x"
    );
    CriterionResult::new(7, "MARA equalizes above-threshold modes", measured, passed)
}

pub fn estimator_equivalence() -> CriterionResult {
    let mut rng = seeded_rng(31_337, 8);
    let mut worst = 0.0f64;
    let mut bitwise = 0usize;
    let mut count = 0usize;
    while count < 10_000 {
        let s = random_scenario(&mut rng, 8, 0.5);
        let beta = rng.gen_range(1e-3..5.0);
        let batch: Vec<usize> = (0..8).map(|_| rng.gen_range(0..8)).collect();
        let cfg = MaraConfig::constant(0.5, beta);
        let a = augment_rewards(&batch, &s, &cfg);
        let b = augment_ref_view(&batch, &s, &cfg);
        for pos in 0..batch.len() {
            let logp = rng.gen_range(-20.0..0.0);
            let ca = reverse_coefficient(a.augmented_rewards[pos], beta, logp, a.augmented_ref_logprobs[pos]);
            let cb = reverse_coefficient(b.augmented_rewards[pos], beta, logp, b.augmented_ref_logprobs[pos]);
            worst = worst.max((ca - cb).abs() / ca.abs().max(1.0));
            bitwise += usize::from(ca.to_bits() == cb.to_bits());
            count += 1;
        }
    }
    let measured = format!("{count} samples, {bitwise} bitwise equal, max scaled diff {worst:.1e}");
    CriterionResult::new(8, "per-sample coefficients agree between both augmentations", measured, Some(worst <= 1e-12))
}

/// Ten-token scenario and policy used by the unbiasedness check.
pub fn unbiasedness_case() -> (Scenario, SoftmaxPolicy, f64) {
    let mut rng = seeded_rng(4_242, 9);
    let s = random_scenario(&mut rng, 10, 0.0);
    let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.5..1.5)).collect();
    (s, SoftmaxPolicy::from_logits(logits).expect("finite"), 0.4)
}

pub fn unbiasedness() -> CriterionResult {
    let (s, policy, beta) = unbiasedness_case();
    let exact = exact_gradient(&policy, &s, &TargetSpec::reverse(beta)).expect("full support");
    let batches = 100_000u64;
    let n = s.n();
    let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
    for seed in 0..batches {
        let g = mc_gradient_reverse(&policy, &s, beta, 32, Baseline::None, seed).expect("valid batch");
        for k in 0..n {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    let m = batches as f64;
    let mut worst_z = 0.0f64;
    for k in 0..n {
        let mean = sum[k] / m;
        let se = ((sq[k] / m - mean * mean).max(0.0) / (m - 1.0)).sqrt();
        worst_z = worst_z.max((mean - exact[k]).abs() / se);
    }
    let measured = format!("{batches} batches of 32 on {n} tokens; max |mean - exact| = {worst_z:.2} standard errors");
    CriterionResult::new(9, "score-function estimator is unbiased", measured, Some(worst_z <= 3.0))
}

/// Criteria that need no sweep records.
pub fn evaluate_analytic() -> Vec<CriterionResult> {
    vec![flip_reproduction(), extreme_ratio(), forward_solver(), gradient_identity(), estimator_equivalence(), unbiasedness()]
}

/// All nine criteria, in order. Training checks are `N/A` when `records`
/// lack the runs they judge.
pub fn evaluate(records: &[RunRecord]) -> Vec<CriterionResult> {
    let mut out = evaluate_analytic();
    out.push(equal_reward_invariance(records));
    out.push(family_convergence(records));
    out.push(mara_uniformity(records));
    out.sort_by_key(|c| c.id);
    out
}
