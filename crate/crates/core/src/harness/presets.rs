//! Sweep grids that reproduce the didactic figures.

use super::SweepSpec;
use crate::mara::MaraConfig;
use crate::scenario::scenario_by_name;
use crate::targets::TargetSpec;
use crate::trainer::{TrainConfig, DEFAULT_BATCH};

/// Superset of the legible Fig. 2 coefficients, plus the flip point.
pub const FIG2_BETAS: [f64; 7] = [0.01, 0.05, 0.10, 0.132, 0.15, 0.25, 0.5];
pub const EQUAL_REWARD_BETAS: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];
pub const MARA_BETAS: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];
pub const SEEDS: [u64; 3] = [0, 1, 2];

/// Scenarios judged by the target-family convergence criterion.
pub const FAMILY_SCENARIOS: [&str; 3] = ["fig2_two_mode", "equal_reference_varied_reward", "forward_off_support"];

fn both() -> Vec<TargetSpec> {
    vec![TargetSpec::reverse(1.0), TargetSpec::forward(1.0)]
}

fn spec(scenario: &str, betas: &[f64], seeds: &[u64], train: TrainConfig, mara: Option<MaraConfig>) -> SweepSpec {
    SweepSpec {
        scenario: scenario_by_name(scenario).expect("preset scenarios are shipped"),
        objectives: both(),
        betas: betas.to_vec(),
        seeds: seeds.to_vec(),
        train,
        mara,
        timing: false,
    }
}

/// The full reproduction grid, scaled to `steps` optimizer steps per run.
pub fn paper_preset_with_steps(steps: usize) -> Vec<SweepSpec> {
    let exact = TrainConfig { steps, ..TrainConfig::exact(TargetSpec::reverse(1.0)) };
    let mc = TrainConfig { steps, ..TrainConfig::monte_carlo(TargetSpec::reverse(1.0), DEFAULT_BATCH, 0) };
    let mara_tau = scenario_by_name("mara_toy").and_then(|s| s.tau).expect("mara_toy sets tau");
    vec![
        spec("fig2_two_mode", &FIG2_BETAS, &SEEDS, exact, None),
        spec("fig2_two_mode", &FIG2_BETAS, &SEEDS, mc, None),
        spec("equal_reference_varied_reward", &FIG2_BETAS, &[0], exact, None),
        spec("forward_off_support", &FIG2_BETAS, &[0], exact, None),
        spec("equal_reward_unequal_support", &EQUAL_REWARD_BETAS, &[0], exact, None),
        spec("mara_toy", &MARA_BETAS, &[0], exact, None),
        spec("mara_toy", &MARA_BETAS, &[0], exact, Some(MaraConfig::constant(mara_tau, 1.0))),
    ]
}

/// The full reproduction grid with the default 3000 steps.
pub fn paper_preset() -> Vec<SweepSpec> {
    paper_preset_with_steps(crate::trainer::DEFAULT_STEPS)
}
