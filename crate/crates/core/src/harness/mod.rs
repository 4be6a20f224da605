//! Sweeps over objectives, coefficients and seeds, with metrics and reports.

pub mod criteria;
pub mod presets;
mod report;
mod svg;

pub use report::{emit_report, emit_report_with, read_records_json, write_records_csv, CSV_HEADER};

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::Categorical;
use crate::error::{Error, Result};
use crate::mara::MaraConfig;
use crate::scenario::Scenario;
use crate::targets::{forward_kl_target, TargetKind, TargetSpec};
use crate::trainer::{train, TrainConfig};

/// A grid of training runs on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub scenario: Scenario,
    /// Objective kinds (and η); each cell overrides β.
    pub objectives: Vec<TargetSpec>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// MARA settings; each cell overrides the β.
    #[serde(default)]
    pub mara: Option<MaraConfig>,
    /// Populate `wall_ms`. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objectives.is_empty() || self.betas.is_empty() || self.seeds.is_empty() {
            return Err(Error::Precondition("objectives, betas and seeds must all be nonempty".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::Precondition(format!("every beta must be > 0, got {b}")));
        }
        Ok(())
    }

    /// Every (objective, β, seed) cell in canonical order.
    pub fn cells(&self) -> Vec<(TargetSpec, u64, TrainConfig)> {
        let mut out = Vec::new();
        for obj in &self.objectives {
            for &beta in &self.betas {
                let objective = TargetSpec { beta, ..*obj };
                for &seed in &self.seeds {
                    let mara = self.mara.map(|m| MaraConfig { beta, ..m });
                    let cfg = TrainConfig { objective, seed, mara, ..self.train };
                    out.push((objective, seed, cfg));
                }
            }
        }
        out
    }
}

/// Coordinates and final metrics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub objective: TargetKind,
    pub beta: f64,
    pub eta: f64,
    pub seed: u64,
    pub gradient_mode: String,
    pub mara_enabled: bool,
    pub tau_rule: String,
    pub steps: usize,
    pub final_tv: f64,
    pub entropy: f64,
    pub answer_entropy: f64,
    pub mode1_mass: f64,
    pub mode2_mass: f64,
    pub target_mode1_mass: f64,
    pub target_mode2_mass: f64,
    pub anchor_churn: usize,
    /// The forward target sits in its boundary regime.
    pub boundary_case: bool,
    pub wall_ms: Option<u64>,
    pub final_masses: Vec<f64>,
    pub target_masses: Vec<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn mode_ratio(&self) -> f64 {
        self.mode1_mass / self.mode2_mass
    }

    pub fn target_mode_ratio(&self) -> f64 {
        self.target_mode1_mass / self.target_mode2_mass
    }
}

/// Shannon entropy of the policy's mass aggregated over partition cells and
/// renormalized over the covered mass.
pub fn answer_entropy(policy: &Categorical, partition: &[Vec<usize>]) -> Result<f64> {
    let mut seen = BTreeSet::new();
    for cell in partition {
        for &i in cell {
            if i >= policy.len() {
                return Err(Error::InvalidPartition(format!("index {i} out of range")));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidPartition(format!("index {i} appears in two cells")));
            }
        }
    }
    let masses: Vec<f64> = partition.iter().map(|c| policy.mass_of(c.iter().copied())).collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidPartition("partition covers no probability mass".into()));
    }
    Ok(masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.ln()
        })
        .sum())
}

fn pair(v: &[f64]) -> (f64, f64) {
    (v.first().copied().unwrap_or(f64::NAN), v.get(1).copied().unwrap_or(f64::NAN))
}

fn run_cell(s: &Scenario, objective: TargetSpec, seed: u64, cfg: &TrainConfig, timing: bool) -> RunRecord {
    let mut rec = RunRecord {
        scenario: s.name.clone(),
        objective: objective.kind,
        beta: objective.beta,
        eta: objective.eta,
        seed,
        gradient_mode: cfg.gradient_mode.as_str().to_string(),
        mara_enabled: cfg.mara.is_some(),
        tau_rule: cfg.mara.map(|m| m.threshold.describe()).unwrap_or_default(),
        steps: cfg.steps,
        final_tv: f64::NAN,
        entropy: f64::NAN,
        answer_entropy: f64::NAN,
        mode1_mass: f64::NAN,
        mode2_mass: f64::NAN,
        target_mode1_mass: f64::NAN,
        target_mode2_mass: f64::NAN,
        anchor_churn: 0,
        boundary_case: false,
        wall_ms: None,
        final_masses: Vec::new(),
        target_masses: Vec::new(),
        error: None,
    };
    let start = Instant::now();
    let outcome = train(s, cfg).and_then(|r| {
        let partition: Vec<Vec<usize>> = s.mode_ranges().into_iter().map(|r| r.collect()).collect();
        let ae = if partition.is_empty() { f64::NAN } else { answer_entropy(&r.final_policy, &partition)? };
        let boundary = objective.kind == TargetKind::ForwardKl
            && cfg.mara.is_none()
            && forward_kl_target(s, objective.beta)?.boundary_case;
        Ok((r, ae, boundary))
    });
    match outcome {
        Ok((r, ae, boundary)) => {
            let last = r.trace.last().expect("steps >= 1");
            (rec.mode1_mass, rec.mode2_mass) = pair(&s.mode_masses(&r.final_policy));
            (rec.target_mode1_mass, rec.target_mode2_mass) = pair(&s.mode_masses(&r.target));
            rec.final_tv = last.tv;
            rec.entropy = last.entropy;
            rec.answer_entropy = ae;
            rec.anchor_churn = r.anchor_churn;
            rec.boundary_case = boundary;
            rec.final_masses = r.final_policy.masses();
            rec.target_masses = r.target.masses();
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    if timing {
        rec.wall_ms = Some(start.elapsed().as_millis() as u64);
    }
    rec
}

/// Runs every cell of `spec` on `workers` threads. Records come back in
/// canonical (objective, β, seed) order regardless of scheduling; a failing
/// cell yields a record with `error` set.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    if workers == 0 {
        return Err(Error::Precondition("workers must be at least 1".into()));
    }
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Precondition(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|(objective, seed, cfg)| run_cell(&spec.scenario, *objective, *seed, cfg, spec.timing))
            .collect()
    }))
}

/// Bar chart of a single distribution.
pub fn distribution_svg(title: &str, masses: &[f64]) -> String {
    svg::chart(title, &[svg::Panel { label: String::new(), bars: masses.to_vec(), line: Vec::new() }])
}

/// Runs several sweeps back to back on one pool size.
pub fn run_sweeps(specs: &[SweepSpec], workers: usize) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for spec in specs {
        out.extend(run_sweep(spec, workers)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::scenario_by_name;

    fn small_spec() -> SweepSpec {
        SweepSpec {
            scenario: scenario_by_name("fig2_two_mode").unwrap(),
            objectives: vec![TargetSpec::reverse(1.0), TargetSpec::forward(1.0)],
            betas: vec![0.1, 0.5],
            seeds: vec![0, 1],
            train: TrainConfig { steps: 100, ..TrainConfig::monte_carlo(TargetSpec::reverse(1.0), 8, 0) },
            mara: None,
            timing: false,
        }
    }

    #[test]
    fn answer_entropy_examples() {
        let p = Categorical::from_masses(&[0.25, 0.5, 0.25, 0.0]).unwrap();
        assert_eq!(answer_entropy(&p, &[vec![0, 1, 2]]).unwrap(), 0.0);
        let two = answer_entropy(&p, &[vec![0, 2], vec![1]]).unwrap();
        assert!((two - 2f64.ln()).abs() < 1e-15);
        let q = answer_entropy(&p, &[vec![0], vec![1, 2]]).unwrap();
        assert!((q - 0.5623).abs() < 1e-4);
        assert!(matches!(answer_entropy(&p, &[vec![0, 1], vec![1]]), Err(Error::InvalidPartition(_))));
        assert!(matches!(answer_entropy(&p, &[vec![3]]), Err(Error::InvalidPartition(_))));
    }

    #[test]
    fn sweep_is_worker_independent() {
        let spec = small_spec();
        let a = run_sweep(&spec, 1).unwrap();
        let b = run_sweep(&spec, 8).unwrap();
        assert_eq!(a.len(), 8);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_records_csv(&a, &mut ca).unwrap();
        write_records_csv(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(String::from_utf8(ca).unwrap().lines().count(), 9);
    }

    #[test]
    fn sweep_preconditions() {
        let mut spec = small_spec();
        spec.seeds.clear();
        assert!(matches!(run_sweep(&spec, 1), Err(Error::Precondition(_))));
        let mut spec = small_spec();
        spec.betas.push(0.0);
        assert!(run_sweep(&spec, 1).is_err());
        assert!(run_sweep(&small_spec(), 0).is_err());
    }

    #[test]
    fn failing_cells_are_recorded() {
        let mut spec = small_spec();
        spec.mara = Some(MaraConfig::constant(5.0, 1.0));
        let records = run_sweep(&spec, 2).unwrap();
        assert_eq!(records.len(), 8);
        assert!(records.iter().all(|r| r.failed()));
    }

    #[test]
    fn metrics_are_in_range() {
        for r in run_sweep(&small_spec(), 4).unwrap() {
            assert!((0.0..=1.0).contains(&r.final_tv));
            assert!(r.entropy >= 0.0 && r.entropy <= 100f64.ln() + 1e-12);
            assert!(r.answer_entropy >= 0.0 && r.answer_entropy <= 2f64.ln() + 1e-12);
        }
    }
}
