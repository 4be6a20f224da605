use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use kllab::config::{MaraSection, ModeName, RunFile};
use kllab::harness::criteria::{self, CriterionResult};
use kllab::harness::{distribution_svg, emit_report_with, presets, read_records_json, run_sweep, run_sweeps, SweepSpec};
use kllab::mara::{augment_ref_view, augment_rewards, MaraConfig, ThresholdRule};
use kllab::targets::{flip_beta as flip, forward_kl_target, log_prob_ratio};
use kllab::trainer::{write_trace_csv, Baseline, GradientMode, TrainConfig, DEFAULT_BATCH};
use kllab::{resolve_scenario, Error, Result, TargetKind, TargetSpec};

use crate::{AugmentArgs, BaselineArg, FlipArgs, Kind, MaraArgs, Mode, RatioArgs, ReportArgs, SweepArgs, TargetArgs, TrainArgs, View};

const DEFAULT_OUT: &str = "kllab-out";

/// Exit status for a failed command: 2 for bad input, 3 for a well-posed
/// question with a negative answer, 1 for anything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidCoefficient(_)
        | Error::InvalidConfig(_)
        | Error::Parse(_)
        | Error::Precondition(_)
        | Error::LengthMismatch { .. }
        | Error::InvalidAnchor(_)
        | Error::InvalidDistribution(_)
        | Error::InvalidPartition(_)
        | Error::UndefinedRatio { .. } => 2,
        Error::NoFiniteFlip(_) | Error::InfiniteDivergence { .. } => 3,
        Error::SolverFailure(_) | Error::NonFiniteGradient { .. } | Error::Io(_) => 1,
    }
}

impl From<Kind> for TargetKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Reverse => TargetKind::ReverseKl,
            Kind::Forward => TargetKind::ForwardKl,
            Kind::Generalized => TargetKind::Generalized,
        }
    }
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::None => Baseline::None,
            BaselineArg::BatchMean => Baseline::BatchMean,
            BaselineArg::LeaveOneOut => Baseline::LeaveOneOut,
        }
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required (or set it in the config file)")))
}

fn load_file(path: Option<&PathBuf>) -> Result<RunFile> {
    path.map(|p| RunFile::load(p)).transpose().map(Option::unwrap_or_default)
}

pub fn target(a: TargetArgs) -> Result<ExitCode> {
    let s = resolve_scenario(&a.scenario)?;
    let spec = TargetSpec { kind: a.kind.into(), beta: a.beta, eta: a.eta };
    spec.validate()?;
    let forward = match spec.kind {
        TargetKind::ForwardKl => Some(forward_kl_target(&s, spec.beta)?),
        _ => None,
    };
    let dist = match &forward {
        Some(sol) => sol.distribution.clone(),
        None => spec.target(&s)?,
    };
    println!("index\tmass");
    for i in 0..dist.len() {
        println!("{i}\t{:.12}", dist.mass(i));
    }
    if let Some(sol) = &forward {
        println!("lambda\t{}", sol.lambda);
        println!("boundary_case\t{}", sol.boundary_case);
        println!("off_support_mass\t{}", sol.off_support_mass);
    }
    if let Some(path) = a.svg {
        let title = format!("{}: {} target, beta = {}", s.name, spec.kind, spec.beta);
        fs::write(&path, distribution_svg(&title, &dist.masses()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn ratio(a: RatioArgs) -> Result<ExitCode> {
    let s = resolve_scenario(&a.scenario)?;
    println!("{}", log_prob_ratio(&s, a.beta, a.i, a.j)?);
    Ok(ExitCode::SUCCESS)
}

pub fn flip_beta(a: FlipArgs) -> Result<ExitCode> {
    let s = resolve_scenario(&a.scenario)?;
    let peaks = s.peaks();
    let i = match a.i {
        Some(i) => i,
        None => required(peaks.first().copied(), "i")?,
    };
    let j = match a.j {
        Some(j) => j,
        None => required(peaks.get(1).copied(), "j")?,
    };
    println!("{}", flip(&s, i, j)?);
    Ok(ExitCode::SUCCESS)
}

fn threshold_rule(tau: Option<f64>, percentile: Option<f64>) -> Option<ThresholdRule> {
    match (tau, percentile) {
        (Some(t), _) => Some(ThresholdRule::Constant(t)),
        (None, Some(q)) => Some(ThresholdRule::BatchPercentile(q)),
        (None, None) => None,
    }
}

/// MARA settings from flags, falling back to the config file. The β is a
/// placeholder the caller overrides.
fn mara_config(flags: &MaraArgs, file: Option<&MaraSection>, beta: f64) -> Option<MaraConfig> {
    let tiebreak = file.map(|m| m.tiebreak).unwrap_or_default();
    threshold_rule(flags.tau, flags.percentile)
        .or_else(|| file.and_then(|m| threshold_rule(m.tau, m.percentile)))
        .map(|threshold| MaraConfig { threshold, beta, tiebreak })
}

pub fn augment(a: AugmentArgs) -> Result<ExitCode> {
    let s = resolve_scenario(&a.scenario)?;
    let cfg = mara_config(&a.mara, None, a.beta)
        .ok_or_else(|| Error::InvalidConfig("one of --tau or --percentile is required".into()))?;
    cfg.validate()?;
    if let Some(&bad) = a.indices.iter().find(|&&i| i >= s.n()) {
        return Err(Error::Precondition(format!("index {bad} out of range for n = {}", s.n())));
    }
    let out = match a.view {
        View::Rewards => augment_rewards(&a.indices, &s, &cfg),
        View::Reference => augment_ref_view(&a.indices, &s, &cfg),
    };
    println!("threshold\t{}", out.threshold_used);
    match out.anchor_index() {
        Some(z) => println!("anchor\t{z}"),
        None => println!("anchor\tnone"),
    }
    println!("position\tindex\traw_reward\taugmented_reward\tref_logprob");
    for p in 0..out.indices.len() {
        println!(
            "{p}\t{}\t{}\t{}\t{}",
            out.indices[p], out.raw_rewards[p], out.augmented_rewards[p], out.augmented_ref_logprobs[p]
        );
    }
    Ok(ExitCode::SUCCESS)
}

struct TrainFlags<'a> {
    mode: Option<Mode>,
    batch: Option<usize>,
    baseline: Option<BaselineArg>,
    steps: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    mara: &'a MaraArgs,
}

/// Training template shared by `train` and `sweep`, flags over file over
/// defaults.
fn train_template(objective: TargetSpec, f: &TrainFlags, file: &RunFile) -> TrainConfig {
    let t = &file.train;
    let monte_carlo = match (f.mode, f.batch, t.mode, t.batch) {
        (Some(m), ..) => matches!(m, Mode::MonteCarlo),
        (None, Some(_), ..) => true,
        (None, None, Some(m), _) => m == ModeName::MonteCarlo,
        (None, None, None, b) => b.is_some(),
    };
    let gradient_mode = if monte_carlo {
        GradientMode::MonteCarlo {
            batch: f.batch.or(t.batch).unwrap_or(DEFAULT_BATCH),
            baseline: f.baseline.map(Baseline::from).or(t.baseline).unwrap_or_default(),
        }
    } else {
        GradientMode::Exact
    };
    let defaults = TrainConfig::exact(objective);
    TrainConfig {
        objective,
        gradient_mode,
        forward_regularizer: t.forward_regularizer.unwrap_or_default(),
        mara: mara_config(f.mara, file.mara.as_ref(), objective.beta),
        steps: f.steps.or(t.steps).unwrap_or(defaults.steps),
        learning_rate: f.lr.or(t.learning_rate).unwrap_or(defaults.learning_rate),
        adam: t.adam.unwrap_or_default(),
        seed: f.seed.or(t.seed).unwrap_or(0),
    }
}

fn file_kind(file: &RunFile) -> Result<Option<TargetKind>> {
    file.objective.kind.as_deref().map(str::parse).transpose()
}

fn out_dir(flag: Option<PathBuf>, file: &RunFile) -> PathBuf {
    flag.or_else(|| file.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let file = load_file(a.config.as_ref())?;
    let s = resolve_scenario(&required(a.scenario.or(file.scenario.clone()), "scenario")?)?;
    let kind = match a.kind {
        Some(k) => k.into(),
        None => required(file_kind(&file)?, "kind")?,
    };
    let beta = required(a.beta.or(file.objective.beta), "beta")?;
    let eta = a.eta.or(file.objective.eta).unwrap_or(0.0);
    let objective = TargetSpec { kind, beta, eta };
    let flags = TrainFlags {
        mode: a.mode,
        batch: a.batch,
        baseline: a.baseline,
        steps: a.steps,
        lr: a.lr,
        seed: a.seed,
        mara: &a.mara,
    };
    let cfg = train_template(objective, &flags, &file);
    let result = kllab::trainer::train(&s, &cfg)?;

    let out = out_dir(a.out, &file);
    fs::create_dir_all(&out)?;
    let trace_path = out.join("trace.csv");
    write_trace_csv(&result.trace, fs::File::create(&trace_path)?)?;
    let result_path = out.join("result.json");
    let json = serde_json::json!({ "scenario": s.name, "config": cfg, "result": result });
    fs::write(&result_path, serde_json::to_string_pretty(&json).map_err(|e| Error::Parse(e.to_string()))? + "\n")?;

    let last = result.trace.last().expect("steps >= 1");
    println!("steps\t{}", last.step);
    println!("final_tv\t{}", last.tv);
    println!("entropy\t{}", last.entropy);
    println!("objective\t{}", last.objective);
    if cfg.mara.is_some() {
        println!("anchor_churn\t{}", result.anchor_churn);
    }
    eprintln!("wrote {} and {}", trace_path.display(), result_path.display());
    Ok(ExitCode::SUCCESS)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn finish_report(records: &[kllab::harness::RunRecord], out: &Path) -> Result<ExitCode> {
    let results: Vec<CriterionResult> = criteria::evaluate(records);
    let manifest = emit_report_with(records, &results, out)?;
    for c in &results {
        println!("criterion {} {}: {} ({})", c.id, c.verdict(), c.title, c.measured);
    }
    for path in &manifest {
        eprintln!("wrote {}", path.display());
    }
    let failed_runs = records.iter().filter(|r| r.failed()).count();
    if failed_runs > 0 {
        eprintln!("{failed_runs} of {} runs failed; see summary.md", records.len());
    }
    if criteria::none_failed(&results) && failed_runs == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}

pub fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let file = load_file(a.config.as_ref())?;
    let workers = a.workers.or(file.workers).unwrap_or_else(default_workers);
    let out = out_dir(a.out.clone(), &file);

    let records = if a.preset.is_some() {
        let mut specs = presets::paper_preset();
        if let Some(steps) = a.steps {
            specs = presets::paper_preset_with_steps(steps);
        }
        for spec in &mut specs {
            spec.timing = a.timing;
        }
        run_sweeps(&specs, workers)?
    } else {
        let s = resolve_scenario(&required(a.scenario.clone().or(file.scenario.clone()), "scenario")?)?;
        let eta = a.eta.or(file.objective.eta).unwrap_or(0.0);
        let kinds: Vec<TargetKind> = if !a.kind.is_empty() {
            a.kind.iter().map(|&k| k.into()).collect()
        } else if let Some(names) = &file.sweep.objectives {
            names.iter().map(|n| n.parse()).collect::<Result<_>>()?
        } else {
            vec![required(file_kind(&file)?, "kind")?]
        };
        let betas = if !a.beta.is_empty() {
            a.beta.clone()
        } else {
            file.sweep.betas.clone().or(file.objective.beta.map(|b| vec![b])).unwrap_or_default()
        };
        let seeds = if !a.seed.is_empty() { a.seed.clone() } else { file.sweep.seeds.clone().unwrap_or_else(|| vec![0]) };
        let placeholder = TargetSpec { kind: kinds.first().copied().unwrap_or(TargetKind::ReverseKl), beta: 1.0, eta };
        let flags = TrainFlags {
            mode: a.mode,
            batch: a.batch,
            baseline: a.baseline,
            steps: a.steps,
            lr: a.lr,
            seed: None,
            mara: &a.mara,
        };
        let train = train_template(placeholder, &flags, &file);
        let spec = SweepSpec {
            scenario: s,
            objectives: kinds.into_iter().map(|kind| TargetSpec { kind, beta: 1.0, eta }).collect(),
            betas,
            seeds,
            mara: train.mara,
            train,
            timing: a.timing || file.sweep.timing,
        };
        run_sweep(&spec, workers)?
    };
    finish_report(&records, &out)
}

pub fn report(a: ReportArgs) -> Result<ExitCode> {
    let records = read_records_json(&a.from.join("records.json"))?;
    finish_report(&records, &a.out.out)
}
