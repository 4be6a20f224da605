use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Analytic targets, MARA and policy-gradient training on finite answer spaces.
#[derive(Debug, Parser)]
#[command(name = "kllab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the analytic optimum of a regularized objective.
    Target(TargetArgs),
    /// Log-probability ratio of two indices under the reverse-KL target.
    Ratio(RatioArgs),
    /// Coefficient at which two indices receive equal reverse-KL target mass.
    FlipBeta(FlipArgs),
    /// Apply MARA to a batch of indices.
    Augment(AugmentArgs),
    /// Train one policy and write its trace.
    Train(TrainArgs),
    /// Run a grid of training runs and write a report.
    Sweep(SweepArgs),
    /// Rebuild a report from a previous sweep's records.json.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Reverse,
    Forward,
    Generalized,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineArg {
    None,
    BatchMean,
    LeaveOneOut,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum View {
    /// Augmented rewards, own reference probabilities.
    Rewards,
    /// Anchor reward and anchor reference probability.
    Reference,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "KLLAB_OUT", default_value = "kllab-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MaraArgs {
    /// Enable MARA with a constant reward threshold.
    #[arg(long, conflicts_with = "percentile")]
    tau: Option<f64>,
    /// Enable MARA with a batch-quantile threshold, q in (0, 1).
    #[arg(long)]
    percentile: Option<f64>,
}

#[derive(Debug, Args)]
struct TargetArgs {
    /// Builtin scenario name or path to a scenario TOML.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    beta: f64,
    /// Entropy bonus for the generalized objective.
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Also write an SVG of the target to this file.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatioArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    i: usize,
    #[arg(long)]
    j: usize,
}

#[derive(Debug, Args)]
struct FlipArgs {
    #[arg(long)]
    scenario: String,
    /// First index; defaults to the first reward mode's peak.
    #[arg(long)]
    i: Option<usize>,
    /// Second index; defaults to the second reward mode's peak.
    #[arg(long)]
    j: Option<usize>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    beta: f64,
    /// Batch of support indices, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    indices: Vec<usize>,
    #[command(flatten)]
    mara: MaraArgs,
    #[arg(long, value_enum, default_value = "rewards")]
    view: View,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Monte-Carlo batch size; implies --mode monte-carlo.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    mara: MaraArgs,
    /// Output directory.
    #[arg(long, env = "KLLAB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Run the built-in reproduction grid.
    #[arg(long, value_enum, conflicts_with_all = ["config", "scenario", "kind", "beta", "seed"])]
    preset: Option<Preset>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    /// Objective kinds, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    kind: Vec<Kind>,
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    mara: MaraArgs,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall-clock time per run (makes records.csv non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Output directory.
    #[arg(long, env = "KLLAB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory containing records.json from an earlier sweep.
    #[arg(long)]
    from: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Target(a) => commands::target(a),
        Command::Ratio(a) => commands::ratio(a),
        Command::FlipBeta(a) => commands::flip_beta(a),
        Command::Augment(a) => commands::augment(a),
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
