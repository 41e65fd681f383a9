use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod io;

#[derive(Parser, Debug)]
#[command(
    name = "funad",
    version,
    about = "Fully unsupervised anomaly detection on precomputed patch features"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a two-Gaussian feature set with labels.
    Synth(SynthArgs),
    /// Build an unlabeled training set from normals plus moved anomalies.
    Contaminate(ContaminateArgs),
    /// Distance statistics and pair-probability ratios.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Train the scoring network on unlabeled features.
    Train(TrainArgs),
    /// Score images and optionally render anomaly maps.
    Infer(InferArgs),
    /// Image and pixel AUROC of stored scores.
    Eval(EvalArgs),
    /// Pair-probability tables, histograms and matching ratios on the
    /// two-Gaussian motivation setting.
    ReproMotivation(ReproMotivationArgs),
    /// Contaminated-Gaussian training runs with held-out AUROC per epoch.
    ReproToy(ReproToyArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON generator config; defaults to the 16-dim motivation setting.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_normal: Option<usize>,
    #[arg(long)]
    pub n_anomaly: Option<usize>,
    #[arg(long)]
    pub patches_per_image: Option<usize>,
    /// Feature file to write; labels go next to it with a .funl extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["pool", "normal"])))]
pub struct ContaminateArgs {
    /// Labeled feature file to split into normals and anomalies.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long, requires = "anomaly")]
    pub normal: Option<PathBuf>,
    #[arg(long)]
    pub anomaly: Option<PathBuf>,
    /// Anomalies added per normal image.
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training feature file; written without labels.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth labels of the training set (default: <out>.truth.funl).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON with the moved anomaly indices and per-image sources.
    #[arg(long)]
    pub moved_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum StatsCommand {
    /// Pairwise distance histograms and matching ratios of a labeled set.
    Empirical(StatsEmpiricalArgs),
    /// Analytic within-distance probabilities and their ratios.
    Ratios(StatsRatiosArgs),
}

#[derive(Args, Debug)]
pub struct StatsEmpiricalArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Labels (default: the .funl next to the features).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long)]
    pub hist_csv: Option<PathBuf>,
    /// JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsRatiosArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_normal: f64,
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    pub sigma_anomaly: f64,
    /// Per-coordinate offset of the anomaly mean.
    #[arg(long, default_value_t = 0.0)]
    pub mu_gap: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 25)]
    pub n_tau: usize,
    /// CSV table (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mutual smoothness weight.
    #[arg(long = "lambda")]
    pub ms_weight: Option<f64>,
    #[arg(long)]
    pub tau_b: Option<f64>,
    #[arg(long)]
    pub tau_n: Option<f64>,
    #[arg(long)]
    pub tau_c: Option<f64>,
    #[arg(long)]
    pub sample_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_images: Option<usize>,
    #[arg(long)]
    pub hidden1: Option<usize>,
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// Where to write the trained weights and optimizer state.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// JSON-lines iteration log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Training-set labels, used only for bank purity in the log.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Labeled held-out features scored after every epoch.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Keep the weights of the best validation epoch.
    #[arg(long, requires = "validation")]
    pub select_best: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// CSV of `image,score`.
    #[arg(long)]
    pub scores_out: PathBuf,
    /// Anomaly maps (FUNA).
    #[arg(long)]
    pub maps_out: Option<PathBuf>,
    /// Map size as HxW (default: image size from the masks next to the features).
    #[arg(long)]
    pub map_size: Option<String>,
    #[arg(long, default_value_t = funad_core::inference::DEFAULT_BLUR_SIGMA)]
    pub blur_sigma: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// CSV written by `infer`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, requires = "masks")]
    pub maps: Option<PathBuf>,
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// JSON array of image indices left out of the metrics.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReproMotivationArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Directory for the CSV tables and the JSON report.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReproToyArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lambda")]
    pub ms_weight: Option<f64>,
    /// Print every n-th epoch of the trajectory.
    #[arg(long, default_value_t = 5)]
    pub every: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Contaminate(a) => commands::contaminate(a),
        Command::Stats(StatsCommand::Empirical(a)) => commands::stats_empirical(a),
        Command::Stats(StatsCommand::Ratios(a)) => commands::stats_ratios(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::ReproMotivation(a) => commands::repro_motivation(a),
        Command::ReproToy(a) => commands::repro_toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
