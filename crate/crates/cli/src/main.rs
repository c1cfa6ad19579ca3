mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use scribble_da::trainer::Mode;

#[derive(Parser, Debug)]
#[command(name = "scribble-da", about = "Scribble-supervised domain adaptation with dense CRF regularizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic two-domain dataset.
    GenData(GenDataArgs),
    /// Train a segmenter on a generated dataset.
    Train(TrainArgs),
    /// Predict every image of a split with a trained checkpoint.
    Infer(InferArgs),
    /// Mean-field CRF refinement of a unary map.
    Refine(RefineArgs),
    /// Score a checkpoint or a prediction directory against reference masks.
    Eval(EvalArgs),
    /// Time the lattice filter, optionally against the brute-force sum.
    FilterBench(FilterBenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub n_source: usize,
    #[arg(long, default_value_t = 10)]
    pub n_target: usize,
    #[arg(long, default_value_t = 4)]
    pub n_val: usize,
    #[arg(long, default_value_t = 20)]
    pub n_test: usize,
    #[arg(long, default_value_t = scribble_da::synthdata::DEFAULT_SIZE)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON training configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_manifest: PathBuf,
    /// Run directory; defaults to `runs/<unix time>-seed<seed>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(Mode::ALL.map(Mode::name)))]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Single-threaded run; outputs are reproducible byte for byte.
    #[arg(long)]
    pub deterministic: bool,
    /// Override any configuration key, e.g. `--set kernel.lambda_i=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct CrfArgs {
    #[arg(long, default_value_t = 15.0)]
    pub sigma_alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pairwise_weight: f64,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = scribble_da::crf::DEFAULT_DAMPING)]
    pub damping: f64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test-target")]
    pub split: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Refine the network output with scribble-clamped mean field.
    #[arg(long)]
    pub crf_postprocess: bool,
    #[command(flatten)]
    pub crf: CrfArgs,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Per-pixel label costs, `[H, W, C]`.
    #[arg(long)]
    pub unary: PathBuf,
    #[arg(long)]
    pub scribbles: Option<PathBuf>,
    /// Soft labeling output; the crisp labels go next to it as `<stem>_crisp.tg`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub crf: CrfArgs,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "predictions"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `<id>_pred.tg` label maps as written by `infer`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test-target")]
    pub split: String,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterBenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
    pub dim: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side of the cube the random features are drawn from, in kernel widths.
    #[arg(long, default_value_t = 5.0)]
    pub spread: f64,
    #[arg(long)]
    pub oracle: bool,
}

fn version_text() -> String {
    format!(
        "{} (core {}, {} build, {}-{})",
        env!("CARGO_PKG_VERSION"),
        scribble_da::VERSION,
        if cfg!(debug_assertions) { "debug" } else { "release" },
        std::env::consts::ARCH,
        std::env::consts::OS,
    )
}

fn main() -> ExitCode {
    let matches = match Cli::command().version(version_text()).try_get_matches() {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Refine(a) => commands::refine(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::FilterBench(a) => commands::filter_bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
