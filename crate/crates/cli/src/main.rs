//! `madgate`: extract training examples, train the debate trigger, run the
//! selective pipeline and render reports.
//!
//! Exit codes: 0 when every record succeeded, 2 when some records failed,
//! 1 on a fatal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "madgate", version, about = "Selective multi-agent debate pipeline")]
struct Cli {
    /// Log filter, e.g. `info` or `madgate_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the self-critique pass over a dataset and write labeled examples.
    Extract(ExtractArgs),
    /// Train the debate trigger classifier on extracted examples.
    Train(TrainArgs),
    /// Run the full pipeline and write reports.
    Run(RunArgs),
    /// Render a saved machine-readable report as text.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModalityArg {
    Qa,
    Vqa,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceArg {
    Final,
    Initial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Selective,
    AlwaysDebate,
    NeverDebate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CalibrationArg {
    Ece,
    Bce,
    Mse,
}

/// Where replies come from: exactly one of a script or a live endpoint.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct BackendArgs {
    /// Scripted replies (JSON) for hermetic runs.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Live endpoint settings (JSON). The credential is read from the
    /// environment variable the file names.
    #[arg(long)]
    live_config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AssetArgs {
    /// Directory of prompt templates; the built-in set when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "qa")]
    modality: ModalityArg,
    /// Directory of word lists; the built-in set when omitted.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    assets: AssetArgs,
    /// Which reported confidence feeds the fusion.
    #[arg(long, value_enum, default_value = "final")]
    confidence_source: SourceArg,
    /// Output journal (one JSON line per record). Existing successful ids
    /// are skipped, so an interrupted run can be resumed.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Journal written by `extract`.
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics log; `<out>.metrics.jsonl` when omitted.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha1: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 6.0)]
    lambda: f64,
    #[arg(long, default_value_t = 5.0)]
    mu: f64,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[arg(long, default_value_t = 0.7)]
    tau: f64,
    #[arg(long, value_enum, default_value = "ece")]
    calibration_term: CalibrationArg,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "200,200,200,200,200,200")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lexicon directory the examples were extracted with.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    assets: AssetArgs,
    #[arg(long, value_enum, default_value = "selective")]
    mode: ModeArg,
    /// Override the model's threshold, in [0, 1].
    #[arg(long)]
    tau: Option<f64>,
    /// Machine-readable report of an always-debate run over the same data;
    /// fills in the breakdown for skipped records.
    #[arg(long)]
    counterfactual: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 5)]
    max_rounds: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `report.json` written by `run`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Run(a) => commands::run(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(commands::Status::AllSucceeded) => ExitCode::SUCCESS,
        Ok(commands::Status::PartialFailure(n)) => {
            eprintln!("{n} record(s) failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
