//! Command-line entry points: corpus generation, training, evaluation,
//! gradient checks and feature-map inspection.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod inspect;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sfnet", version, about = "Continuous sign language recognition toolkit", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic continuous-gesture corpus.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(Box<TrainArgs>),
    /// Greedy-decode a manifest with a checkpoint and report WER.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of layers and losses.
    Gradcheck(GradcheckArgs),
    /// Dump per-block activation maps of one sample.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,
    #[arg(long, default_value_t = 200)]
    pub sentences: usize,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 5)]
    pub max_len: usize,
    #[arg(long, default_value_t = 12)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 30)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 5)]
    pub styles: usize,
    #[arg(long, default_value_t = 1)]
    pub test_styles: usize,
    #[arg(long, default_value_t = 3)]
    pub transition: usize,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out manifest evaluated during training.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Vocabulary file; defaults to vocab.txt next to the training manifest.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Key-value config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base settings before the config file: `desk` (small, CPU-friendly) or `paper`.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Output directory for checkpoints, logs and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
    /// Initialize frame and gloss levels from this checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Arbitrary `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub e_start: Option<usize>,
    /// Disable the gloss-level regularizer.
    #[arg(long)]
    pub no_regularizer: bool,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub early_stop_wer: Option<f64>,
    /// `csl` or `rwth` preprocessing.
    #[arg(long)]
    pub dataset_kind: Option<String>,
    #[arg(long)]
    pub crop_fraction: Option<f64>,
    #[arg(long)]
    pub decimation: Option<usize>,
    #[arg(long)]
    pub fixed_frames: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub gloss_hidden: Option<usize>,
    #[arg(long)]
    pub sentence_hidden: Option<usize>,
    #[arg(long)]
    pub no_3d: bool,
    #[arg(long)]
    pub no_framing: bool,
    #[arg(long)]
    pub no_gloss_lstm: bool,
    /// Train the isolated-word classifier instead of the sentence model.
    #[arg(long)]
    pub word_level: bool,
    /// Only print the final summary.
    #[arg(long)]
    pub quiet: bool,
    /// Resolve and write config.txt, then exit without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to vocab.txt next to the manifest.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    /// Also print per-sample meta-frame argmax strings.
    #[arg(long)]
    pub dump_alignments: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// `all` or one of conv2d, conv3d, mict, bn, seq_bn, lstm, bilstm, fc, ctc, kl.
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace the sample's frames with zeros.
    #[arg(long)]
    pub zero_input: bool,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<sfnet::Error> for CliError {
    fn from(e: sfnet::Error) -> Self {
        match e {
            sfnet::Error::Config(_) => CliError::Usage(e.to_string()),
            sfnet::Error::NonFinite(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Inspect(a) => inspect::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
