//! `promptlab` command-line driver.
//!
//! Exit status: 0 when every check of the subcommand passed, 1 when a check
//! failed (artifacts are still written), 2 on configuration, checkpoint or
//! I/O errors.

mod checks;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promptlab::Precision;

#[derive(Parser, Debug)]
#[command(name = "promptlab", version, about = "Prompt-tuning experiments on a synthetic noisy speech corpus")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Experiment config (TOML). Defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed: tuning, attack prompts and probe resampling derive from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Numeric precision; checkpoint-reading commands use the stored one.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Overrides `corpus_seed` from the config.
    #[arg(long, global = true)]
    pub corpus_seed: Option<u64>,
    /// Output directory for checkpoints, CSVs and JSON summaries.
    #[arg(long, global = true, env = "PROMPTLAB_CACHE", default_value = "promptlab-out")]
    pub out: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TunedArgs {
    /// Tuned checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PartitionArg {
    /// Partition JSON from `partition`; derived on the fly when absent.
    #[arg(long)]
    pub partition: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the corpus manifest and per-split feature blobs.
    GenerateCorpus,
    /// Train the backbone on clean data and freeze it.
    Pretrain,
    /// Tune prompts and head against a frozen backbone.
    PromptTune {
        #[arg(long)]
        backbone: PathBuf,
        /// Prompt count; 0 trains the head-only baseline.
        #[arg(long)]
        prompts: Option<usize>,
    },
    /// Log-spaced learning-rate sweep scored on dev-clean.
    GridLr {
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        prompts: Option<usize>,
        #[arg(long, default_value_t = 3)]
        points: usize,
    },
    /// WER on the clean, other and noisy test sets.
    Eval {
        #[command(flatten)]
        tuned: TunedArgs,
        /// Also score the OOD-noisy set.
        #[arg(long)]
        ood: bool,
    },
    /// Replace the tuned prompts with random and zero prompts.
    Attack {
        #[command(flatten)]
        tuned: TunedArgs,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Evaluate the tuned model with every prompt removed.
    RemovePrompts {
        #[command(flatten)]
        tuned: TunedArgs,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Drop one prompt at a time.
    Ablate {
        #[command(flatten)]
        tuned: TunedArgs,
    },
    /// Cluster prompts into content and noise sets.
    Partition {
        #[command(flatten)]
        tuned: TunedArgs,
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Evaluate full, content-only and noise-only prompt subsets.
    Subsets {
        #[command(flatten)]
        tuned: TunedArgs,
        #[command(flatten)]
        partition: PartitionArg,
    },
    /// Two-dimensional principal projection of the prompts.
    Project {
        #[command(flatten)]
        tuned: TunedArgs,
        #[command(flatten)]
        partition: PartitionArg,
    },
    /// Noise-type probes on pooled encoder features.
    Probe {
        #[command(flatten)]
        tuned: TunedArgs,
        #[command(flatten)]
        partition: PartitionArg,
        /// Pool over prompt positions as well as frames.
        #[arg(long)]
        include_prompts: bool,
    },
    /// Zero-shot adaptation to the OOD noise family.
    Adapt {
        #[command(flatten)]
        tuned: TunedArgs,
        #[arg(long)]
        baseline: PathBuf,
        #[command(flatten)]
        partition: PartitionArg,
        /// Restrict bias clips to one OOD subtype (keyboard, printer).
        #[arg(long)]
        ood_family: Option<String>,
        #[arg(long)]
        n_clips: Option<usize>,
        /// Skip RMS normalization of the bias vector.
        #[arg(long)]
        raw: bool,
        /// Pool the clips without the tuned prompts in place.
        #[arg(long)]
        promptless: bool,
    },
    /// Check a checkpoint container and print its parameter counts.
    ValidateCheckpoint { path: PathBuf },
    /// Full pipeline: every table and figure analog plus summary.json.
    ReproduceAll,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(results) => {
            for c in &results {
                println!("{c}");
            }
            if results.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
