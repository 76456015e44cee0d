//! `semgest` command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Mode;

/// Bad input or mismatched artifacts; exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "semgest", version, about = "Speech-driven gesture synthesis with semantic gesture retrieval")]
pub struct Cli {
    /// Pipeline configuration (TOML). Relative paths in it start at its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded numerics for bit-reproducible runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Token-rate audio features and beat times for a WAV file.
    ExtractFeatures {
        #[arg(long)]
        audio: PathBuf,
        /// Output stem; writes <stem>.feat and <stem>.beats.
        #[arg(long)]
        out: PathBuf,
        /// Paired motion; the feature length follows its token count.
        #[arg(long)]
        motion: Option<PathBuf>,
    },
    /// Fit the motion codec on BVH clips.
    TrainCodec {
        /// Training clips; defaults to every BVH in the training directory.
        #[arg(long, num_args = 1..)]
        motion: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode a BVH clip to tokens.
    Tokenize {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode tokens to a BVH clip.
    Detokenize {
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the rhythm generator on paired WAV/BVH takes.
    TrainGenerator {
        /// Directory of <stem>.wav / <stem>.bvh pairs; defaults to the training directory.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune the generator toward merged gestures.
    Sft {
        /// JSON list of {"audio", "transcript", "annotations"?} items.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the gesture library and assign identifiers.
    BuildIndex {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instruction-tuning records from annotated transcripts (JSONL).
    BuildInstruct {
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find gestures for a timed transcript.
    Retrieve {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Manual mode: a (possibly hand-edited) merge plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Manual mode: an annotation list or earlier retrieval output.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Place retrieved gestures on the beat grid.
    Plan {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate motion for speech and merge semantic gestures into it.
    Synthesize {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use these annotations instead of retrieving.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Use this merge plan as is.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Also write the unmerged motion.
        #[arg(long)]
        baseline_out: Option<PathBuf>,
    },
    /// Compute a metric and write a JSON report.
    Evaluate {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
        /// Per-item values as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// fgd: reference clips.
        #[arg(long, num_args = 1..)]
        real: Vec<PathBuf>,
        /// fgd: generated clips.
        #[arg(long, num_args = 1..)]
        generated: Vec<PathBuf>,
        /// sc: JSON list of {"motion", "text"} pairs.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// accuracy, smatch: retrieval outputs.
        #[arg(long, num_args = 1..)]
        annotations: Vec<PathBuf>,
    },
    /// Library clips whose mean latent lies near an anchor clip.
    MatchCandidates {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Fgd,
    Sc,
    Accuracy,
    Smatch,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<semgest_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
