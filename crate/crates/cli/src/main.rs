mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// EfficientGCN toolkit: plans, complexity reports, gradient checks and desk-scale training.
#[derive(Debug, Parser)]
#[command(name = "effgcn", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// Compound scaling coefficient.
    #[arg(long, default_value_t = 0)]
    pub phi: u32,
    #[arg(long, default_value_t = 1.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.35)]
    pub beta: f64,
    #[arg(long, default_value = "sg", value_parser = ["basic", "bottle", "sep", "epsep", "sg"])]
    pub layer: String,
    /// Reduction or expansion ratio; defaults to the layer kind's own.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Largest hop distance D of the spatial partitions.
    #[arg(long = "max-distance", default_value_t = 2)]
    pub max_distance: usize,
    /// Temporal kernel length L.
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Accept alpha and beta that miss the alpha^2 beta = 2 constraint.
    #[arg(long)]
    pub allow_unconstrained: bool,
    /// Halve every stage width and the init block.
    #[arg(long)]
    pub mini: bool,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Print the stage table of a scaled architecture.
    Plan {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Count parameters and FLOPs per block.
    Profile {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long)]
        joints: Option<usize>,
        #[arg(long, default_value_t = 2)]
        bodies: usize,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare tape gradients with central finite differences.
    Gradcheck {
        /// Temporal layer kind to probe; all probes run when neither this nor --probe is given.
        #[arg(long, value_parser = ["basic", "bottle", "sep", "epsep", "sg"])]
        layer: Option<String>,
        /// Probe name such as sgc, st-joint-att, se-frame or mini-network.
        #[arg(long, conflicts_with = "layer")]
        probe: Option<String>,
        #[arg(long, default_value = "f64", value_parser = ["f32", "f64"])]
        dtype: String,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Turn raw sequences into joint, velocity and bone inputs.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Zero-pad every sequence to this many frames.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "f32", value_parser = ["f32", "f64"])]
        dtype: String,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic labelled dataset with train and eval splits.
    Synth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, default_value_t = 25)]
        joints: usize,
        /// Fraction of each class moved to the eval split.
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "f64", value_parser = ["f32", "f64"])]
        dtype: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train on `<data>/train`, evaluating on `<data>/eval` when present.
    Train {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 70)]
        epochs: usize,
        #[arg(long = "warmup-epochs", default_value_t = 10)]
        warmup_epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "f32", value_parser = ["f32", "f64"])]
        dtype: String,
        #[arg(long)]
        json: bool,
    },
    /// Accuracy and confusion matrix of a checkpoint.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Class activation map of one sequence as a frames x joints CSV.
    Cam {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Position of the sequence within the split, in file-name order.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Class to explain; defaults to the sequence's label.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Complexity over a grid of partition distances and kernel lengths.
    Sweep {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
        distances: Vec<usize>,
        #[arg(long, default_value = "3,5,7,9,11", value_delimiter = ',')]
        kernels: Vec<usize>,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long, default_value_t = 25)]
        joints: usize,
        #[arg(long, default_value_t = 2)]
        bodies: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Plan JSON; defaults to `plan.json` next to the checkpoint.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value = "f32", value_parser = ["f32", "f64"])]
    pub dtype: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match commands::run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
