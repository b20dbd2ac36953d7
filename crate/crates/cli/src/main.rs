//! `agen`: corpus generation, training, sampling, evaluation and ablations
//! for the amodal sparse-structure generator.

mod commands;
mod config;
mod exit;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "agen", version, about = "Amodal sparse-structure generation toolkit")]
struct Cli {
    /// Upper bound on worker threads (every command currently runs on one).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; omitted fields use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed (and AGEN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a procedural training corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of procedural meshes.
        #[arg(long)]
        meshes: Option<usize>,
        /// Rendered views per mesh before rate filtering.
        #[arg(long)]
        views: Option<usize>,
    },
    /// Train the flow model on a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the total number of optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Also save a checkpoint every N steps.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
    },
    /// Generate occupancy grids for corpus objects.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Conditioning views per object.
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg_scale: Option<f64>,
        /// Alternate single-view conditioning across steps instead of fusing views.
        #[arg(long)]
        baseline_sequential: bool,
        /// Objects to sample: train, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also export each grid as an OBJ cube mesh.
        #[arg(long)]
        obj: bool,
    },
    /// Score generated grids against references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Conditioning grids for the partial recall.
        #[arg(long)]
        conditioning: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Also write per-object rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Allow one voxel of tolerance in the recall.
        #[arg(long)]
        dilate: bool,
    },
    /// Train (if needed) and evaluate the structural variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of full,-gating,-view-wise,-stereo,-all.
        #[arg(long, allow_hyphen_values = true)]
        variants: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Also evaluate the full model with 1..=N views.
        #[arg(long, default_value_t = 4)]
        view_sweep: usize,
    },
    /// Run quick internal consistency checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(exit::code::CONFIG);
    }
    let result = match cli.command {
        Command::GenData {
            common,
            out,
            meshes,
            views,
        } => commands::gen_data(&common, &out, meshes, views),
        Command::Train {
            common,
            corpus,
            out,
            resume,
            steps,
            checkpoint_every,
        } => commands::train(&common, &corpus, &out, resume.as_deref(), steps, checkpoint_every),
        Command::Sample {
            common,
            checkpoint,
            corpus,
            out,
            views,
            steps,
            cfg_scale,
            baseline_sequential,
            split,
            obj,
        } => commands::sample(
            &common,
            &commands::SampleArgs {
                checkpoint,
                corpus,
                out,
                views,
                steps,
                cfg_scale,
                baseline_sequential,
                split,
                obj,
            },
        ),
        Command::Eval {
            common,
            generated,
            reference,
            conditioning,
            report,
            csv,
            dilate,
        } => commands::eval(
            &common,
            &generated,
            &reference,
            conditioning.as_deref(),
            &report,
            csv.as_deref(),
            dilate,
        ),
        Command::Ablate {
            common,
            corpus,
            out,
            variants,
            steps,
            view_sweep,
        } => commands::ablate(&common, &corpus, &out, variants.as_deref(), steps, view_sweep),
        Command::Selftest => selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::from(exit::code::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
