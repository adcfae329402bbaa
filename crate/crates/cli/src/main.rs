use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use commands::UsageError;

#[derive(Debug, Parser)]
#[command(name = "modunwrap", version, about = "Recover modulo-folded multichannel recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` file with synth.*, data.*, train.*, model.*, split.* and baseline.* keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads for window-parallel stages
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multichannel cohort as an unfolded container
    Synth {
        #[command(flatten)]
        common: Common,
        /// Overrides synth.seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold a container or a directory of STEW recordings at λ
    Fold {
        #[command(flatten)]
        common: Common,
        /// Container, or directory of STEW `.txt` recordings
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on the training subjects of a folded container
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Must match the container's λ; defaults to it
        #[arg(long)]
        lambda: Option<f64>,
        /// Overrides train.seed
        #[arg(long)]
        seed: Option<u64>,
        /// Disable pre-estimation guided feature injection
        #[arg(long)]
        no_pgfi: bool,
        /// Hold out this training fold (0-based)
        #[arg(long)]
        fold: Option<usize>,
        /// Overrides train.epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct windows with a classical method or a trained network
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// itoh, mrf, sparse or model
        #[arg(long)]
        method: String,
        /// Checkpoint written by `train` (required for --method model)
        #[arg(long)]
        model: Option<PathBuf>,
        /// all, train, val or test
        #[arg(long, default_value = "all")]
        subjects: String,
        /// Prediction container
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction container against ground truth
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Second prediction container for a paired t-test on per-window MSE
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Metrics summary; per-window rows go to `<out>.windows.tsv`
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the classical baselines and score them
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// itoh, mrf or sparse; all three when omitted
        #[arg(long)]
        method: Option<String>,
        /// all, train, val or test
        #[arg(long, default_value = "test")]
        subjects: String,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on a small model
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional report file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump one reconstructed window as a tab-separated plot table
    ExportPlot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Position of the window in the prediction container
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match cli.command {
        Command::Synth { common, seed, out } => commands::synth(&common, seed, &out, &argv),
        Command::Fold {
            common,
            data,
            lambda,
            out,
        } => commands::fold(&common, &data, lambda, &out, &argv),
        Command::Train {
            common,
            data,
            lambda,
            seed,
            no_pgfi,
            fold,
            epochs,
            out,
        } => commands::train(
            &common,
            commands::TrainArgs {
                data: &data,
                lambda,
                seed,
                no_pgfi,
                fold,
                epochs,
                out: &out,
            },
            &argv,
        ),
        Command::Recover {
            common,
            data,
            method,
            model,
            subjects,
            out,
        } => commands::recover(&common, &data, &method, model.as_deref(), &subjects, &out, &argv),
        Command::Eval {
            common,
            data,
            pred,
            compare,
            out,
        } => commands::eval(&common, &data, &pred, compare.as_deref(), &out, &argv),
        Command::Baseline {
            common,
            data,
            method,
            subjects,
            out,
        } => commands::baseline(&common, &data, method.as_deref(), &subjects, &out, &argv),
        Command::Gradcheck { common, seed, out } => commands::gradcheck(&common, seed, out.as_deref(), &argv),
        Command::ExportPlot {
            common,
            data,
            pred,
            window,
            out,
        } => commands::export_plot(&common, &data, &pred, window, &out, &argv),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
