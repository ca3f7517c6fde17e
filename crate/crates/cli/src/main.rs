use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use starnet::data::{ShapeFamily, Split};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "starnet", version, about = "Style-aware point-cloud auto-encoder and generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set ae_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed; falls back to the config, then `STARNET_SEED`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its train/test manifest.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated families: sphere, box, cylinder, toy-plane.
        #[arg(long, value_delimiter = ',', default_value = "sphere,box,cylinder,toy-plane")]
        families: Vec<ShapeFamily>,
        #[arg(long, default_value_t = 16)]
        count_per_family: usize,
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gaussian noise added to every point.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Write binary `.pcd` files instead of text `.xyz`.
        #[arg(long)]
        binary: bool,
    },
    /// Stage 1: train encoder and decoder on the reconstruction loss.
    TrainAe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a stage-1 checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-epoch CSV log (default: `<out>.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stage 2: train mapping network and critic with the decoder frozen.
    TrainGan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ae_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Encode and decode one cloud.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Subsample the input to this many points first.
        #[arg(long)]
        sample_n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sample clouds from the prior through the mapping network and decoder.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Decode points on the line through two latent codes.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Comma-separated α values (default −0.4 to 1.4 in steps of 0.2).
        #[arg(long, allow_hyphen_values = true)]
        alphas: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare a generated set against a reference set.
    Evaluate {
        /// Manifest file (its test split) or a directory of clouds.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Manifest split used for the reference set.
        #[arg(long, default_value = "test")]
        split: Split,
        /// Points per cloud after resampling (default: size of the first generated cloud).
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write one latent row per manifest cloud for external classifiers.
    ExportLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<Split>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::MakeSynthetic {
            out,
            families,
            count_per_family,
            points,
            seed,
            jitter,
            binary,
        } => commands::make_synthetic(&out, &families, count_per_family, points, seed, jitter, binary),
        Command::TrainAe {
            data,
            out,
            resume,
            log,
            cfg,
        } => commands::train_ae(&data, &out, resume.as_deref(), log, &cfg),
        Command::TrainGan {
            data,
            ae_checkpoint,
            out,
            log,
            cfg,
        } => commands::train_gan(&data, &ae_checkpoint, &out, log, &cfg),
        Command::Reconstruct {
            checkpoint,
            input,
            sample_n,
            out,
            cfg,
        } => commands::reconstruct(&checkpoint, &input, sample_n, &out, &cfg),
        Command::Generate {
            checkpoint,
            count,
            out,
            cfg,
        } => commands::generate(&checkpoint, count, &out, &cfg),
        Command::Interpolate {
            checkpoint,
            source,
            target,
            alphas,
            out,
            cfg,
        } => commands::interpolate(&checkpoint, &source, &target, alphas.as_deref(), &out, &cfg),
        Command::Evaluate {
            reference,
            gen,
            out,
            split,
            points,
            cfg,
        } => commands::evaluate(&reference, &gen, &out, split, points, &cfg),
        Command::ExportLatents {
            checkpoint,
            data,
            out,
            split,
        } => commands::export_latents(&checkpoint, &data, &out, split),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
