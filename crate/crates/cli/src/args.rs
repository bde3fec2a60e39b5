use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::TrainOverrides;

#[derive(Debug, Parser)]
#[command(
    name = "msdenoise",
    version,
    about = "Train, apply and evaluate multiscale adaptive denoising filterbanks"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core. `--threads 1` gives bit-exact runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Root seed for noise synthesis.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add seeded AWGN to every PNG in a directory.
    Synth {
        input_dir: PathBuf,
        output_dir: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train a filterbank on clean PNGs (noise is synthesized).
    Train {
        clean_dir: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        /// Output `.msbf` file.
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        knobs: TrainArgs,
    },
    /// Denoise one PNG.
    Denoise {
        bank: PathBuf,
        input: PathBuf,
        output: PathBuf,
        /// Require a fixed-scale bank and run the single-level path.
        #[arg(long)]
        fixed_scale: bool,
        /// Clean image to report PSNR against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Synthesize noisy copies of clean PNGs, denoise them and report PSNR.
    Eval {
        bank: PathBuf,
        clean_dir: PathBuf,
        /// Defaults to the bank's training sigma.
        #[arg(long)]
        sigma: Option<f64>,
        /// Write the per-image CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        fixed_scale: bool,
    },
    /// Render every level and channel of a bank as PNG grids plus a text dump.
    Inspect { bank: PathBuf, output: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Fine footprint side (odd).
    #[arg(long)]
    pub fine: Option<usize>,
    /// Coarse footprint side (odd).
    #[arg(long)]
    pub coarse: Option<usize>,
    /// Pyramid halvings; defaults to the depth rule for sigma.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub orientation_buckets: Option<usize>,
    #[arg(long)]
    pub strength_buckets: Option<usize>,
    #[arg(long)]
    pub coherence_buckets: Option<usize>,
    /// Ridge factor relative to the mean Gram diagonal.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Buckets with fewer samples keep the fallback filter.
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Skip the eight-fold flip/rotation augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Train a single-level bank without a pyramid.
    #[arg(long)]
    pub fixed_scale: bool,
}

impl From<&TrainArgs> for TrainOverrides {
    fn from(a: &TrainArgs) -> Self {
        Self {
            fine: a.fine,
            coarse: a.coarse,
            depth: a.depth,
            orientation_buckets: a.orientation_buckets,
            strength_buckets: a.strength_buckets,
            coherence_buckets: a.coherence_buckets,
            ridge: a.ridge,
            min_count: a.min_count,
            no_augment: a.no_augment,
            fixed_scale: a.fixed_scale,
        }
    }
}
