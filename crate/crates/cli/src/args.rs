//! Command-line flags. The same types are serialised into `run.txt`, so a run can be replayed.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "diffnet", version, about = "Diffusion schemes, diffusion networks and multigrid inpainting")]
pub struct Cli {
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate the piecewise-constant signal dataset.
    GenData(GenDataArgs),
    /// Run a classical diffusion scheme on signals, or grid-search its parameters.
    Denoise(DenoiseArgs),
    /// Train a diffusion network.
    Train(TrainArgs),
    /// Solve an inpainting problem.
    Inpaint(InpaintArgs),
    /// Write the synthetic inpainting benchmark (image and random mask).
    GenInpaint(GenInpaintArgs),
    /// Report stability bounds of a kernel or a trained model.
    StabilityCheck(StabilityArgs),
    /// Repeat the run described by a `run.txt`, writing into a new directory.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub val: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    /// Samples per signal.
    #[arg(long, default_value_t = 256)]
    pub len: usize,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 10.0)]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DenoiseArgs {
    /// Dataset directory from `gen-data`; reads `<split>.csv` and `<split>_clean.csv`.
    #[arg(long, conflicts_with = "input")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Noisy signals as CSV, one signal per row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Clean signals matching `--input`, for PSNR.
    #[arg(long, requires = "input")]
    pub reference: Option<PathBuf>,
    /// Only the first n signals.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value = "explicit")]
    pub scheme: String,
    #[arg(long, default_value = "pm")]
    pub flux: String,
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Du Fort-Frankel stabilisation weight.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// FSI cycle length, or inner iterations of the implicit scheme.
    #[arg(long, default_value_t = 1)]
    pub cycle_len: usize,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Kernel taps `k0,k1,k2` (`out[i] = k0 u[i-1] + k1 u[i] + k2 u[i+1]`).
    #[arg(long, default_value = "0,-1,1")]
    pub kernel: String,
    /// Run even when the step size violates the stability bound.
    #[arg(long)]
    pub allow_unstable: bool,
    /// Grid-search the contrast parameter and stopping time on the validation split, score on
    /// the test split (explicit scheme only; needs `--data`).
    #[arg(long, requires = "data")]
    pub grid_search: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "symresnet")]
    pub arch: String,
    #[arg(long, default_value_t = 7)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value = "pm")]
    pub flux: String,
    /// One parameter set for all blocks (the default).
    #[arg(long, conflicts_with = "time_dynamic")]
    pub shared: bool,
    /// Separate parameters per block.
    #[arg(long)]
    pub time_dynamic: bool,
    /// Temporal smoothness weight (time-dynamic networks).
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use only the first n training pairs.
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Use only the first n validation pairs.
    #[arg(long)]
    pub val_size: Option<usize>,
    /// spectral | gershgorin
    #[arg(long, default_value = "spectral")]
    pub stability: String,
    #[arg(long, default_value_t = 15.0)]
    pub init_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub init_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InpaintArgs {
    /// Gray-value image (binary PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// Mask PGM; nonzero pixels are known.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// fmg | vcycle | twogrid | singlegrid | cg
    #[arg(long, default_value = "fmg")]
    pub solver: String,
    /// Target mean absolute residual.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.93)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.97)]
    pub sigma: f64,
    /// eed | identity
    #[arg(long, default_value = "eed")]
    pub model: String,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 3)]
    pub pre: usize,
    #[arg(long, default_value_t = 3)]
    pub post: usize,
    #[arg(long, default_value_t = 50)]
    pub coarse_sweeps: usize,
    #[arg(long, default_value_t = 0.8)]
    pub omega: f64,
    /// Cap on cycles (multigrid), sweeps (single grid) or outer steps (cg).
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenInpaintArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Fraction of known pixels.
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct StabilityArgs {
    /// Model file written by `train`.
    #[arg(long, conflicts_with = "kernel")]
    pub model: Option<PathBuf>,
    /// Single-channel kernel taps `k0,k1,k2`.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, default_value = "pm")]
    pub flux: String,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Step size to check.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Du Fort-Frankel weight to check.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Divide the kernel by its Gershgorin factor first.
    #[arg(long)]
    pub rescale: bool,
    /// spectral | gershgorin
    #[arg(long, default_value = "spectral")]
    pub mode: String,
    /// Signal length for the spectral norm.
    #[arg(long, default_value_t = 256)]
    pub len: usize,
    /// Also write the report and `run.txt` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// A `run.txt` from an earlier run.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory replacing the recorded one.
    #[arg(long)]
    pub out: PathBuf,
}
