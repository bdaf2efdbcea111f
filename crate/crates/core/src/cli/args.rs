use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "eisr", version, about = "Surface reconstruction from the potential of Gaussian charges")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, env = "EISR_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Sequential reductions; outputs are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Overwrite an existing run directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// TOML or JSON file with `[fit]` / `[metrics]` sections; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit charges to a watertight mesh.
    Fit(FitArgs),
    /// Extract the iso-surface of a charge set as OBJ.
    Extract(ExtractArgs),
    /// Compare a predicted mesh with a ground-truth mesh.
    Metrics(MetricsArgs),
    /// Write a planar field slice (PGM + contour JSON).
    Slice(SliceArgs),
    /// Charge-distribution statistics and optional spectrum check.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of charges K.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub charges: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    /// Weight of the charge-restriction loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub surface_pool: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub interior_pool: Option<u64>,
    #[arg(long)]
    pub init_q: Option<f64>,
    #[arg(long)]
    pub init_sigma_std: Option<f64>,
    /// Steps between checkpoints, 0 disables them.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Fit the mesh as given instead of scaling it into the unit cube.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Charge set JSON.
    #[arg(long)]
    pub charges: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Iso-value; defaults to the set's own.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = eisr::isosurface::DEFAULT_RESOLUTION, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(2..))]
    pub resolution: usize,
    /// Half-width of the sampled cube.
    #[arg(long, default_value_t = eisr::isosurface::DEFAULT_HALF_EXTENT)]
    pub half_extent: f64,
    /// Map the mesh back to the input mesh's coordinates.
    #[arg(long)]
    pub unnormalize: bool,
    /// Transform JSON for `--unnormalize` (default: transform.json next to
    /// the charge file).
    #[arg(long, requires = "unnormalize")]
    pub transform: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub points: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(8..))]
    pub iou_resolution: Option<u64>,
    /// Skip the voxel IoU.
    #[arg(long)]
    pub no_iou: bool,
    /// Scale the ground truth into the unit cube first (the frame `fit` works in).
    #[arg(long)]
    pub normalize_gt: bool,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub charges: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "z")]
    pub axis: eisr::isosurface::SliceAxis,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long, default_value_t = 256, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(2..))]
    pub resolution: usize,
    /// Side length of the square window.
    #[arg(long, default_value_t = 2.0 * eisr::isosurface::DEFAULT_HALF_EXTENT)]
    pub extent: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub charges: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target mesh for charge-to-surface distances (default: the set's own
    /// extracted iso-surface).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Use `--mesh` as given instead of scaling it into the unit cube.
    #[arg(long)]
    pub raw_mesh: bool,
    #[arg(long, default_value_t = 100_000, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub points: usize,
    /// Also check the spectrum of the largest-Q charge.
    #[arg(long)]
    pub spectrum: bool,
    #[arg(long, default_value_t = 64, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(8..))]
    pub spectrum_resolution: usize,
    #[arg(long, default_value_t = 2.0)]
    pub spectrum_extent: f64,
}
