use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kinebasis::training::Precision;
use kinebasis::{LossWeights, TrainConfig};

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid arguments, configuration or input files
  3  training aborted on a non-finite loss (the last good checkpoint is kept)
  4  simulation failure

Environment:
  NKF_THREADS  caps the number of worker threads
  RUST_LOG     log filter (overrides -v)";

#[derive(Debug, Parser)]
#[command(name = "kinebasis", version, about = "Neural kinematic basis fluids", after_help = EXIT_CODES)]
pub struct Cli {
    /// Scalar precision: training precision for `train`; other commands cast
    /// the loaded model when given.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
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

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a neural basis and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Evaluate losses and histograms on generated train/test domains.
    Metrics(MetricsArgs),
    /// Fit coefficients to the guide curves of a scene.
    Fit(FitArgs),
    /// Fit a scene, then time-step it and write frame records.
    Simulate(SimulateArgs),
    /// Write a basis or velocity field on a regular grid as CSV.
    Export(ExportArgs),
    /// Serve interactive sessions over WebSocket.
    Serve(ServeArgs),
}

/// Either a trained checkpoint or the analytic box eigenbasis.
#[derive(Debug, Args)]
pub struct BasisArgs {
    /// Checkpoint file (.nkbf).
    #[arg(long, required_unless_present = "analytic", conflicts_with = "analytic")]
    pub model: Option<PathBuf>,
    /// Use the lowest B analytic modes of the unit square instead of a model.
    #[arg(long, value_name = "B")]
    pub analytic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long, default_value_t = LossWeights::default().w_drch)]
    pub w_drch: f64,
    #[arg(long, default_value_t = LossWeights::default().w_div)]
    pub w_div: f64,
    #[arg(long, default_value_t = LossWeights::default().w_orth)]
    pub w_orth: f64,
    #[arg(long, default_value_t = LossWeights::default().w_bc)]
    pub w_bc: f64,
    #[arg(long, default_value_t = LossWeights::default().w_len)]
    pub w_len: f64,
    #[arg(long, default_value_t = LossWeights::default().w_small)]
    pub w_small: f64,
    /// Hinge threshold of the small-basis penalty.
    #[arg(long, default_value_t = LossWeights::default().delta)]
    pub delta: f64,
    /// Target mean basis length.
    #[arg(long, default_value_t = LossWeights::default().c_target)]
    pub c_target: f64,
    /// Drop the smoothness term from the total (still logged).
    #[arg(long)]
    pub disable_smooth: bool,
    /// Unsquared orthogonality sum.
    #[arg(long)]
    pub ortho_raw: bool,
}

impl LossArgs {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_drch: self.w_drch,
            w_div: self.w_div,
            w_orth: self.w_orth,
            w_bc: self.w_bc,
            w_len: self.w_len,
            w_small: self.w_small,
            delta: self.delta,
            c_target: self.c_target,
        }
    }
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Training domains.
    #[arg(long, default_value_t = 16)]
    pub domains: usize,
    /// Held-out domains.
    #[arg(long, default_value_t = 8)]
    pub test_domains: usize,
    /// Sample points per domain.
    #[arg(long, default_value_t = 20_000)]
    pub points: usize,
    /// Circles per domain.
    #[arg(long, default_value_t = 10)]
    pub circles: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Square (unrounded) box corners.
    #[arg(long)]
    pub sharp_corners: bool,
    /// Points per domain used for metrics.
    #[arg(long, default_value_t = 4096)]
    pub eval_points: usize,
    /// Histogram bins.
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2000)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Affine layers, output layer included.
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    /// Number of basis fields.
    #[arg(long, default_value_t = 10)]
    pub bases: usize,
    #[arg(long, default_value_t = 0.0005)]
    pub lr: f64,
    /// Per-epoch learning-rate decay factor.
    #[arg(long, default_value_t = 0.96)]
    pub lr_decay: f64,
    /// Checkpoint path; `<out>.meta.json` receives the configuration.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log (NDJSON); defaults to `metrics.jsonl` next to the checkpoint.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self, precision: Precision) -> TrainConfig {
        let mut c = TrainConfig {
            dim: self.data.dim,
            b: self.bases,
            m: self.data.circles,
            n_domains: self.data.domains,
            n_test_domains: self.data.test_domains,
            n_points_per_domain: self.data.points,
            n_epochs: self.epochs,
            batch_size: self.batch,
            width: self.width,
            n_layers: self.layers,
            weights: self.loss.weights(),
            seed: self.data.seed,
            disable_smooth: self.loss.disable_smooth,
            sharp_corners: self.data.sharp_corners,
            ortho_raw: self.loss.ortho_raw,
            eval_points: self.data.eval_points,
            histogram_bins: self.data.bins,
            precision,
            ..TrainConfig::default()
        };
        c.adam.base_lr = self.lr;
        c.adam.decay = self.lr_decay;
        c
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Sketch scene JSON.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = kinebasis::sketch::DEFAULT_RIDGE)]
    pub ridge: f64,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Sketch scene JSON; its curves give the initial coefficients.
    #[arg(long)]
    pub scene: PathBuf,
    /// Domain keyframes JSON (`{"keyframes":[{"t":..,"domain":{..}},..]}`).
    #[arg(long)]
    pub keyframes: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.005)]
    pub dt: f64,
    /// Velocity grid resolution per axis in each frame.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Projection points per step.
    #[arg(long, default_value_t = 4096)]
    pub points: usize,
    #[arg(long, default_value_t = kinebasis::sketch::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = 256)]
    pub particles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `frame_%05d.csv` grid exports.
    #[arg(long)]
    pub csv: bool,
    /// Output directory for frame records.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Domain JSON; defaults to the empty box for the analytic basis.
    #[arg(long, conflicts_with = "scene")]
    pub domain: Option<PathBuf>,
    /// Take the domain from a scene file instead.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Export basis field K (0-based).
    #[arg(long, value_name = "K", required_unless_present = "alpha", conflicts_with = "alpha")]
    pub basis_index: Option<usize>,
    /// Export the velocity of coefficients from a JSON file (an array or a fit result).
    #[arg(long)]
    pub alpha: Option<PathBuf>,
    /// Grid resolution per axis.
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    /// Output CSV file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Port; 0 picks a free one (the bound address is printed on stdout).
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Projection points per simulation step.
    #[arg(long, default_value_t = 4096)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
