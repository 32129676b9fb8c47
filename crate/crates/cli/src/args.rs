use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "eppf", version, about = "Point-pair shape descriptors, retrieval and classification for point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the descriptor of one cloud.
    Describe(DescribeArgs),
    /// Leave-one-out retrieval over a manifest, repeated with fresh seeds.
    Retrieve(RetrieveArgs),
    /// Retrieval with each point-pair function removed in turn.
    Ablate(RetrieveArgs),
    /// Classifier accuracy against per-point Gaussian noise (retrained per level).
    NoiseBench(NoiseArgs),
    /// Train a classifier on the train split of a manifest.
    Train(TrainArgs),
    /// Classify clouds with a trained model.
    Classify(ClassifyArgs),
    /// Sample a point cloud from a triangle mesh.
    SampleMesh(SampleMeshArgs),
    /// Write a labelled synthetic corpus and its manifest.
    GenSynthetic(GenSyntheticArgs),
    /// Dump one layer's activations for a cloud or descriptor.
    ExportActivations(ExportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Base random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, env = "EPPF_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DescriptorArgs {
    /// Histogram layout: full, short, or four comma-separated bin counts.
    #[arg(long, default_value = "full")]
    pub bins: String,
    /// Point pairs sampled per cloud.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Distance-weighting constant (> 1).
    #[arg(long = "c")]
    pub c: Option<f64>,
    /// Neighbours used for normal estimation.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Network variant: 4d, 3d or 2d.
    #[arg(long, default_value = "4d")]
    pub variant: String,
    /// Adam learning rate.
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// Maximum training epochs.
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    /// Dropout rate before the output layer.
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Samples per optimizer step (default: whole training set).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop once training accuracy reaches this fraction.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Fraction of each class used for training when the manifest has no split.
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    /// Cloud file (.xyz or .ply).
    #[arg(long)]
    pub input: PathBuf,
    /// Scale factor applied to the cloud before description.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Output JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    /// CSV manifest with columns path,label[,split].
    #[arg(long)]
    pub manifest: PathBuf,
    /// Repeats, each with seed + r.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Per-point Gaussian noise, as a fraction of the unit cube.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Dataset scale factor (default: fit the largest object to the unit cube).
    #[arg(long)]
    pub scale: Option<f64>,
    /// JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    /// CSV manifest with columns path,label[,split].
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigma: Vec<f64>,
    /// Repeats per noise level, each with seed + r.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Dataset scale factor (default: fit the largest object to the unit cube).
    #[arg(long)]
    pub scale: Option<f64>,
    /// JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub descriptor: DescriptorArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    /// CSV manifest with columns path,label[,split].
    #[arg(long)]
    pub manifest: PathBuf,
    /// Per-point Gaussian noise applied before description.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Dataset scale factor (default: fit the largest object to the unit cube).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Checkpoint path (JSON header plus a .bin tensor blob beside it).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training report (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Store Adam moments so training can be resumed exactly.
    #[arg(long)]
    pub save_optimizer: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["manifest", "input"])))]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV manifest; labels, if present, give a confusion matrix.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Single cloud file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Point pairs sampled per cloud (default: as trained).
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Neighbours used for normal estimation.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Override the scale factor stored in the model.
    #[arg(long)]
    pub scale: Option<f64>,
    /// JSON predictions (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional CSV of predictions.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleMeshArgs {
    #[command(flatten)]
    pub common: Common,
    /// Mesh file (.ply or .obj).
    #[arg(long)]
    pub input: PathBuf,
    /// Target point spacing; one point per resolution² of surface area.
    #[arg(long)]
    pub resolution: f64,
    /// Output cloud (.xyz or .ply).
    #[arg(long)]
    pub out: PathBuf,
    /// Estimate and write normals.
    #[arg(long)]
    pub normals: bool,
    /// Neighbours used for normal estimation.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Instances per class.
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    /// Points per instance.
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    /// Relative size jitter per instance.
    #[arg(long, default_value_t = 0.2)]
    pub jitter: f64,
    /// Comma-separated subset of sphere, box, cylinder, cone, torus, plane_panel.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Randomly rotate every instance.
    #[arg(long)]
    pub rotate: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "descriptor"])))]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Cloud to describe first.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Precomputed descriptor JSON.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Layer index (0-based) or "input".
    #[arg(long, default_value = "0")]
    pub layer: String,
    /// Point pairs sampled per cloud (default: as trained).
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Neighbours used for normal estimation.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Scale factor applied to the cloud (default: the model's).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Output tensor JSON.
    #[arg(long)]
    pub out: PathBuf,
}
