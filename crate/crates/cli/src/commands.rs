use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use eppf_core::datasets::{
    run_ablation, run_classification, run_noise_curve, run_retrieval_experiment, run_training, synthetic_corpus,
    write_corpus, CorpusSpec, Dataset, ExperimentKind, ExperimentSpec, Manifest, Sample, Split,
};
use eppf_core::descriptor::{compute_descriptor, FULL_BINS, SHORT_BINS};
use eppf_core::fsio::write_atomic;
use eppf_core::nn::{load_checkpoint, save_checkpoint, save_tensor, training_log_csv, EpochLog, TrainedModel};
use eppf_core::normals::{estimate_normals, NormalConfig};
use eppf_core::pointcloud::{dataset_scale_factor, load_cloud, load_mesh, sample_mesh, save_cloud, scale_cloud};
use eppf_core::{CloudFormat, Descriptor, DescriptorConfig, NetworkConfig, PointCloud, Variant};

use crate::args::*;

/// Usage errors exit with 1, everything that goes wrong while reading or
/// processing data exits with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn check(ok: bool, msg: &str) -> Outcome {
    if ok {
        Ok(())
    } else {
        usage(msg)
    }
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Describe(a) => describe(a),
        Command::Retrieve(a) => retrieve(a, ExperimentKind::LooRetrieval),
        Command::Ablate(a) => retrieve(a, ExperimentKind::Ablation),
        Command::NoiseBench(a) => noise_bench(a),
        Command::Train(a) => train(a),
        Command::Classify(a) => classify(a),
        Command::SampleMesh(a) => sample_mesh_cmd(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::ExportActivations(a) => export_activations(a),
    }
}

fn init_threads(common: &Common) -> Outcome {
    if let Some(n) = common.threads {
        check(n >= 1, "--threads must be at least 1")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn parse_bins(s: &str) -> Outcome<[usize; 4]> {
    match s {
        "full" => Ok(FULL_BINS),
        "short" => Ok(SHORT_BINS),
        _ => {
            let parts: Vec<usize> = s
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::Usage(format!("--bins: expected full, short or a,b,c,d; got {s:?}")))?;
            match parts[..] {
                [a, b, c, d] => Ok([a, b, c, d]),
                _ => usage(format!("--bins needs four counts, got {}", parts.len())),
            }
        }
    }
}

fn descriptor_config(a: &DescriptorArgs, seed: u64) -> Outcome<DescriptorConfig> {
    let mut cfg = DescriptorConfig::full().with_seed(seed);
    cfg.bins = parse_bins(&a.bins)?;
    if let Some(n) = a.pairs {
        cfg.n_pairs = n;
    }
    if let Some(c) = a.c {
        cfg.c = c;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    check(a.k >= 1, "--k must be at least 1")?;
    Ok(cfg)
}

fn check_sigma(s: f64) -> Outcome {
    check(s >= 0.0 && s.is_finite(), "--sigma values must be finite and non-negative")
}

fn check_scale(s: Option<f64>) -> Outcome {
    check(s.is_none_or(|s| s > 0.0 && s.is_finite()), "--scale must be positive")
}

fn parse_variant(s: &str) -> Outcome<Variant> {
    s.parse().map_err(|e: eppf_core::Error| Failure::Usage(e.to_string()))
}

fn check_network(a: &NetworkArgs) -> Outcome<Variant> {
    let variant = parse_variant(&a.variant)?;
    check(a.lr > 0.0 && a.lr.is_finite(), "--lr must be positive")?;
    check(a.epochs >= 1, "--epochs must be at least 1")?;
    check((0.0..1.0).contains(&a.dropout), "--dropout must be in [0, 1)")?;
    check(a.batch_size.is_none_or(|b| b >= 1), "--batch-size must be at least 1")?;
    check(a.target_accuracy.is_none_or(|t| t > 0.0 && t <= 1.0), "--target-accuracy must be in (0, 1]")?;
    check(a.train_fraction > 0.0 && a.train_fraction < 1.0, "--train-fraction must be in (0, 1)")?;
    Ok(variant)
}

fn network_config(a: &NetworkArgs, variant: Variant, n_classes: usize, seed: u64) -> NetworkConfig {
    let mut cfg = NetworkConfig::new(variant, n_classes).with_dropout(a.dropout);
    cfg.learning_rate = a.lr;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.seed = seed;
    cfg
}

fn cloud_format(path: &Path) -> Outcome<CloudFormat> {
    match CloudFormat::from_path(path) {
        Some(f) => Ok(f),
        None => usage(format!("{}: cloud files must end in .xyz or .ply", path.display())),
    }
}

fn load_dataset(manifest: &Path, scale: Option<f64>) -> Outcome<Dataset> {
    let m = Manifest::load(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let ds = Dataset::load(&m, scale)?;
    eprintln!("loaded {} clouds in {} classes, scale factor {}", ds.samples.len(), ds.classes().len(), ds.scale);
    Ok(ds)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).context("serialising report")?;
    text.push('\n');
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_csv(text: eppf_core::Result<String>, out: Option<&PathBuf>) -> Outcome {
    if let Some(p) = out {
        write_atomic(p, text?.as_bytes())?;
    }
    Ok(())
}

/// Scaled copy of `cloud` with normals, estimating them if absent.
fn ready_cloud(cloud: &PointCloud, scale: f64, k: usize) -> Outcome<PointCloud> {
    let cloud = scale_cloud(cloud, scale);
    if cloud.normals().is_some() {
        return Ok(cloud);
    }
    let est = estimate_normals(&cloud, &NormalConfig { k })?;
    if est.degenerate > 0 {
        eprintln!("warning: {} points had degenerate neighbourhoods", est.degenerate);
    }
    Ok(est.cloud)
}

fn describe(a: DescribeArgs) -> Outcome {
    let cfg = descriptor_config(&a.descriptor, a.common.seed)?;
    check_scale(Some(a.scale))?;
    let format = cloud_format(&a.input)?;
    init_threads(&a.common)?;
    let cloud = load_cloud(&a.input, format)?;
    let cloud = ready_cloud(&cloud, a.scale, a.descriptor.k)?;
    let d = compute_descriptor(&cloud, &cfg)?;
    emit_json(&d, a.out.as_deref())
}

fn experiment(kind: ExperimentKind, cfg: DescriptorConfig, seed: u64, k: usize, repeats: usize) -> Outcome<ExperimentSpec> {
    check(repeats >= 1, "--repeats must be at least 1")?;
    let mut spec = ExperimentSpec::new(kind, cfg, seed);
    spec.normals = NormalConfig { k };
    spec.repeats = repeats;
    Ok(spec)
}

fn retrieve(a: RetrieveArgs, kind: ExperimentKind) -> Outcome {
    let cfg = descriptor_config(&a.descriptor, a.common.seed)?;
    let mut spec = experiment(kind, cfg, a.common.seed, a.descriptor.k, a.repeats)?;
    check_sigma(a.sigma)?;
    check_scale(a.scale)?;
    spec.sigma = a.sigma;
    init_threads(&a.common)?;
    let ds = load_dataset(&a.manifest, a.scale)?;
    if kind == ExperimentKind::Ablation {
        let report = run_ablation(&ds, &spec)?;
        eprintln!("baseline f1 {:.4}", report.baseline.f1_mean);
        for r in &report.ablations {
            eprintln!("without {}: f1 {:.4} ({:+.4})", r.removed.map_or("-", |d| d.name()), r.f1_mean, r.f1_delta);
        }
        emit_csv(report.to_csv(), a.csv.as_ref())?;
        emit_json(&report, a.out.as_deref())
    } else {
        let report = run_retrieval_experiment(&ds, &spec)?;
        eprintln!(
            "total accuracy {:.4} ± {:.4}, f1 {:.4} ± {:.4}",
            report.mean.total_accuracy, report.std.total_accuracy, report.mean.f1, report.std.f1
        );
        emit_csv(report.to_csv(), a.csv.as_ref())?;
        emit_json(&report, a.out.as_deref())
    }
}

fn progress(e: &EpochLog) {
    if e.epoch % 10 == 0 || e.train_acc >= 1.0 {
        match e.val_acc {
            Some(v) => eprintln!("epoch {:>5}  loss {:.5}  train {:.4}  val {:.4}", e.epoch, e.loss, e.train_acc, v),
            None => eprintln!("epoch {:>5}  loss {:.5}  train {:.4}", e.epoch, e.loss, e.train_acc),
        }
    }
}

fn noise_bench(a: NoiseArgs) -> Outcome {
    let cfg = descriptor_config(&a.descriptor, a.common.seed)?;
    let variant = check_network(&a.network)?;
    check(cfg.bins == FULL_BINS, "the classifiers require the full bin layout")?;
    let mut spec = experiment(ExperimentKind::NoiseCurve, cfg, a.common.seed, a.descriptor.k, a.repeats)?;
    a.sigma.iter().try_for_each(|s| check_sigma(*s))?;
    check_scale(a.scale)?;
    spec.sigmas = a.sigma.clone();
    spec.train_fraction = a.network.train_fraction;
    spec.target_train_acc = a.network.target_accuracy;
    init_threads(&a.common)?;
    let ds = load_dataset(&a.manifest, a.scale)?;
    spec.network = Some(network_config(&a.network, variant, ds.classes().len(), a.common.seed));
    let report = run_noise_curve(&ds, &spec)?;
    for r in &report.rows {
        eprintln!("sigma {}: accuracy {:.4} ± {:.4}", r.sigma, r.accuracy_mean, r.accuracy_std);
    }
    emit_csv(report.to_csv(), a.csv.as_ref())?;
    emit_json(&report, a.out.as_deref())
}

fn train(a: TrainArgs) -> Outcome {
    let cfg = descriptor_config(&a.descriptor, a.common.seed)?;
    let variant = check_network(&a.network)?;
    check(cfg.bins == FULL_BINS, "the classifiers require the full bin layout")?;
    check_sigma(a.sigma)?;
    check_scale(a.scale)?;
    let mut spec = experiment(ExperimentKind::TrainClassifier, cfg, a.common.seed, a.descriptor.k, 1)?;
    spec.sigma = a.sigma;
    spec.train_fraction = a.network.train_fraction;
    spec.target_train_acc = a.network.target_accuracy;
    init_threads(&a.common)?;
    let ds = load_dataset(&a.manifest, a.scale)?;
    spec.network = Some(network_config(&a.network, variant, ds.classes().len(), a.common.seed));
    let (model, report) = run_training(&ds, &spec, Some(&progress))?;
    if let Some(m) = &report.test_metrics {
        eprintln!("test accuracy {:.4} after {} epochs", m.total_accuracy, report.epochs_run);
    }
    save_checkpoint(&model, &a.out, a.save_optimizer)?;
    emit_csv(training_log_csv(&model.log), a.log.as_ref())?;
    emit_json(&report, a.report.as_deref())
}

/// Scale for clouds fed to a trained model: explicit flag, then the
/// model's training scale, then unit-cube fitting of the given clouds.
fn model_scale<'a>(flag: Option<f64>, model: &TrainedModel, clouds: impl IntoIterator<Item = &'a PointCloud>) -> Outcome<f64> {
    match flag.or(model.dataset_scale) {
        Some(s) => Ok(s),
        None => Ok(dataset_scale_factor(clouds)?),
    }
}

fn model_descriptor(model: &TrainedModel, pairs: Option<usize>, seed: u64) -> DescriptorConfig {
    let mut cfg = model.descriptor.clone().with_seed(seed);
    if let Some(n) = pairs {
        cfg.n_pairs = n;
    }
    cfg
}

fn classify(a: ClassifyArgs) -> Outcome {
    check(a.pairs.is_none_or(|n| n >= 1), "--pairs must be positive")?;
    check(a.k >= 1, "--k must be at least 1")?;
    check_scale(a.scale)?;
    if let Some(p) = &a.input {
        cloud_format(p)?;
    }
    init_threads(&a.common)?;
    let mut model = load_checkpoint(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let samples = match (&a.manifest, &a.input) {
        (Some(m), _) => {
            let m = Manifest::load(m).with_context(|| format!("reading manifest {}", m.display()))?;
            Dataset::load(&m, Some(1.0))?.samples
        }
        (None, Some(p)) => vec![Sample {
            object_id: p.display().to_string(),
            label: String::new(),
            split: Split::All,
            cloud: load_cloud(p, cloud_format(p)?)?,
        }],
        (None, None) => unreachable!("clap requires one source"),
    };
    let scale = model_scale(a.scale, &model, samples.iter().map(|s| &s.cloud))?;
    let ds = Dataset::with_scale(samples, scale)?;
    let mut spec = experiment(
        ExperimentKind::Classify,
        model_descriptor(&model, a.pairs, a.common.seed),
        a.common.seed,
        a.k,
        1,
    )?;
    spec.network = Some(model.config.clone());
    let report = run_classification(&mut model, &ds, &spec)?;
    if let Some(m) = &report.metrics {
        eprintln!("accuracy {:.4} on {} clouds", m.total_accuracy, report.predictions.len());
    }
    emit_csv(report.to_csv(), a.csv.as_ref())?;
    emit_json(&report, a.out.as_deref())
}

fn sample_mesh_cmd(a: SampleMeshArgs) -> Outcome {
    check(a.resolution > 0.0 && a.resolution.is_finite(), "--resolution must be positive")?;
    check(a.k >= 1, "--k must be at least 1")?;
    let format = cloud_format(&a.out)?;
    init_threads(&a.common)?;
    let mesh = load_mesh(&a.input)?;
    let mut cloud = sample_mesh(&mesh, a.resolution, a.common.seed)?;
    if a.normals {
        cloud = ready_cloud(&cloud, 1.0, a.k)?;
    }
    eprintln!("sampled {} points from {} faces", cloud.len(), mesh.faces().len());
    save_cloud(&a.out, &cloud, format)?;
    Ok(())
}

fn gen_synthetic(a: GenSyntheticArgs) -> Outcome {
    let mut spec = CorpusSpec::standard(a.per_class, a.points, a.common.seed);
    spec.jitter = a.jitter;
    spec.rotate = a.rotate;
    if !a.classes.is_empty() {
        let known: Vec<&str> = spec.classes.iter().map(|c| c.name()).collect();
        if let Some(bad) = a.classes.iter().find(|c| !known.contains(&c.as_str())) {
            return usage(format!("unknown shape class {bad:?} (known: {})", known.join(", ")));
        }
        spec.classes.retain(|c| a.classes.iter().any(|n| n == c.name()));
    }
    check(a.points >= 2, "--points must be at least 2")?;
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    init_threads(&a.common)?;
    let samples = synthetic_corpus(&spec)?;
    let manifest = write_corpus(&samples, &a.out)?;
    eprintln!("wrote {} clouds and manifest.csv to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn export_activations(a: ExportArgs) -> Outcome {
    let layer = match a.layer.as_str() {
        "input" => None,
        s => Some(s.parse::<usize>().map_err(|_| Failure::Usage(format!("--layer: expected an index or \"input\", got {s:?}")))?),
    };
    check(a.pairs.is_none_or(|n| n >= 1), "--pairs must be positive")?;
    check(a.k >= 1, "--k must be at least 1")?;
    check_scale(a.scale)?;
    if let Some(p) = &a.input {
        cloud_format(p)?;
    }
    init_threads(&a.common)?;
    let mut model = load_checkpoint(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let descriptor = match (&a.input, &a.descriptor) {
        (_, Some(p)) => Descriptor::load(p)?,
        (Some(p), None) => {
            let cloud = load_cloud(p, cloud_format(p)?)?;
            let scale = model_scale(a.scale, &model, [&cloud])?;
            let cloud = ready_cloud(&cloud, scale, a.k)?;
            compute_descriptor(&cloud, &model_descriptor(&model, a.pairs, a.common.seed))?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let t = model.activations(&descriptor, layer)?;
    eprintln!("layer {}: shape {:?}", a.layer, t.shape());
    save_tensor(&t, &a.out)?;
    Ok(())
}
