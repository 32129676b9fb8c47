use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::descriptor::{compute_counts, compute_descriptor, Descriptor, DescriptorConfig, PairHistogram};
use crate::error::{Error, Result};
use crate::matching::{apply_zero_floor, leave_one_out, ConfusionMatrix, LabeledDescriptor, Metrics};
use crate::nn::{train, EpochLog, NetworkConfig, TrainOptions, TrainedModel};
use crate::normals::{estimate_normals, NormalConfig};
use crate::pointcloud::{add_gaussian_noise, PointCloud};
use crate::ppf::PpfDim;
use crate::rng;

const NOISE_STREAM: u64 = 0x6e6f_6973;
const SPLIT_STREAM: u64 = 0x7370_6c69;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LooRetrieval,
    Ablation,
    NoiseCurve,
    TrainClassifier,
    Classify,
}

/// Everything needed to rerun an experiment. Repeat `r` uses seed
/// `seed + r` for pair sampling, noise and network initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub descriptor: DescriptorConfig,
    pub normals: NormalConfig,
    pub seed: u64,
    pub repeats: usize,
    /// Noise level for retrieval, ablation and training runs.
    pub sigma: f64,
    /// Noise levels for a noise curve.
    pub sigmas: Vec<f64>,
    /// Used for entries whose split is `all`.
    pub train_fraction: f64,
    pub network: Option<NetworkConfig>,
    /// Early stop once training accuracy reaches this value.
    pub target_train_acc: Option<f64>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, descriptor: DescriptorConfig, seed: u64) -> Self {
        ExperimentSpec {
            kind,
            descriptor: descriptor.with_seed(seed),
            normals: NormalConfig::default(),
            seed,
            repeats: 1,
            sigma: 0.0,
            sigmas: Vec::new(),
            train_fraction: 0.6,
            network: None,
            target_train_acc: None,
        }
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add(repeat as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise levels must be finite and non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must be in (0, 1)"));
        }
        match self.kind {
            ExperimentKind::NoiseCurve if self.sigmas.is_empty() => Err(Error::invalid("a noise curve needs at least one sigma")),
            ExperimentKind::NoiseCurve | ExperimentKind::TrainClassifier if self.network.is_none() => {
                Err(Error::invalid("this experiment needs a network configuration"))
            }
            _ => Ok(()),
        }
    }

    fn expect(&self, kind: ExperimentKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!("spec is for {:?}, not {kind:?}", self.kind)));
        }
        self.validate()
    }
}

/// Cloud ready for description: optionally perturbed, normals present.
fn prepare(cloud: &PointCloud, sigma: f64, noise_seed: u64, normals: &NormalConfig) -> Result<PointCloud> {
    let cloud = if sigma > 0.0 { add_gaussian_noise(cloud, sigma, noise_seed)? } else { cloud.clone() };
    if cloud.normals().is_some() {
        Ok(cloud)
    } else {
        Ok(estimate_normals(&cloud, normals)?.cloud)
    }
}

fn noise_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, NOISE_STREAM), index as u64)
}

/// Descriptors of every sample (parallel over objects, order kept). Pair
/// sampling uses `seed` for every object.
pub fn describe_dataset(
    dataset: &Dataset,
    cfg: &DescriptorConfig,
    normals: &NormalConfig,
    sigma: f64,
    seed: u64,
) -> Result<Vec<LabeledDescriptor>> {
    let cfg = cfg.clone().with_seed(seed);
    dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = prepare(&s.cloud, sigma, noise_seed(seed, i), normals)?;
            Ok(LabeledDescriptor {
                descriptor: compute_descriptor(&cloud, &cfg)?,
                label: s.label.clone(),
                object_id: s.object_id.clone(),
            })
        })
        .collect()
}

fn count_dataset(dataset: &Dataset, spec: &ExperimentSpec, seed: u64) -> Result<Vec<PairHistogram>> {
    let cfg = spec.descriptor.clone().with_seed(seed);
    dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| compute_counts(&prepare(&s.cloud, spec.sigma, noise_seed(seed, i), &spec.normals)?, &cfg))
        .collect()
}

fn loo_metrics(mut descs: Vec<LabeledDescriptor>) -> Result<(f64, ConfusionMatrix, Metrics)> {
    let floor = apply_zero_floor(descs.iter_mut().map(|d| &mut d.descriptor))?;
    let cm = leave_one_out(&descs)?;
    let m = cm.metrics()?;
    Ok((floor, cm, m))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn metric_stats(all: &[Metrics]) -> (Metrics, Metrics) {
    let field = |f: fn(&Metrics) -> f64| mean_std(&all.iter().map(f).collect::<Vec<_>>());
    let (ta, ta_s) = field(|m| m.total_accuracy);
    let (ma, ma_s) = field(|m| m.mean_accuracy);
    let (mr, mr_s) = field(|m| m.mean_recall);
    let (f1, f1_s) = field(|m| m.f1);
    (
        Metrics { total_accuracy: ta, mean_accuracy: ma, mean_recall: mr, f1 },
        Metrics { total_accuracy: ta_s, mean_accuracy: ma_s, mean_recall: mr_s, f1: f1_s },
    )
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn metric_cells(m: &Metrics) -> [String; 4] {
    [m.total_accuracy, m.mean_accuracy, m.mean_recall, m.f1].map(|v| v.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    /// Zero-bin floor used for this repeat.
    pub floor: f64,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub spec: ExperimentSpec,
    pub scale: f64,
    pub n_objects: usize,
    pub seeds: Vec<u64>,
    pub repeats: Vec<RepeatResult>,
    pub mean: Metrics,
    /// Population standard deviation over repeats.
    pub std: Metrics,
}

impl RetrievalReport {
    pub fn to_csv(&self) -> Result<String> {
        let head = ["repeat", "seed", "total_accuracy", "mean_accuracy", "mean_recall", "f1"];
        let mut rows = vec![head.map(String::from).to_vec()];
        for r in &self.repeats {
            let mut row = vec![r.repeat.to_string(), r.seed.to_string()];
            row.extend(metric_cells(&r.metrics));
            rows.push(row);
        }
        for (name, m) in [("mean", &self.mean), ("std", &self.std)] {
            let mut row = vec![name.to_string(), String::new()];
            row.extend(metric_cells(m));
            rows.push(row);
        }
        csv_string(rows)
    }
}

/// Leave-one-out retrieval over all samples, repeated with fresh sampling
/// seeds.
pub fn run_retrieval_experiment(dataset: &Dataset, spec: &ExperimentSpec) -> Result<RetrievalReport> {
    spec.expect(ExperimentKind::LooRetrieval)?;
    let mut repeats = Vec::with_capacity(spec.repeats);
    for r in 0..spec.repeats {
        let seed = spec.repeat_seed(r);
        let descs = describe_dataset(dataset, &spec.descriptor, &spec.normals, spec.sigma, seed)?;
        let (floor, confusion, metrics) = loo_metrics(descs)?;
        repeats.push(RepeatResult { repeat: r, seed, floor, metrics, confusion });
    }
    let all: Vec<Metrics> = repeats.iter().map(|r| r.metrics).collect();
    let (mean, std) = metric_stats(&all);
    Ok(RetrievalReport {
        spec: spec.clone(),
        scale: dataset.scale,
        n_objects: dataset.samples.len(),
        seeds: repeats.iter().map(|r| r.seed).collect(),
        repeats,
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Removed function; `None` is the full-descriptor baseline.
    pub removed: Option<PpfDim>,
    pub bins: [usize; 4],
    pub f1: Vec<f64>,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// `f1_mean` minus the baseline's `f1_mean`.
    pub f1_delta: f64,
    pub total_accuracy_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub spec: ExperimentSpec,
    pub scale: f64,
    pub seeds: Vec<u64>,
    pub baseline: AblationRow,
    pub ablations: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> Result<String> {
        let head = ["removed", "bins", "f1_mean", "f1_std", "f1_delta", "total_accuracy_mean"];
        let mut rows = vec![head.map(String::from).to_vec()];
        for r in std::iter::once(&self.baseline).chain(&self.ablations) {
            rows.push(vec![
                r.removed.map_or("none".to_string(), |d| d.name().to_string()),
                r.bins.map(|b| b.to_string()).join("x"),
                r.f1_mean.to_string(),
                r.f1_std.to_string(),
                r.f1_delta.to_string(),
                r.total_accuracy_mean.to_string(),
            ]);
        }
        csv_string(rows)
    }
}

/// Retrieval with each function removed in turn. Every variant is derived
/// from the same sampled pairs by collapsing one histogram axis.
pub fn run_ablation(dataset: &Dataset, spec: &ExperimentSpec) -> Result<AblationReport> {
    spec.expect(ExperimentKind::Ablation)?;
    let variants: Vec<Option<PpfDim>> = std::iter::once(None).chain(PpfDim::ALL.map(Some)).collect();
    let mut f1 = vec![Vec::new(); variants.len()];
    let mut acc = vec![Vec::new(); variants.len()];
    let mut seeds = Vec::new();
    for r in 0..spec.repeats {
        let seed = spec.repeat_seed(r);
        seeds.push(seed);
        let counts = count_dataset(dataset, spec, seed)?;
        for (v, removed) in variants.iter().enumerate() {
            let cfg = match removed {
                Some(d) => crate::descriptor::ablate_dimension(&spec.descriptor, *d),
                None => spec.descriptor.clone(),
            }
            .with_seed(seed);
            let descs = counts
                .iter()
                .zip(&dataset.samples)
                .map(|(h, s)| {
                    let h = match removed {
                        Some(d) => h.collapse(*d),
                        None => h.clone(),
                    };
                    Ok(LabeledDescriptor {
                        descriptor: Descriptor::from_counts(&cfg, &h)?,
                        label: s.label.clone(),
                        object_id: s.object_id.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (_, _, m) = loo_metrics(descs)?;
            f1[v].push(m.f1);
            acc[v].push(m.total_accuracy);
        }
    }
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .enumerate()
        .map(|(v, removed)| {
            let (f1_mean, f1_std) = mean_std(&f1[v]);
            let bins = match removed {
                Some(d) => crate::descriptor::ablate_dimension(&spec.descriptor, *d).bins,
                None => spec.descriptor.bins,
            };
            AblationRow {
                removed: *removed,
                bins,
                f1: f1[v].clone(),
                f1_mean,
                f1_std,
                f1_delta: 0.0,
                total_accuracy_mean: mean_std(&acc[v]).0,
            }
        })
        .collect();
    let base = rows[0].f1_mean;
    for r in &mut rows {
        r.f1_delta = r.f1_mean - base;
    }
    let baseline = rows.remove(0);
    Ok(AblationReport { spec: spec.clone(), scale: dataset.scale, seeds, baseline, ablations: rows })
}

fn split_dataset(dataset: &Dataset, spec: &ExperimentSpec) -> Result<Dataset> {
    let mut ds = dataset.clone();
    ds.resolve_splits(spec.train_fraction, rng::derive_seed(spec.seed, SPLIT_STREAM))?;
    Ok(ds)
}

fn partition(ds: &Dataset, descs: Vec<LabeledDescriptor>) -> (Vec<LabeledDescriptor>, Vec<LabeledDescriptor>) {
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (d, s) in descs.into_iter().zip(&ds.samples) {
        match s.split {
            Split::Test => te.push(d),
            _ => tr.push(d),
        }
    }
    (tr, te)
}

fn network_for(spec: &ExperimentSpec, seed: u64) -> NetworkConfig {
    let mut cfg = spec.network.clone().expect("validated");
    cfg.seed = seed;
    cfg
}

fn confusion_of(model: &mut TrainedModel, data: &[LabeledDescriptor]) -> Result<ConfusionMatrix> {
    let descs: Vec<Descriptor> = data.iter().map(|d| d.descriptor.clone()).collect();
    let preds = model.predict_batch(&descs)?;
    let mut cm = ConfusionMatrix::new(model.classes.clone());
    for (d, p) in data.iter().zip(preds) {
        cm.record(&d.label, &p.class)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub accuracies: Vec<f64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurveReport {
    pub spec: ExperimentSpec,
    pub scale: f64,
    pub seeds: Vec<u64>,
    pub train_objects: usize,
    pub test_objects: usize,
    pub rows: Vec<NoiseRow>,
}

impl NoiseCurveReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = vec![vec!["sigma".into(), "accuracy_mean".into(), "accuracy_std".into()]];
        for r in &self.rows {
            rows.push(vec![r.sigma.to_string(), r.accuracy_mean.to_string(), r.accuracy_std.to_string()]);
        }
        csv_string(rows)
    }
}

/// Test accuracy of a classifier retrained on noisy data at every noise
/// level. Training and test clouds receive the same noise level.
pub fn run_noise_curve(dataset: &Dataset, spec: &ExperimentSpec) -> Result<NoiseCurveReport> {
    spec.expect(ExperimentKind::NoiseCurve)?;
    let ds = split_dataset(dataset, spec)?;
    let classes = ds.classes();
    let mut rows = Vec::new();
    let mut sizes = (0, 0);
    for &sigma in &spec.sigmas {
        let mut accuracies = Vec::new();
        for r in 0..spec.repeats {
            let seed = spec.repeat_seed(r);
            let descs = describe_dataset(&ds, &spec.descriptor, &spec.normals, sigma, seed)?;
            let (tr, te) = partition(&ds, descs);
            sizes = (tr.len(), te.len());
            if te.is_empty() {
                return Err(Error::invalid("noise curve needs a non-empty test split"));
            }
            let opts = TrainOptions {
                classes: Some(classes.clone()),
                target_train_acc: spec.target_train_acc,
                ..Default::default()
            };
            let mut model = train(&tr, &network_for(spec, seed), &opts)?;
            accuracies.push(confusion_of(&mut model, &te)?.metrics()?.total_accuracy);
        }
        let (accuracy_mean, accuracy_std) = mean_std(&accuracies);
        rows.push(NoiseRow { sigma, accuracies, accuracy_mean, accuracy_std });
    }
    Ok(NoiseCurveReport {
        spec: spec.clone(),
        scale: dataset.scale,
        seeds: (0..spec.repeats).map(|r| spec.repeat_seed(r)).collect(),
        train_objects: sizes.0,
        test_objects: sizes.1,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub spec: ExperimentSpec,
    pub scale: f64,
    pub seed: u64,
    pub classes: Vec<String>,
    pub train_objects: usize,
    pub test_objects: usize,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
    pub test_metrics: Option<Metrics>,
    pub test_confusion: Option<ConfusionMatrix>,
}

/// Trains one classifier on the train split and scores the test split.
pub fn run_training(
    dataset: &Dataset,
    spec: &ExperimentSpec,
    on_epoch: Option<&dyn Fn(&EpochLog)>,
) -> Result<(TrainedModel, TrainingReport)> {
    spec.expect(ExperimentKind::TrainClassifier)?;
    let ds = split_dataset(dataset, spec)?;
    let classes = ds.classes();
    let descs = describe_dataset(&ds, &spec.descriptor, &spec.normals, spec.sigma, spec.seed)?;
    let (tr, te) = partition(&ds, descs);
    let opts = TrainOptions {
        validation: if te.is_empty() { None } else { Some(&te) },
        classes: Some(classes.clone()),
        target_train_acc: spec.target_train_acc,
        on_epoch,
    };
    let mut model = train(&tr, &network_for(spec, spec.seed), &opts)?;
    model.dataset_scale = Some(dataset.scale);
    let test_confusion = if te.is_empty() { None } else { Some(confusion_of(&mut model, &te)?) };
    let report = TrainingReport {
        spec: spec.clone(),
        scale: dataset.scale,
        seed: spec.seed,
        classes,
        train_objects: tr.len(),
        test_objects: te.len(),
        epochs_run: model.epoch,
        log: model.log.clone(),
        test_metrics: test_confusion.as_ref().map(ConfusionMatrix::metrics).transpose()?,
        test_confusion,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub object_id: String,
    pub label: String,
    pub predicted: String,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub spec: ExperimentSpec,
    pub scale: f64,
    pub seed: u64,
    pub classes: Vec<String>,
    pub predictions: Vec<PredictionRow>,
    /// Present when every label is one of the model's classes.
    pub confusion: Option<ConfusionMatrix>,
    pub metrics: Option<Metrics>,
}

impl ClassificationReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut head = vec!["object_id".to_string(), "label".into(), "predicted".into()];
        head.extend(self.classes.iter().map(|c| format!("p_{c}")));
        let mut rows = vec![head];
        for p in &self.predictions {
            let mut row = vec![p.object_id.clone(), p.label.clone(), p.predicted.clone()];
            row.extend(p.probabilities.iter().map(|v| v.to_string()));
            rows.push(row);
        }
        csv_string(rows)
    }
}

/// Classifies every sample of `dataset` with a trained model.
pub fn run_classification(model: &mut TrainedModel, dataset: &Dataset, spec: &ExperimentSpec) -> Result<ClassificationReport> {
    spec.expect(ExperimentKind::Classify)?;
    if !spec.descriptor.same_layout(&model.descriptor) {
        return Err(Error::ConfigMismatch("descriptor layout differs from the model's".into()));
    }
    let descs = describe_dataset(dataset, &spec.descriptor, &spec.normals, spec.sigma, spec.seed)?;
    let weights: Vec<Descriptor> = descs.iter().map(|d| d.descriptor.clone()).collect();
    let preds = model.predict_batch(&weights)?;
    let predictions: Vec<PredictionRow> = descs
        .iter()
        .zip(preds)
        .map(|(d, p)| PredictionRow {
            object_id: d.object_id.clone(),
            label: d.label.clone(),
            predicted: p.class,
            probabilities: p.probabilities,
        })
        .collect();
    let known = predictions.iter().all(|p| model.classes.contains(&p.label));
    let confusion = if known {
        let mut cm = ConfusionMatrix::new(model.classes.clone());
        for p in &predictions {
            cm.record(&p.label, &p.predicted)?;
        }
        Some(cm)
    } else {
        None
    };
    Ok(ClassificationReport {
        spec: spec.clone(),
        scale: dataset.scale,
        seed: spec.seed,
        classes: model.classes.clone(),
        metrics: confusion.as_ref().map(ConfusionMatrix::metrics).transpose()?,
        confusion,
        predictions,
    })
}
