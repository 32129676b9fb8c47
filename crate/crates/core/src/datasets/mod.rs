//! Dataset manifests, per-class splits, in-memory datasets and the
//! experiment drivers built on them.

mod corpus;
mod experiments;

pub use corpus::{synthetic_corpus, write_corpus, CorpusSpec};
pub use experiments::{
    describe_dataset, run_ablation, run_classification, run_noise_curve, run_retrieval_experiment, run_training,
    AblationReport, AblationRow, ClassificationReport, ExperimentKind, ExperimentSpec, NoiseCurveReport, NoiseRow,
    PredictionRow, RepeatResult, RetrievalReport, TrainingReport,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::pointcloud::{dataset_scale_factor, load_cloud, scale_cloud, CloudFormat, PointCloud};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" | "" => Ok(Split::All),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path as written in the manifest; relative paths are resolved against
    /// the manifest's directory.
    pub path: PathBuf,
    pub label: String,
    pub split: Split,
}

/// List of labelled cloud files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

#[derive(Deserialize)]
struct ManifestRecord {
    path: String,
    label: String,
    #[serde(default)]
    split: Option<String>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        for e in &entries {
            if e.label.trim().is_empty() {
                return Err(Error::invalid(format!("entry {} has an empty label", e.path.display())));
            }
        }
        Ok(Manifest { entries, base_dir: base_dir.into() })
    }

    /// Reads a `path,label,split` CSV (the split column may be omitted) and
    /// checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::invalid(format!("{}: {other:?}", path.display())),
            })?;
        let mut entries = Vec::new();
        for (i, rec) in reader.deserialize::<ManifestRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?;
            entries.push(ManifestEntry {
                path: PathBuf::from(rec.path),
                label: rec.label,
                split: rec.split.as_deref().unwrap_or("all").parse()?,
            });
        }
        if entries.is_empty() {
            return Err(Error::invalid(format!("manifest {} has no entries", path.display())));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest::new(entries, base)?;
        for e in &m.entries {
            let p = m.resolve(e);
            if !p.is_file() {
                return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing")));
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "label", "split"])?;
        for e in &self.entries {
            w.write_record([e.path.to_string_lossy().as_ref(), e.label.as_str(), &e.split.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<String> {
        sorted_classes(self.entries.iter().map(|e| e.label.as_str()))
    }
}

fn sorted_classes<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = labels.map(str::to_string).collect();
    v.sort();
    v.dedup();
    v
}

/// Assigns train/test per class: each class is shuffled with a seeded
/// generator and its first `round(fraction * n)` members (at least one, at
/// most `n - 1`) go to train.
pub fn split_labels(labels: &[&str], train_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut out = vec![Split::Test; labels.len()];
    for (c, (label, mut idx)) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::invalid(format!("class {label:?} needs at least 2 entries to split, has {}", idx.len())));
        }
        idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, c as u64)));
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            out[i] = Split::Train;
        }
    }
    Ok(out)
}

/// Manifest with every entry reassigned to train or test per class.
pub fn split_per_class(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<Manifest> {
    let labels: Vec<&str> = manifest.entries.iter().map(|e| e.label.as_str()).collect();
    let splits = split_labels(&labels, train_fraction, seed)?;
    let mut out = manifest.clone();
    for (e, s) in out.entries.iter_mut().zip(splits) {
        e.split = s;
    }
    Ok(out)
}

/// One labelled cloud.
#[derive(Debug, Clone)]
pub struct Sample {
    pub object_id: String,
    pub label: String,
    pub split: Split,
    pub cloud: PointCloud,
}

/// Labelled clouds after dataset-level unit-cube scaling.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Factor that was applied to every cloud.
    pub scale: f64,
}

impl Dataset {
    /// Scales raw samples so the largest object fits the unit cube.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let scale = dataset_scale_factor(samples.iter().map(|s| &s.cloud))?;
        Self::with_scale(samples, scale)
    }

    /// Applies a known scale factor (e.g. the one used at training time).
    pub fn with_scale(mut samples: Vec<Sample>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale factor must be positive, got {scale}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for s in &mut samples {
            s.cloud = scale_cloud(&s.cloud, scale);
        }
        Ok(Dataset { samples, scale })
    }

    /// Loads every manifest entry (files read in parallel, order kept).
    pub fn load(manifest: &Manifest, scale: Option<f64>) -> Result<Self> {
        let samples = manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = manifest.resolve(e);
                let format = CloudFormat::from_path(&path)
                    .ok_or_else(|| Error::invalid(format!("{}: unknown cloud format (expected .xyz or .ply)", path.display())))?;
                Ok(Sample {
                    object_id: e.path.to_string_lossy().into_owned(),
                    label: e.label.clone(),
                    split: e.split,
                    cloud: load_cloud(&path, format)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match scale {
            Some(s) => Self::with_scale(samples, s),
            None => Self::from_samples(samples),
        }
    }

    pub fn classes(&self) -> Vec<String> {
        sorted_classes(self.samples.iter().map(|s| s.label.as_str()))
    }

    /// Resolves `all` entries into train/test per class; explicit splits
    /// are kept.
    pub fn resolve_splits(&mut self, train_fraction: f64, seed: u64) -> Result<()> {
        let open: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].split == Split::All).collect();
        if open.is_empty() {
            return Ok(());
        }
        let labels: Vec<&str> = open.iter().map(|&i| self.samples[i].label.as_str()).collect();
        let splits = split_labels(&labels, train_fraction, seed)?;
        for (&i, s) in open.iter().zip(splits) {
            self.samples[i].split = s;
        }
        Ok(())
    }
}
