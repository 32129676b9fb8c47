//! The 4D point-pair histogram descriptor.
//!
//! Pipeline per object: build the occupancy grid, draw `n_pairs` random
//! point pairs, evaluate the four point-pair functions, count them into a
//! `N_f1 x N_f2 x N_f3 x N_f4` histogram, up-weight long-distance bins by
//! `ln(i / N_f1 + c)` and L1-normalise.
//!
//! Bins are flattened row-major with f1 slowest and f4 fastest.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};
use crate::ppf::{compute_pair_unchecked, PpfDim, MIN_PAIR_DISTANCE};
use crate::rng;
use crate::voxelgrid::{VoxelGrid, DEFAULT_DIMS};

pub const FORMAT_VERSION: u32 = 1;

/// Redraw budget per pair before sampling gives up on coincident points.
const MAX_PAIR_RETRIES: usize = 10_000;

/// One sampled point pair (indices into the cloud).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub n_pairs: usize,
    /// Bin counts for (f1, f2, f3, f4).
    pub bins: [usize; 4],
    /// Distance-weighting constant, > 1.
    pub c: f64,
    /// Value range (lo, hi) per function.
    pub ranges: [(f64, f64); 4],
    pub seed: u64,
}

pub const FULL_BINS: [usize; 4] = [20, 4, 5, 3];
pub const SHORT_BINS: [usize; 4] = [15, 3, 4, 3];

impl DescriptorConfig {
    /// 20 000 pairs, bins (20, 4, 5, 3), c = 1.2.
    pub fn full() -> Self {
        DescriptorConfig {
            n_pairs: 20_000,
            bins: FULL_BINS,
            c: 1.2,
            ranges: [(0.0, 3f64.sqrt()), (0.0, FRAC_PI_2), (0.0, FRAC_PI_2), (0.0, 1.0)],
            seed: 0,
        }
    }

    /// Compact variant with bins (15, 3, 4, 3).
    pub fn short() -> Self {
        DescriptorConfig {
            bins: SHORT_BINS,
            ..Self::full()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_bins(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.iter().any(|&b| b == 0) {
            return Err(Error::invalid(format!("bin counts must be >= 1, got {:?}", self.bins)));
        }
        if !(self.c > 1.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("weighting constant c must be > 1, got {}", self.c)));
        }
        if self.n_pairs == 0 {
            return Err(Error::invalid("n_pairs must be positive"));
        }
        for (d, (lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!("range of f{} is degenerate: [{lo}, {hi}]", d + 1)));
            }
        }
        Ok(())
    }

    /// Same config with the histogram layout (bins, ranges, c) compared;
    /// sampling parameters may differ.
    pub fn same_layout(&self, other: &DescriptorConfig) -> bool {
        self.bins == other.bins && self.ranges == other.ranges && self.c == other.c
    }
}

/// Collapses one axis to a single bin, which removes that function from
/// the descriptor.
pub fn ablate_dimension(cfg: &DescriptorConfig, dim: PpfDim) -> DescriptorConfig {
    let mut out = cfg.clone();
    out.bins[dim.index()] = 1;
    out
}

/// `floor((clamp(v, lo, hi) - lo) / (hi - lo) * n)`, with `hi` mapped into
/// the last bin.
pub fn bin_index(value: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    let t = (value.clamp(lo, hi) - lo) / (hi - lo);
    let b = (t * n_bins as f64).floor();
    if b >= n_bins as f64 {
        n_bins - 1
    } else if b > 0.0 {
        b as usize
    } else {
        0
    }
}

/// Weight of Euclidean bin `i` (zero-based): `ln(i / n_f1 + c)`.
pub fn distance_weight(i: usize, n_f1: usize, c: f64) -> f64 {
    (i as f64 / n_f1 as f64 + c).ln()
}

/// Draws `n_pairs` index pairs, independently and with replacement across
/// pairs; within a pair `i != j` and the two points are not coincident.
///
/// Each draw takes `i = U(n)` and `j = U(n - 1)`, bumping `j` past `i`, where
/// `U` is [`rng::uniform_index`] on the [`rng::seeded`] stream.
pub fn sample_pairs(points: &[Point3], n_pairs: usize, seed: u64) -> Result<Vec<PairSample>> {
    let n = points.len();
    let distinct = points
        .first()
        .map_or(false, |p0| points.iter().any(|p| (p - p0).norm() > MIN_PAIR_DISTANCE));
    if n < 2 || !distinct {
        return Err(Error::Degenerate("pair sampling needs at least 2 distinct points".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let mut tries = 0;
        loop {
            let i = rng::uniform_index(&mut rng, n);
            let mut j = rng::uniform_index(&mut rng, n - 1);
            if j >= i {
                j += 1;
            }
            if (points[i] - points[j]).norm() > MIN_PAIR_DISTANCE {
                pairs.push(PairSample { i, j });
                break;
            }
            tries += 1;
            if tries >= MAX_PAIR_RETRIES {
                return Err(Error::Degenerate(format!(
                    "no non-coincident pair found in {MAX_PAIR_RETRIES} draws"
                )));
            }
        }
    }
    Ok(pairs)
}

/// Raw (unweighted) 4D pair counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairHistogram {
    pub bins: [usize; 4],
    pub counts: Vec<u64>,
}

impl PairHistogram {
    pub fn zeros(bins: [usize; 4]) -> Self {
        PairHistogram {
            bins,
            counts: vec![0; bins.iter().product()],
        }
    }

    pub fn flat_index(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.bins[1] + idx[1]) * self.bins[2] + idx[2]) * self.bins[3] + idx[3]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Histogram with `dim` collapsed to a single bin, i.e. the counts
    /// the ablated configuration would produce from the same pairs.
    pub fn collapse(&self, dim: PpfDim) -> PairHistogram {
        let keep: Vec<PpfDim> = PpfDim::ALL.into_iter().filter(|d| *d != dim).collect();
        let mut bins = self.bins;
        bins[dim.index()] = 1;
        PairHistogram { bins, counts: self.marginal(&keep) }
    }

    /// Sums out every axis not in `keep`; the result is row-major over the
    /// kept axes in f1..f4 order. Keeping nothing yields the total.
    pub fn marginal(&self, keep: &[PpfDim]) -> Vec<u64> {
        let kept: Vec<usize> = (0..4).filter(|d| keep.iter().any(|k| k.index() == *d)).collect();
        let out_len: usize = kept.iter().map(|&d| self.bins[d]).product();
        let mut out = vec![0u64; out_len];
        let mut idx = [0usize; 4];
        for &count in &self.counts {
            let o = kept.iter().fold(0, |acc, &d| acc * self.bins[d] + idx[d]);
            out[o] += count;
            // advance the 4D odometer, f4 fastest
            for d in (0..4).rev() {
                idx[d] += 1;
                if idx[d] < self.bins[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }
}

/// Counts the given pairs into a histogram with `cfg`'s layout.
pub fn accumulate_pairs(
    cloud: &PointCloud,
    grid: &VoxelGrid,
    pairs: &[PairSample],
    cfg: &DescriptorConfig,
) -> Result<PairHistogram> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::invalid("descriptor computation needs normals"))?;
    let points = cloud.points();
    let mut hist = PairHistogram::zeros(cfg.bins);
    for &pair in pairs {
        if pair.i >= points.len() || pair.j >= points.len() || pair.i == pair.j {
            return Err(Error::invalid(format!("invalid pair {pair:?}")));
        }
        if (points[pair.i] - points[pair.j]).norm() <= MIN_PAIR_DISTANCE {
            return Err(Error::Degenerate(format!("coincident pair {pair:?}")));
        }
        let f = compute_pair_unchecked(points, normals, grid, pair).as_array();
        let mut idx = [0usize; 4];
        for d in 0..4 {
            let (lo, hi) = cfg.ranges[d];
            idx[d] = bin_index(f[d], lo, hi, cfg.bins[d]);
        }
        let flat = hist.flat_index(idx);
        hist.counts[flat] += 1;
    }
    Ok(hist)
}

/// Grid, pair sampling and counting, without weighting.
pub fn compute_counts(cloud: &PointCloud, cfg: &DescriptorConfig) -> Result<PairHistogram> {
    cfg.validate()?;
    if cloud.normals().is_none() {
        return Err(Error::invalid("descriptor computation needs normals"));
    }
    let grid = VoxelGrid::build(cloud, DEFAULT_DIMS)?;
    let pairs = sample_pairs(cloud.points(), cfg.n_pairs, cfg.seed)?;
    accumulate_pairs(cloud, &grid, &pairs, cfg)
}

/// Weighted, L1-normalised histogram plus the configuration that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub version: u32,
    #[serde(flatten)]
    pub config: DescriptorConfig,
    pub weights: Vec<f64>,
}

impl Descriptor {
    /// Applies the distance weighting to `counts` and normalises.
    pub fn from_counts(cfg: &DescriptorConfig, counts: &PairHistogram) -> Result<Self> {
        if counts.bins != cfg.bins {
            return Err(Error::ConfigMismatch(format!(
                "histogram bins {:?} vs config bins {:?}",
                counts.bins, cfg.bins
            )));
        }
        let per_f1: usize = cfg.bins[1..].iter().product();
        let mut weights: Vec<f64> = counts
            .counts
            .iter()
            .enumerate()
            .map(|(flat, &c)| distance_weight(flat / per_f1, cfg.bins[0], cfg.c) * c as f64)
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("histogram is empty".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Descriptor {
            version: FORMAT_VERSION,
            config: cfg.clone(),
            weights,
        })
    }

    /// Descriptor from explicit weights (already normalised by the caller).
    pub fn from_weights(cfg: &DescriptorConfig, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != cfg.n_bins() {
            return Err(Error::ConfigMismatch(format!(
                "{} weights for {} bins",
                weights.len(),
                cfg.n_bins()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("descriptor weights must be finite and non-negative"));
        }
        Ok(Descriptor {
            version: FORMAT_VERSION,
            config: cfg.clone(),
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Descriptor = serde_json::from_str(s)?;
        if d.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported descriptor version {}", d.version)));
        }
        d.config.validate()?;
        Descriptor::from_weights(&d.config, d.weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Full descriptor of one cloud (normals required).
pub fn compute_descriptor(cloud: &PointCloud, cfg: &DescriptorConfig) -> Result<Descriptor> {
    let counts = compute_counts(cloud, cfg)?;
    Descriptor::from_counts(cfg, &counts)
}
