//! The four point-pair functions.
//!
//! All angular functions use absolute dot products, so they are invariant
//! under independent sign flips of either normal and under swapping the two
//! points. That makes unoriented normals sufficient.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::descriptor::PairSample;
use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud, Vector3};
use crate::voxelgrid::VoxelGrid;

/// Points closer than this are treated as coincident.
pub const MIN_PAIR_DISTANCE: f64 = 1e-12;

/// Axis of the 4D feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PpfDim {
    F1,
    F2,
    F3,
    F4,
}

impl PpfDim {
    pub const ALL: [PpfDim; 4] = [PpfDim::F1, PpfDim::F2, PpfDim::F3, PpfDim::F4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["f1", "f2", "f3", "f4"][self as usize]
    }
}

/// Feature vector of one point pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpfValues {
    /// Euclidean distance.
    pub f1: f64,
    /// Largest angle between the connecting line and either tangent plane.
    pub f2: f64,
    /// Angle between the (unoriented) normals.
    pub f3: f64,
    /// Fraction of occupied voxels along the connecting line.
    pub f4: f64,
}

impl PpfValues {
    pub fn as_array(&self) -> [f64; 4] {
        [self.f1, self.f2, self.f3, self.f4]
    }
}

fn clamped_acos(x: f64) -> f64 {
    x.clamp(0.0, 1.0).acos()
}

pub fn f1_euclidean(p1: &Point3, p2: &Point3) -> f64 {
    (p2 - p1).norm()
}

/// Angle between the line direction and the tangent plane at one point:
/// `pi/2 - acos(|n . d|)` for a unit direction `d`.
fn tangent_angle(n: &Vector3, d: &Vector3) -> f64 {
    FRAC_PI_2 - clamped_acos(n.dot(d).abs())
}

/// Maximum surface angle, in `[0, pi/2]`.
pub fn f2_max_surface_angle(p1: &Point3, n1: &Vector3, p2: &Point3, n2: &Vector3) -> Result<f64> {
    let d = p2 - p1;
    let len = d.norm();
    if !(len > MIN_PAIR_DISTANCE) {
        return Err(Error::Degenerate(format!("coincident pair (distance {len})")));
    }
    let d = d / len;
    Ok(tangent_angle(n1, &d).max(tangent_angle(n2, &d)))
}

/// Normal distance `acos(|n1 . n2|)`, in `[0, pi/2]`.
pub fn f3_normal_distance(n1: &Vector3, n2: &Vector3) -> f64 {
    clamped_acos(n1.dot(n2).abs())
}

/// Occupancy ratio along the segment; see [`VoxelGrid::occupancy_ratio`].
pub fn f4_occupancy(grid: &VoxelGrid, p1: &Point3, p2: &Point3) -> Result<f64> {
    grid.occupancy_ratio(p1, p2)
}

/// All four functions for one sampled pair. The cloud must carry normals
/// and the grid must have been built over the same cloud.
pub fn compute_pair(cloud: &PointCloud, grid: &VoxelGrid, pair: PairSample) -> Result<PpfValues> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::invalid("point-pair features need normals"))?;
    let (i, j) = (pair.i, pair.j);
    if i >= cloud.len() || j >= cloud.len() || i == j {
        return Err(Error::invalid(format!("invalid pair ({i}, {j}) for {} points", cloud.len())));
    }
    let (p1, p2) = (&cloud.points()[i], &cloud.points()[j]);
    let (n1, n2) = (&normals[i], &normals[j]);
    Ok(PpfValues {
        f1: f1_euclidean(p1, p2),
        f2: f2_max_surface_angle(p1, n1, p2, n2)?,
        f3: f3_normal_distance(n1, n2),
        f4: f4_occupancy(grid, p1, p2)?,
    })
}

/// Fast path used by descriptor accumulation; `pair` indices must be valid
/// and non-coincident.
pub(crate) fn compute_pair_unchecked(
    points: &[Point3],
    normals: &[Vector3],
    grid: &VoxelGrid,
    pair: PairSample,
) -> PpfValues {
    let (p1, p2) = (&points[pair.i], &points[pair.j]);
    let (n1, n2) = (&normals[pair.i], &normals[pair.j]);
    let diff = p2 - p1;
    let f1 = diff.norm();
    let d = diff / f1;
    PpfValues {
        f1,
        f2: tangent_angle(n1, &d).max(tangent_angle(n2, &d)),
        f3: f3_normal_distance(n1, n2),
        f4: grid.occupancy_ratio_unchecked(p1, p2),
    }
}
