//! Point clouds, triangle meshes and the transformations applied to them
//! before description: dataset-level unit-cube scaling, mesh sampling,
//! synthetic shapes, noise and occlusion.

mod io;
mod mesh;
mod perturb;
mod synthetic;

pub use io::{load_cloud, load_mesh, save_cloud, CloudFormat};
pub use mesh::{sample_mesh, TriangleMesh};
pub use perturb::{add_gaussian_noise, occlude_halfspace, random_rotation};
pub use synthetic::{generate_synthetic, SyntheticShape};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type Rotation3 = nalgebra::Rotation3<f64>;

/// Tolerance on the Euclidean norm of stored unit normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    /// Bounding box of a non-empty point set.
    pub fn from_points(points: &[Point3]) -> Option<Self> {
        let first = *points.first()?;
        let (min, max) = points.iter().fold((first, first), |(lo, hi), p| {
            (
                Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        });
        Some(Aabb { min, max })
    }

    pub fn extent(&self) -> Vector3 {
        self.max - self.min
    }

    pub fn max_edge(&self) -> f64 {
        self.extent().max()
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }
}

/// Ordered points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3>>,
}

impl PointCloud {
    /// Cloud without normals. Every coordinate must be finite.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            points,
            normals: None,
        })
    }

    /// Cloud with normals; lengths must match and every normal must be unit.
    pub fn with_normals(points: Vec<Point3>, normals: Vec<Vector3>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn set_normals(&mut self, normals: Vec<Vector3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::invalid(format!(
                    "normal {i} is not a unit vector (norm {})",
                    n.norm()
                )));
            }
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    /// Rigid motion `p -> R p + t`; normals are rotated.
    pub fn transformed(&self, rotation: &Rotation3, translation: &Vector3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| rotation * p + translation).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rotation * n).collect()),
        }
    }

    pub fn translated(&self, t: &Vector3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + t).collect(),
            normals: self.normals.clone(),
        }
    }

    pub(crate) fn from_parts_unchecked(points: Vec<Point3>, normals: Option<Vec<Vector3>>) -> Self {
        PointCloud { points, normals }
    }
}

/// Single scale factor that makes the largest object of a dataset fit the
/// unit cube while preserving relative object sizes.
pub fn dataset_scale_factor<'a, I>(clouds: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a PointCloud>,
{
    let mut largest: Option<f64> = None;
    for cloud in clouds {
        if let Some(aabb) = cloud.aabb() {
            let edge = aabb.max_edge();
            largest = Some(largest.map_or(edge, |l| l.max(edge)));
        }
    }
    match largest {
        None => Err(Error::invalid("no non-empty cloud to derive a scale factor from")),
        Some(e) if !(e > 0.0) => Err(Error::Degenerate("every cloud has zero extent".into())),
        Some(e) => Ok(1.0 / e),
    }
}

/// Multiplies every coordinate by `s`; normals are directions and stay as-is.
pub fn scale_cloud(cloud: &PointCloud, s: f64) -> PointCloud {
    debug_assert!(s > 0.0);
    PointCloud {
        points: cloud.points.iter().map(|p| Point3::from(p.coords * s)).collect(),
        normals: cloud.normals.clone(),
    }
}
