//! Unoriented surface normals from local PCA over exact k nearest neighbours.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, Vector3};

/// Normal used for neighbourhoods with no spatial spread.
pub const FALLBACK_NORMAL: Vector3 = Vector3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalConfig {
    /// Neighbours per point, not counting the point itself.
    pub k: usize,
}

impl Default for NormalConfig {
    fn default() -> Self {
        NormalConfig { k: 16 }
    }
}

/// Cloud with estimated normals and the number of points whose
/// neighbourhood collapsed to a single location.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub degenerate: usize,
}

/// Estimates a unit normal per point as the smallest-eigenvalue eigenvector
/// of the covariance of the point and its `k` nearest neighbours.
///
/// Signs are canonicalised (largest-magnitude component positive) so output
/// is deterministic; downstream features do not depend on the sign.
pub fn estimate_normals(cloud: &PointCloud, cfg: &NormalConfig) -> Result<NormalEstimate> {
    if cfg.k < 3 {
        return Err(Error::invalid(format!("normal estimation needs k >= 3, got {}", cfg.k)));
    }
    if cloud.len() <= cfg.k {
        return Err(Error::invalid(format!(
            "normal estimation with k = {} needs more than {} points, cloud has {}",
            cfg.k,
            cfg.k,
            cloud.len()
        )));
    }
    let points = cloud.points();
    let tree = KdTree::new(points);
    let results: Vec<Option<Vector3>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let hood = tree.nearest(&points[i], cfg.k + 1);
            pca_normal(hood.iter().map(|&j| points[j].coords))
        })
        .collect();
    let degenerate = results.iter().filter(|r| r.is_none()).count();
    let normals = results
        .into_iter()
        .map(|r| r.unwrap_or(FALLBACK_NORMAL))
        .collect();
    let mut out = cloud.clone();
    out.set_normals(normals)?;
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}

/// Smallest-variance direction of a point set, or `None` when all points
/// coincide.
pub fn pca_normal(coords: impl Iterator<Item = Vector3> + Clone) -> Option<Vector3> {
    let first = coords.clone().next()?;
    if coords.clone().all(|c| c == first) {
        return None;
    }
    let (sum, n) = coords
        .clone()
        .fold((Vector3::zeros(), 0usize), |(s, n), c| (s + c, n + 1));
    let mean = sum / n as f64;
    let mut cov = Matrix3::zeros();
    for c in coords {
        let d = c - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut n: Vector3 = eig.eigenvectors.column(imin).into_owned();
    n /= n.norm();
    let lead = n.iamax();
    if n[lead] < 0.0 {
        n = -n;
    }
    Some(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{generate_synthetic, Point3, SyntheticShape};
    use crate::rng::{seeded, uniform_f64};

    #[test]
    fn planar_cloud_normals_are_z() {
        let mut rng = seeded(1);
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(uniform_f64(&mut rng), uniform_f64(&mut rng), 0.0))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        for k in [3, 8, 16] {
            let est = estimate_normals(&cloud, &NormalConfig { k }).unwrap();
            assert_eq!(est.degenerate, 0);
            for n in est.cloud.normals().unwrap() {
                assert!((n.z.abs() - 1.0).abs() < 1e-6);
                assert!((n.norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sphere_normals_radial() {
        let cloud = generate_synthetic(&SyntheticShape::Sphere { radius: 1.0 }, 5000, 2)
            .unwrap()
            .without_normals();
        let est = estimate_normals(&cloud, &NormalConfig::default()).unwrap();
        let cos10 = 10f64.to_radians().cos();
        let good = est
            .cloud
            .points()
            .iter()
            .zip(est.cloud.normals().unwrap())
            .filter(|(p, n)| p.coords.normalize().dot(n).abs() >= cos10)
            .count();
        assert!(good as f64 >= 0.99 * 5000.0, "{good} of 5000 within 10 degrees");
    }

    #[test]
    fn identical_points_are_degenerate() {
        let cloud = PointCloud::new(vec![Point3::new(0.1, 2.7, -3.3); 10]).unwrap();
        let est = estimate_normals(&cloud, &NormalConfig { k: 9 }).unwrap();
        assert_eq!(est.degenerate, 10);
        assert!(est.cloud.normals().unwrap().iter().all(|n| *n == FALLBACK_NORMAL));
    }

    #[test]
    fn preconditions() {
        let cloud = PointCloud::new(vec![Point3::origin(); 5]).unwrap();
        assert!(estimate_normals(&cloud, &NormalConfig { k: 5 }).is_err());
        assert!(estimate_normals(&cloud, &NormalConfig { k: 2 }).is_err());
    }

    #[test]
    fn rotation_equivariant_up_to_sign() {
        let cloud = generate_synthetic(&SyntheticShape::Torus { major: 0.5, minor: 0.2 }, 3000, 9)
            .unwrap()
            .without_normals();
        let rot = crate::pointcloud::random_rotation(&mut seeded(4));
        let rotated = cloud.transformed(&rot, &Vector3::new(0.3, -2.0, 1.0));
        let a = estimate_normals(&cloud, &NormalConfig::default()).unwrap().cloud;
        let b = estimate_normals(&rotated, &NormalConfig::default()).unwrap().cloud;
        for (na, nb) in a.normals().unwrap().iter().zip(b.normals().unwrap()) {
            assert!((rot * na).dot(nb).abs() >= 1.0 - 1e-6);
        }
    }
}
