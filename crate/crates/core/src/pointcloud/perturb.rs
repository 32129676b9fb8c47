use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{PointCloud, Vector3};
use crate::error::{Error, Result};
use crate::rng;

/// Adds independent N(0, sigma^2) noise to every coordinate. Normals are
/// dropped because they no longer describe the perturbed surface.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone().without_normals());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::seeded(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let d = Vector3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            );
            p + d
        })
        .collect();
    Ok(PointCloud::from_parts_unchecked(points, None))
}

/// Removes the `fraction` of points (rounded down) with the largest
/// projection onto `direction`; ties go to the higher point index first.
/// Normals of the kept points are preserved.
pub fn occlude_halfspace(cloud: &PointCloud, direction: &Vector3, fraction: f64) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("occlusion fraction must be in [0,1), got {fraction}")));
    }
    let norm = direction.norm();
    if !(norm > 0.0) {
        return Err(Error::invalid("occlusion direction must be non-zero"));
    }
    let dir = direction / norm;
    let n = cloud.len();
    let remove = (fraction * n as f64).floor() as usize;
    if n - remove < 2 {
        return Err(Error::invalid(format!(
            "occluding {remove} of {n} points would leave fewer than 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let proj: Vec<f64> = cloud.points().iter().map(|p| p.coords.dot(&dir)).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let mut keep = order[..n - remove].to_vec();
    keep.sort_unstable();
    let points = keep.iter().map(|&i| cloud.points()[i]).collect();
    let normals = cloud.normals().map(|ns| keep.iter().map(|&i| ns[i]).collect());
    Ok(PointCloud::from_parts_unchecked(points, normals))
}

/// Uniformly random rotation (quaternion from four normals).
pub fn random_rotation<R: Rng>(rng: &mut R) -> super::Rotation3 {
    use rand_distr::StandardNormal;
    loop {
        let q = nalgebra::Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-9 {
            return nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        }
    }
}
