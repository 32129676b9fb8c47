use super::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng;

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::invalid(format!(
                    "face {f} references vertex {bad} but the mesh has {} vertices",
                    vertices.len()
                )));
            }
        }
        Ok(TriangleMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    fn corners(&self, face: &[usize; 3]) -> [Point3; 3] {
        [self.vertices[face[0]], self.vertices[face[1]], self.vertices[face[2]]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(&self.faces[f]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

/// Number of samples for a surface of `area` at linear `resolution`:
/// `ceil(area / resolution^2)`, treating quotients within 1e-9 (relative) of
/// an integer as that integer so that e.g. 1 / 0.1^2 gives 100, not 101.
pub fn sample_count(area: f64, resolution: f64) -> usize {
    let q = area / (resolution * resolution);
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// Area-uniform surface sampling: a face is chosen with probability
/// proportional to its area, then a barycentric-uniform point inside it.
pub fn sample_mesh(mesh: &TriangleMesh, resolution: f64, seed: u64) -> Result<PointCloud> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut faces = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let a = mesh.face_area(f);
        if a > 0.0 {
            total += a;
            cumulative.push(total);
            faces.push(f);
        }
    }
    if faces.is_empty() {
        return Err(Error::Degenerate("mesh has no face with positive area".into()));
    }
    let n = sample_count(total, resolution);
    let mut rng = rng::seeded(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng::uniform_f64(&mut rng) * total;
        let slot = cumulative.partition_point(|&c| c <= target).min(faces.len() - 1);
        let [a, b, c] = mesh.corners(&mesh.faces[faces[slot]]);
        let (mut u, mut v) = (rng::uniform_f64(&mut rng), rng::uniform_f64(&mut rng));
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Vector3;

    fn unit_square(z: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, z),
                Point3::new(1.0, 0.0, z),
                Point3::new(1.0, 1.0, z),
                Point3::new(0.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn unit_square_at_decimetre() {
        let c = sample_mesh(&unit_square(0.25), 0.1, 3).unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.points().iter().all(|p| p.z == 0.25));
        assert!(c.normals().is_none());
    }

    /// Barycentric coordinates of `p` w.r.t. triangle (a, b, c), solved
    /// independently via the normal-equation 2x2 system.
    fn barycentric(p: Point3, a: Point3, b: Point3, c: Point3) -> (f64, f64, f64) {
        let (v0, v1, v2) = (b - a, c - a, p - a);
        let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
        let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
        let den = d00 * d11 - d01 * d01;
        let v = (d11 * d20 - d01 * d21) / den;
        let w = (d00 * d21 - d01 * d20) / den;
        (1.0 - v - w, v, w)
    }

    #[test]
    fn single_triangle_points_inside() {
        let (a, b, c) = (
            Point3::new(0.3, -1.0, 2.0),
            Point3::new(2.0, 0.5, 1.0),
            Point3::new(-0.5, 1.5, 0.0),
        );
        let mesh = TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        let r = 0.05;
        let cloud = sample_mesh(&mesh, r, 11).unwrap();
        assert_eq!(cloud.len(), (area / (r * r)).ceil() as usize);
        let normal: Vector3 = (b - a).cross(&(c - a)).normalize();
        for p in cloud.points() {
            let (u, v, w) = barycentric(*p, a, b, c);
            assert!(u >= -1e-12 && v >= -1e-12 && w >= -1e-12, "{u} {v} {w}");
            assert!((p - a).dot(&normal).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let p = Point3::new(1.0, 1.0, 1.0);
        let mesh = TriangleMesh::new(vec![p, p, Point3::new(2.0, 2.0, 2.0)], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_mesh(&mesh, 0.1, 0), Err(Error::Degenerate(_))));
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(sample_mesh(&empty, 0.1, 0).is_err());
        assert!(sample_mesh(&unit_square(0.0), 0.0, 0).is_err());
    }

    #[test]
    fn bad_face_index() {
        assert!(TriangleMesh::new(vec![Point3::origin()], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn area_weighting() {
        // Big square at z=0 (area 1) and a small one at z=1 (area 1/4).
        let mut v = unit_square(0.0).vertices().to_vec();
        v.extend([
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.5, 0.0, 1.0),
            Point3::new(0.5, 0.5, 1.0),
            Point3::new(0.0, 0.5, 1.0),
        ]);
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]]).unwrap();
        let c = sample_mesh(&mesh, 0.01, 5).unwrap();
        assert_eq!(c.len(), 12500);
        let top = c.points().iter().filter(|p| p.z == 1.0).count() as f64 / c.len() as f64;
        assert!((top - 0.2).abs() < 0.02, "fraction on small square {top}");
    }

    #[test]
    fn count_rule() {
        assert_eq!(sample_count(1.0, 0.1), 100);
        assert_eq!(sample_count(1.005, 0.1), 101);
        assert_eq!(sample_count(0.5, 0.01), 5000);
    }
}
