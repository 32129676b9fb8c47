use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud, Vector3};
use crate::error::{Error, Result};
use crate::rng::{self, uniform_f64};

/// Analytic surfaces centred at the origin, used as a desk-scale corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SyntheticShape {
    Sphere { radius: f64 },
    /// Axis-aligned box with the given edge lengths.
    Box { size: [f64; 3] },
    /// Closed cylinder along z.
    Cylinder { radius: f64, height: f64 },
    /// Closed cone along z, apex up.
    Cone { radius: f64, height: f64 },
    /// Ring torus around z; requires `major > minor`.
    Torus { major: f64, minor: f64 },
    /// Flat rectangle in the z = 0 plane.
    PlanePanel { width: f64, height: f64 },
}

impl SyntheticShape {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticShape::Sphere { .. } => "sphere",
            SyntheticShape::Box { .. } => "box",
            SyntheticShape::Cylinder { .. } => "cylinder",
            SyntheticShape::Cone { .. } => "cone",
            SyntheticShape::Torus { .. } => "torus",
            SyntheticShape::PlanePanel { .. } => "plane_panel",
        }
    }

    /// Same geometry with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SyntheticShape {
        use SyntheticShape::*;
        match *self {
            Sphere { radius } => Sphere { radius: radius * factor },
            Box { size } => Box { size: size.map(|s| s * factor) },
            Cylinder { radius, height } => Cylinder { radius: radius * factor, height: height * factor },
            Cone { radius, height } => Cone { radius: radius * factor, height: height * factor },
            Torus { major, minor } => Torus { major: major * factor, minor: minor * factor },
            PlanePanel { width, height } => PlanePanel { width: width * factor, height: height * factor },
        }
    }

    /// Shape from a name and a flat parameter list (CLI form).
    pub fn from_name(name: &str, params: &[f64]) -> Result<SyntheticShape> {
        let need = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} takes {n} size parameters, got {}", params.len())))
            }
        };
        let shape = match name {
            "sphere" => {
                need(1)?;
                SyntheticShape::Sphere { radius: params[0] }
            }
            "box" => {
                need(3)?;
                SyntheticShape::Box { size: [params[0], params[1], params[2]] }
            }
            "cylinder" => {
                need(2)?;
                SyntheticShape::Cylinder { radius: params[0], height: params[1] }
            }
            "cone" => {
                need(2)?;
                SyntheticShape::Cone { radius: params[0], height: params[1] }
            }
            "torus" => {
                need(2)?;
                SyntheticShape::Torus { major: params[0], minor: params[1] }
            }
            "plane_panel" => {
                need(2)?;
                SyntheticShape::PlanePanel { width: params[0], height: params[1] }
            }
            other => return Err(Error::invalid(format!("unknown synthetic shape {other:?}"))),
        };
        shape.validate()?;
        Ok(shape)
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            SyntheticShape::Sphere { radius } => vec![radius],
            SyntheticShape::Box { size } => size.to_vec(),
            SyntheticShape::Cylinder { radius, height } | SyntheticShape::Cone { radius, height } => {
                vec![radius, height]
            }
            SyntheticShape::Torus { major, minor } => vec![major, minor],
            SyntheticShape::PlanePanel { width, height } => vec![width, height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.params().into_iter().find(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid(format!("{}: size parameter {bad} must be positive", self.name())));
        }
        if let SyntheticShape::Torus { major, minor } = *self {
            if major <= minor {
                return Err(Error::invalid("torus needs major radius > minor radius"));
            }
        }
        Ok(())
    }
}

fn unit_direction<R: Rng>(rng: &mut R) -> Vector3 {
    loop {
        let v = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Picks index `i` with probability `weights[i] / sum(weights)`.
fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = uniform_f64(rng) * total;
    for (i, w) in weights.iter().enumerate() {
        if t < *w {
            return i;
        }
        t -= w;
    }
    weights.len() - 1
}

/// Uniform point in a disk of radius `r` in the xy plane.
fn disk<R: Rng>(rng: &mut R, r: f64) -> (f64, f64) {
    let rho = r * uniform_f64(rng).sqrt();
    let theta = 2.0 * PI * uniform_f64(rng);
    (rho * theta.cos(), rho * theta.sin())
}

fn sample_one<R: Rng>(shape: &SyntheticShape, rng: &mut R) -> (Point3, Vector3) {
    match *shape {
        SyntheticShape::Sphere { radius } => {
            let d = unit_direction(rng);
            (Point3::from(d * radius), d)
        }
        SyntheticShape::Box { size } => {
            let [sx, sy, sz] = size;
            // Face pairs normal to x, y, z.
            let axis = pick(rng, &[sy * sz, sx * sz, sx * sy]);
            let sign = if uniform_f64(rng) < 0.5 { -1.0 } else { 1.0 };
            let mut c = [
                (uniform_f64(rng) - 0.5) * sx,
                (uniform_f64(rng) - 0.5) * sy,
                (uniform_f64(rng) - 0.5) * sz,
            ];
            c[axis] = sign * 0.5 * size[axis];
            let mut n = Vector3::zeros();
            n[axis] = sign;
            (Point3::new(c[0], c[1], c[2]), n)
        }
        SyntheticShape::Cylinder { radius, height } => {
            let lateral = 2.0 * PI * radius * height;
            let cap = PI * radius * radius;
            match pick(rng, &[lateral, cap, cap]) {
                0 => {
                    let theta = 2.0 * PI * uniform_f64(rng);
                    let z = (uniform_f64(rng) - 0.5) * height;
                    let n = Vector3::new(theta.cos(), theta.sin(), 0.0);
                    (Point3::new(radius * n.x, radius * n.y, z), n)
                }
                k => {
                    let (x, y) = disk(rng, radius);
                    let s = if k == 1 { 1.0 } else { -1.0 };
                    (Point3::new(x, y, s * 0.5 * height), Vector3::new(0.0, 0.0, s))
                }
            }
        }
        SyntheticShape::Cone { radius, height } => {
            let slant = (radius * radius + height * height).sqrt();
            let lateral = PI * radius * slant;
            let base = PI * radius * radius;
            if pick(rng, &[lateral, base]) == 0 {
                // Distance from the apex grows as sqrt(u) for area uniformity.
                let t = uniform_f64(rng).sqrt();
                let theta = 2.0 * PI * uniform_f64(rng);
                let (c, s) = (theta.cos(), theta.sin());
                let p = Point3::new(radius * t * c, radius * t * s, 0.5 * height - height * t);
                let n = Vector3::new(height * c, height * s, radius) / slant;
                (p, n)
            } else {
                let (x, y) = disk(rng, radius);
                (Point3::new(x, y, -0.5 * height), -Vector3::z())
            }
        }
        SyntheticShape::Torus { major, minor } => {
            // Tube angle by rejection against the local circumference.
            let phi = loop {
                let phi = 2.0 * PI * uniform_f64(rng);
                if uniform_f64(rng) * (major + minor) < major + minor * phi.cos() {
                    break phi;
                }
            };
            let theta = 2.0 * PI * uniform_f64(rng);
            let ring = major + minor * phi.cos();
            let p = Point3::new(ring * theta.cos(), ring * theta.sin(), minor * phi.sin());
            let n = Vector3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
            (p, n)
        }
        SyntheticShape::PlanePanel { width, height } => (
            Point3::new((uniform_f64(rng) - 0.5) * width, (uniform_f64(rng) - 0.5) * height, 0.0),
            Vector3::z(),
        ),
    }
}

/// Deterministic area-uniform samples with analytic unit normals.
pub fn generate_synthetic(shape: &SyntheticShape, n_points: usize, seed: u64) -> Result<PointCloud> {
    shape.validate()?;
    if n_points < 100 {
        return Err(Error::invalid(format!("synthetic clouds need at least 100 points, got {n_points}")));
    }
    let mut rng = rng::seeded(seed);
    let (points, normals): (Vec<_>, Vec<_>) = (0..n_points)
        .map(|_| {
            let (p, n) = sample_one(shape, &mut rng);
            (p, n.normalize())
        })
        .unzip();
    PointCloud::with_normals(points, normals)
}
