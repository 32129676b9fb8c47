//! Fixtures shared by the criterion benches.

use eppf_core::pointcloud::{generate_synthetic, SyntheticShape};
use eppf_core::{Descriptor, DescriptorConfig, PointCloud};

/// Torus with analytic normals, `n` points.
pub fn torus(n: usize) -> PointCloud {
    generate_synthetic(&SyntheticShape::Torus { major: 0.35, minor: 0.12 }, n, 1).expect("valid shape")
}

/// Full-layout descriptor of a 5000-point torus.
pub fn full_descriptor() -> Descriptor {
    eppf_core::descriptor::compute_descriptor(&torus(5000), &DescriptorConfig::full()).expect("descriptor")
}
