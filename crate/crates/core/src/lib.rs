//! Point-pair shape description and classification for point clouds.
//!
//! The crate is organised bottom-up:
//!
//! - [`pointcloud`]: clouds, meshes, file I/O, mesh sampling, scaling,
//!   synthetic shapes and perturbations.
//! - [`normals`]: unoriented k-NN PCA normals on top of an exact kd-tree.
//! - [`voxelgrid`]: the occupancy grid and exact segment traversal.
//! - [`ppf`]: the four point-pair functions.
//! - [`descriptor`]: pair sampling and the weighted, normalised 4D histogram.
//! - [`matching`]: symmetric KL distance, leave-one-out retrieval, metrics.
//! - [`nn`]: a small tensor/backprop engine and the 2D/3D/4D classifiers.
//! - [`datasets`]: manifests, splits and experiment drivers.

pub mod datasets;
pub mod descriptor;
pub mod error;
pub mod fsio;
pub mod matching;
pub mod nn;
pub mod normals;
pub mod pointcloud;
pub mod ppf;
pub mod rng;
pub mod voxelgrid;

pub use descriptor::{Descriptor, DescriptorConfig, PairHistogram, PairSample};
pub use error::{Error, Result};
pub use matching::{ConfusionMatrix, LabeledDescriptor, Metrics};
pub use nn::{Network, NetworkConfig, Tensor, TrainedModel, Variant};
pub use pointcloud::{Aabb, CloudFormat, Point3, PointCloud, TriangleMesh, Vector3};
pub use ppf::{PpfDim, PpfValues};
pub use voxelgrid::VoxelGrid;
