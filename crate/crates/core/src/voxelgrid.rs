//! Boolean occupancy grid over a cloud's bounding box and exact voxel
//! traversal of straight segments.
//!
//! Cells are half-open, `[lo, hi)` per axis, so a point on a shared face
//! belongs to the higher-index cell; the far boundary of the grid is folded
//! into the last cell. Segments are canonicalised (endpoints ordered
//! lexicographically) before traversal, which makes every query symmetric
//! in its endpoints.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud, Vector3};

pub const DEFAULT_DIMS: [usize; 3] = [64, 64, 64];

/// Per-side padding of the grid, relative to the cloud's AABB diagonal.
pub const PADDING_FRACTION: f64 = 1e-6;

/// Padding used when the cloud has no extent at all (single location).
const POINT_CLOUD_PADDING: f64 = 1e-9;

pub type VoxelIndex = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    origin: Point3,
    cell: Vector3,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    /// Grid spanning the cloud AABB padded by [`PADDING_FRACTION`] of its
    /// diagonal per side; a voxel is occupied iff it contains a point.
    pub fn build(cloud: &PointCloud, dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("grid dimensions must be positive, got {dims:?}")));
        }
        let aabb = cloud
            .aabb()
            .ok_or_else(|| Error::invalid("cannot build a voxel grid for an empty cloud"))?;
        let diag = aabb.diagonal();
        let pad = if diag > 0.0 { PADDING_FRACTION * diag } else { POINT_CLOUD_PADDING };
        let origin = aabb.min - Vector3::repeat(pad);
        let span = aabb.extent() + Vector3::repeat(2.0 * pad);
        let cell = Vector3::new(
            span.x / dims[0] as f64,
            span.y / dims[1] as f64,
            span.z / dims[2] as f64,
        );
        let mut grid = VoxelGrid {
            dims,
            origin,
            cell,
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
        };
        for p in cloud.points() {
            let idx = grid.cell_of(p);
            let lin = grid.linear(idx);
            grid.occupancy[lin] = true;
        }
        Ok(grid)
    }

    /// Grid from explicit geometry and occupancy (x slowest, z fastest).
    pub fn from_occupancy(
        dims: [usize; 3],
        origin: Point3,
        cell: Vector3,
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || cell.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("grid dims and cell sizes must be positive"));
        }
        if occupancy.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::invalid(format!(
                "occupancy has {} entries, grid has {}",
                occupancy.len(),
                dims[0] * dims[1] * dims[2]
            )));
        }
        Ok(VoxelGrid {
            dims,
            origin,
            cell,
            occupancy,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn cell_size(&self) -> Vector3 {
        self.cell
    }

    pub fn upper_corner(&self) -> Point3 {
        self.origin
            + Vector3::new(
                self.cell.x * self.dims[0] as f64,
                self.cell.y * self.dims[1] as f64,
                self.cell.z * self.dims[2] as f64,
            )
    }

    pub fn linear(&self, idx: VoxelIndex) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn is_occupied(&self, idx: VoxelIndex) -> bool {
        self.occupancy[self.linear(idx)]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let hi = self.upper_corner();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= hi[a])
    }

    fn axis_cell(&self, p: &Point3, axis: usize) -> usize {
        let t = ((p[axis] - self.origin[axis]) / self.cell[axis]).floor();
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(self.dims[axis] - 1)
        }
    }

    fn cell_of(&self, p: &Point3) -> VoxelIndex {
        [self.axis_cell(p, 0), self.axis_cell(p, 1), self.axis_cell(p, 2)]
    }

    /// Cell containing `p` under the half-open rule, `None` outside the grid.
    pub fn voxel_of(&self, p: &Point3) -> Option<VoxelIndex> {
        self.contains(p).then(|| self.cell_of(p))
    }

    fn check_endpoints(&self, a: &Point3, b: &Point3) -> Result<()> {
        for (name, p) in [("first", a), ("second", b)] {
            if !self.contains(p) {
                return Err(Error::invalid(format!("{name} segment endpoint {p:?} lies outside the grid")));
            }
        }
        Ok(())
    }

    /// Incremental 3D grid stepping from the cell of `a` to the cell of `b`
    /// (after canonical ordering). At each step the axis (or axes, on exact
    /// ties) whose next cell boundary the segment reaches first is advanced.
    /// Each axis advances exactly |end - start| times, so the walk always
    /// terminates in the end cell.
    fn walk(&self, a: &Point3, b: &Point3, mut visit: impl FnMut(VoxelIndex)) {
        let (a, b) = match lex_cmp(a, b) {
            Ordering::Greater => (b, a),
            _ => (a, b),
        };
        let start = self.cell_of(a);
        let end = self.cell_of(b);
        let dir = b - a;
        let mut cur = start;
        let mut remaining = [0usize; 3];
        let mut step = [0isize; 3];
        for axis in 0..3 {
            remaining[axis] = start[axis].abs_diff(end[axis]);
            step[axis] = match end[axis].cmp(&start[axis]) {
                Ordering::Greater => 1,
                Ordering::Less => -1,
                Ordering::Equal => 0,
            };
        }
        visit(cur);
        let boundary_t = |cur: &VoxelIndex, axis: usize, step: isize| -> f64 {
            let face = if step > 0 { cur[axis] + 1 } else { cur[axis] };
            let x = self.origin[axis] + face as f64 * self.cell[axis];
            (x - a[axis]) / dir[axis]
        };
        while remaining.iter().any(|&r| r > 0) {
            let mut t = [f64::INFINITY; 3];
            for axis in 0..3 {
                if remaining[axis] > 0 {
                    t[axis] = boundary_t(&cur, axis, step[axis]);
                }
            }
            let tmin = t[0].min(t[1]).min(t[2]);
            for axis in 0..3 {
                if remaining[axis] > 0 && t[axis] == tmin {
                    cur[axis] = cur[axis].wrapping_add_signed(step[axis]);
                    remaining[axis] -= 1;
                }
            }
            visit(cur);
        }
    }

    /// Cells intersected by the segment from `a` to `b`, in order from the
    /// lexicographically smaller endpoint, including both endpoint cells.
    pub fn traverse_segment(&self, a: &Point3, b: &Point3) -> Result<Vec<VoxelIndex>> {
        self.check_endpoints(a, b)?;
        let mut out = Vec::new();
        self.walk(a, b, |idx| out.push(idx));
        Ok(out)
    }

    /// Fraction of traversed cells that are occupied.
    pub fn occupancy_ratio(&self, a: &Point3, b: &Point3) -> Result<f64> {
        self.check_endpoints(a, b)?;
        Ok(self.occupancy_ratio_unchecked(a, b))
    }

    /// As [`Self::occupancy_ratio`] for endpoints known to be inside the grid.
    pub(crate) fn occupancy_ratio_unchecked(&self, a: &Point3, b: &Point3) -> f64 {
        let (mut occupied, mut total) = (0usize, 0usize);
        self.walk(a, b, |idx| {
            total += 1;
            occupied += self.occupancy[self.linear(idx)] as usize;
        });
        occupied as f64 / total as f64
    }
}

fn lex_cmp(a: &Point3, b: &Point3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_f64};
    use std::collections::HashSet;

    fn unit_grid(dims: [usize; 3], occupied: bool) -> VoxelGrid {
        VoxelGrid::from_occupancy(
            dims,
            Point3::origin(),
            Vector3::repeat(1.0),
            vec![occupied; dims[0] * dims[1] * dims[2]],
        )
        .unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(uniform_f64(&mut rng), uniform_f64(&mut rng), uniform_f64(&mut rng)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_point_single_voxel() {
        let c = PointCloud::new(vec![Point3::new(0.2, -1.0, 4.0)]).unwrap();
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        assert_eq!(g.occupied_count(), 1);
        assert!(g.cell_size().iter().all(|c| *c > 0.0));
    }

    #[test]
    fn two_far_points_two_voxels() {
        let c = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 1.0, 2.0)]).unwrap();
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        assert_eq!(g.occupied_count(), 2);
        assert_eq!(g.voxel_of(&c.points()[0]), Some([0, 0, 0]));
        assert_eq!(g.voxel_of(&c.points()[1]), Some([63, 63, 63]));
    }

    #[test]
    fn every_point_occupies_its_voxel() {
        let c = random_cloud(5000, 2);
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        for p in c.points() {
            assert!(g.is_occupied(g.voxel_of(p).unwrap()));
        }
    }

    #[test]
    fn filled_cube_occupancy_matches_oracle() {
        // Independent count of distinct cells from the construction geometry.
        let n = 100_000;
        let c = random_cloud(n, 3);
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        let aabb = c.aabb().unwrap();
        let pad = PADDING_FRACTION * aabb.diagonal();
        let distinct: HashSet<[i64; 3]> = c
            .points()
            .iter()
            .map(|p| {
                let mut k = [0i64; 3];
                for a in 0..3 {
                    let w = (aabb.max[a] - aabb.min[a] + 2.0 * pad) / 64.0;
                    k[a] = (((p[a] - aabb.min[a] + pad) / w).floor() as i64).clamp(0, 63);
                }
                k
            })
            .collect();
        assert_eq!(g.occupied_count(), distinct.len());
        // Balls into bins: expected occupied fraction 1 - (1 - 1/V)^n.
        let v = 64f64.powi(3);
        let expected = 1.0 - (1.0 - 1.0 / v).powf(n as f64);
        let frac = g.occupied_count() as f64 / v;
        assert!((frac - expected).abs() < 0.01, "{frac} vs {expected}");
    }

    #[test]
    fn dense_cube_nearly_full() {
        let c = random_cloud(2_000_000, 4);
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        assert!(g.occupied_count() as f64 >= 0.99 * 64f64.powi(3));
    }

    #[test]
    fn same_voxel_segment() {
        let g = unit_grid([4, 4, 4], true);
        let v = g.traverse_segment(&Point3::new(1.1, 1.2, 1.3), &Point3::new(1.9, 1.5, 1.1)).unwrap();
        assert_eq!(v, vec![[1, 1, 1]]);
        assert_eq!(g.occupancy_ratio(&Point3::new(1.1, 1.2, 1.3), &Point3::new(1.9, 1.5, 1.1)).unwrap(), 1.0);
    }

    #[test]
    fn axis_aligned_segment_counts_crossings() {
        let g = unit_grid([10, 3, 3], false);
        let v = g.traverse_segment(&Point3::new(0.5, 1.5, 1.5), &Point3::new(7.5, 1.5, 1.5)).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.first(), Some(&[0, 1, 1]));
        assert_eq!(v.last(), Some(&[7, 1, 1]));
    }

    #[test]
    fn occupancy_ratio_eight_of_thirteen() {
        // Planar grid; a segment crossing 7 x-faces and 5 y-faces visits 13
        // cells. Mark the two endpoint cells plus six more as occupied.
        let dims = [8, 6, 1];
        let mut g = unit_grid(dims, false);
        let a = Point3::new(0.5, 0.3, 0.5);
        let b = Point3::new(7.5, 5.6, 0.5);
        let path = g.traverse_segment(&a, &b).unwrap();
        assert_eq!(path.len(), 13);
        let mut occ = vec![false; 48];
        for (i, idx) in path.iter().enumerate() {
            if ![1, 4, 6, 9, 11].contains(&i) {
                occ[g.linear(*idx)] = true;
            }
        }
        g = VoxelGrid::from_occupancy(dims, g.origin(), g.cell_size(), occ).unwrap();
        let f4 = g.occupancy_ratio(&a, &b).unwrap();
        assert_eq!(f4, 8.0 / 13.0);
        assert!((f4 - 0.615).abs() < 5e-4);
    }

    #[test]
    fn filled_cube_path_ratio_one() {
        let c = random_cloud(100_000, 5);
        let g = VoxelGrid::build(&c, [16, 16, 16]).unwrap();
        assert_eq!(g.occupied_count(), 16 * 16 * 16);
        let r = g.occupancy_ratio(&c.points()[0], &c.points()[1]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn outside_endpoint_rejected() {
        let g = unit_grid([4, 4, 4], true);
        assert!(g.traverse_segment(&Point3::new(0.5, 0.5, 0.5), &Point3::new(4.5, 0.5, 0.5)).is_err());
    }

    #[test]
    fn direction_symmetric_and_bounded() {
        let c = random_cloud(3000, 6);
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        let pts = c.points();
        for i in 0..500 {
            let (a, b) = (&pts[i], &pts[i + 1000]);
            let ab = g.traverse_segment(a, b).unwrap();
            let ba = g.traverse_segment(b, a).unwrap();
            assert_eq!(ab, ba);
            assert!(ab.len() <= 64 * 3);
            let r = g.occupancy_ratio(a, b).unwrap();
            assert!(r >= 1.0 / ab.len() as f64 && r <= 1.0);
            // consecutive cells are face-, edge- or corner-adjacent
            for w in ab.windows(2) {
                assert!((0..3).all(|k| w[0][k].abs_diff(w[1][k]) <= 1));
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let c = random_cloud(2000, 7);
        let t = Vector3::new(3.25, -1.5, 0.75);
        let moved = c.translated(&t);
        let g = VoxelGrid::build(&c, DEFAULT_DIMS).unwrap();
        let gm = VoxelGrid::build(&moved, DEFAULT_DIMS).unwrap();
        for i in 0..300 {
            let (a, b) = (c.points()[i], c.points()[i + 700]);
            let (am, bm) = (moved.points()[i], moved.points()[i + 700]);
            assert_eq!(g.traverse_segment(&a, &b).unwrap(), gm.traverse_segment(&am, &bm).unwrap());
            let diff = g.occupancy_ratio(&a, &b).unwrap() - gm.occupancy_ratio(&am, &bm).unwrap();
            assert!(diff.abs() <= 1e-12);
        }
    }

    /// Parameter interval over which `a + t (b - a)`, t in [0, 1], lies in
    /// the closed box of cell `idx` (slab method).
    fn cell_interval(g: &VoxelGrid, a: &Point3, b: &Point3, idx: VoxelIndex) -> (f64, f64) {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..3 {
            let lo = g.origin()[k] + idx[k] as f64 * g.cell_size()[k];
            let hi = lo + g.cell_size()[k];
            let d = b[k] - a[k];
            if d == 0.0 {
                if a[k] < lo || a[k] > hi {
                    return (1.0, 0.0);
                }
            } else {
                let (u, v) = ((lo - a[k]) / d, (hi - a[k]) / d);
                t0 = t0.max(u.min(v));
                t1 = t1.min(u.max(v));
            }
        }
        (t0, t1)
    }

    #[test]
    fn traversal_matches_dense_sampling_and_slab_oracle() {
        let mut rng = seeded(11);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * uniform_f64(&mut rng);
        for _ in 0..20 {
            let dims = [u(1.0, 13.0) as usize, u(1.0, 13.0) as usize, u(1.0, 13.0) as usize];
            let origin = Point3::new(u(-5.0, 5.0), u(-5.0, 5.0), u(-5.0, 5.0));
            let cell = Vector3::new(u(0.05, 2.0), u(0.05, 2.0), u(0.05, 2.0));
            let g = VoxelGrid::from_occupancy(dims, origin, cell, vec![false; dims.iter().product()]).unwrap();
            let span = g.upper_corner() - origin;
            let min_cell = cell.min();
            for _ in 0..10 {
                let mut rand_point = || origin + Vector3::new(u(0.0, 1.0) * span.x, u(0.0, 1.0) * span.y, u(0.0, 1.0) * span.z) * 0.999_999;
                let (a, b) = (rand_point(), rand_point());
                let walked: HashSet<VoxelIndex> = g.traverse_segment(&a, &b).unwrap().into_iter().collect();

                let len = (b - a).norm();
                let n = ((len / (min_cell / 20.0)).ceil() as usize).max(1);
                for s in 0..=n {
                    let p = a + (b - a) * (s as f64 / n as f64);
                    assert!(walked.contains(&g.voxel_of(&p).unwrap()), "sample {p:?} missed");
                }

                let tol = 1e-9;
                for i in 0..dims[0] {
                    for j in 0..dims[1] {
                        for k in 0..dims[2] {
                            let (t0, t1) = cell_interval(&g, &a, &b, [i, j, k]);
                            let overlap = (t1 - t0) * len;
                            if overlap > tol {
                                assert!(walked.contains(&[i, j, k]), "cell {:?} crossed over {overlap} but not walked", [i, j, k]);
                            } else if overlap < -tol {
                                assert!(!walked.contains(&[i, j, k]), "cell {:?} walked but not touched", [i, j, k]);
                            }
                        }
                    }
                }
            }
        }
    }
}
