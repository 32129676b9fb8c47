//! Exact k-nearest-neighbour search over 3D points.
//!
//! Neighbours are ordered by (squared distance, point index), so equal
//! distances resolve to the lower index and results never depend on tree
//! layout.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::pointcloud::Point3;

const LEAF_SIZE: usize = 12;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    root: Node,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = Self::build(points, &mut order, 0);
        KdTree { points, order, root }
    }

    fn build(points: &[Point3], idx: &mut [usize], offset: usize) -> Node {
        if idx.len() <= LEAF_SIZE {
            return Node::Leaf {
                start: offset,
                end: offset + idx.len(),
            };
        }
        // Split the widest axis at the median.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in idx.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            return Node::Leaf {
                start: offset,
                end: offset + idx.len(),
            };
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = points[idx[mid]][axis];
        let (left, right) = idx.split_at_mut(mid);
        Node::Split {
            axis,
            value,
            left: Box::new(Self::build(points, left, offset)),
            right: Box::new(Self::build(points, right, offset + mid)),
        }
    }

    /// The `k` nearest points to `query` (including any point equal to it),
    /// nearest first.
    pub fn nearest(&self, query: &Point3, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, query, k, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(&self, node: &Node, q: &Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // `<=` keeps equal-distance candidates with lower indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.dist2) {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}
