//! Nearest-neighbor indices over 3D points.
//!
//! Both indices order results by `(squared distance, index)`, so equal
//! distances resolve to the lowest index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree for k-nearest-neighbor queries.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis])
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points, nearest first.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: (self.points[i] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equal-distance candidates on the far side may still win the
                // index tie-break, so only strictly farther planes are pruned.
                if heap.len() < k || diff * diff <= heap.peek().expect("nonempty").dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

type Cell = [i64; 3];

/// Uniform hash grid supporting incremental insertion.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
    len: usize,
}

impl VoxelGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        Self {
            cell_size,
            cells: HashMap::new(),
            len: 0,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn cell_of(&self, p: &Vec3) -> Cell {
        [
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
            (p.z / self.cell_size).floor() as i64,
        ]
    }

    pub fn insert(&mut self, index: usize, p: &Vec3) {
        let c = self.cell_of(p);
        self.cells.entry(c).or_default().push(index);
        self.len += 1;
    }

    pub fn clear(&mut self) {
        self.cells.clear();
        self.len = 0;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Points within `radius` of `query`, nearest first, at most `max_count`.
    pub fn radius_search(
        &self,
        points: &[Vec3],
        query: &Vec3,
        radius: f64,
        max_count: usize,
    ) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if !(radius >= 0.0) || max_count == 0 || self.len == 0 {
            return out;
        }
        let r2 = radius * radius;
        let lo = self.cell_of(&(query - Vec3::repeat(radius)));
        let hi = self.cell_of(&(query + Vec3::repeat(radius)));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        for &i in ids {
                            let d2 = (points[i] - query).norm_squared();
                            if d2 <= r2 {
                                out.push(Neighbor { index: i, dist2: d2 });
                            }
                        }
                    }
                }
            }
        }
        if out.len() > max_count {
            out.select_nth_unstable(max_count - 1);
            out.truncate(max_count);
        }
        out.sort_unstable();
        out
    }

    /// Nearest point within `radius`.
    pub fn nearest_within(&self, points: &[Vec3], query: &Vec3, radius: f64) -> Option<Neighbor> {
        if !(radius >= 0.0) || self.len == 0 {
            return None;
        }
        let r2 = radius * radius;
        let lo = self.cell_of(&(query - Vec3::repeat(radius)));
        let hi = self.cell_of(&(query + Vec3::repeat(radius)));
        let mut best: Option<Neighbor> = None;
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        for &i in ids {
                            let cand = Neighbor {
                                index: i,
                                dist2: (points[i] - query).norm_squared(),
                            };
                            if cand.dist2 <= r2 && best.is_none_or(|b| cand < b) {
                                best = Some(cand);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}
