//! Chamfer distance and the nearest-neighbour index behind it.

use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;

use crate::geometry::{dist2, Point3, PointCloud};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree for exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = Self { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::infinity(); 3];
        let mut hi = [f64::neg_infinity(); 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        if hi[axis] == lo[axis] {
            // every point coincides
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| pts[i][axis].total_cmp(&pts[j][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = KdNode::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the point nearest to `q`.
    pub fn nearest(&self, q: Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::infinity());
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Squared distance from every point of `from` to its nearest point in `to`.
pub fn nearest_sq_distances(from: &PointCloud, to: &KdTree) -> Vec<f64> {
    from.points().iter().map(|&p| to.nearest(p).map_or(f64::infinity(), |(_, d)| d)).collect()
}

/// `sum_x min_y |x - y|^2 + sum_y min_x |x - y|^2` by exhaustive search.
pub fn chamfer_distance(s1: &PointCloud, s2: &PointCloud) -> f64 {
    let one_way = |a: &PointCloud, b: &PointCloud| -> f64 {
        a.points()
            .iter()
            .map(|&p| b.points().iter().map(|&q| dist2(p, q)).fold(f64::infinity(), f64::min))
            .sum()
    };
    one_way(s1, s2) + one_way(s2, s1)
}

/// Same value as [`chamfer_distance`], using kd-trees.
pub fn chamfer_distance_accelerated(s1: &PointCloud, s2: &PointCloud) -> f64 {
    let t1 = KdTree::new(s1.points());
    let t2 = KdTree::new(s2.points());
    nearest_sq_distances(s1, &t2).iter().sum::<f64>() + nearest_sq_distances(s2, &t1).iter().sum::<f64>()
}
