//! Exact nearest-neighbor search.

use crate::linalg::{dist2, Vec3};
use crate::scalar::Scalar;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Static kd-tree over a borrowed point set. Queries are exact; among
/// equidistant candidates the lowest point index wins.
#[derive(Clone, Debug)]
pub struct KdTree<'a, T> {
    points: &'a [Vec3<T>],
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> KdTree<'a, T> {
    pub fn new(points: &'a [Vec3<T>]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = self.points[self.order[start]];
        let mut hi = lo;
        for &i in &self.order[start..end] {
            for a in 0..3 {
                let v = self.points[i][a];
                if v < lo[a] {
                    lo[a] = v;
                }
                if v > hi[a] {
                    hi[a] = v;
                }
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            points[i][axis]
                .partial_cmp(&points[j][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point to `q` as `(index, squared distance)`.
    pub fn nearest(&self, q: Vec3<T>) -> Option<(usize, T)> {
        self.knn(q, 1, None).into_iter().next()
    }

    /// The `k` nearest points to `q`, ascending by (distance, index).
    /// `exclude` removes one index from consideration.
    pub fn knn(&self, q: Vec3<T>, k: usize, exclude: Option<usize>) -> Vec<(usize, T)> {
        let mut best: Vec<(usize, T)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, k, exclude, &mut best);
        }
        best
    }

    fn worse(a: (usize, T), b: (usize, T)) -> bool {
        a.1 > b.1 || (a.1 == b.1 && a.0 > b.0)
    }

    fn search(&self, node: usize, q: Vec3<T>, k: usize, exclude: Option<usize>, best: &mut Vec<(usize, T)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = (i, dist2(q, self.points[i]));
                    if best.len() == k && !Self::worse(best[k - 1], cand) {
                        continue;
                    }
                    let pos = best.iter().position(|&b| Self::worse(b, cand)).unwrap_or(best.len());
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, best);
                // equality keeps ties reachable on the far side
                if best.len() < k || diff * diff <= best[k - 1].1 {
                    self.search(far, q, k, exclude, best);
                }
            }
        }
    }
}
