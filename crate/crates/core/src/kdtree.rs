//! Exact nearest-neighbor search in 3D.
//!
//! Ties on distance go to the smallest id, in both the tree and the brute
//! force path, so the two always return the same answer.

use nalgebra::Vector3;

/// Point sets smaller than this are searched by brute force.
pub const BRUTE_FORCE_LIMIT: usize = 4096;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    #[inline]
    fn better_than(&self, other: &Neighbor) -> bool {
        self.dist_sq < other.dist_sq || (self.dist_sq == other.dist_sq && self.id < other.id)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static 3-d tree over `(point, id)` items.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(items: impl IntoIterator<Item = (Vector3<f64>, usize)>) -> Self {
        let (points, ids): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        let mut tree = Self {
            points,
            ids,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let mut order: Vec<usize> = (0..tree.points.len()).collect();
            tree.build_node(&mut order, 0);
            tree.points = order.iter().map(|&k| tree.points[k]).collect();
            tree.ids = order.iter().map(|&k| tree.ids[k]).collect();
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, order: &mut [usize], offset: usize) -> usize {
        let slot = self.nodes.len();
        if order.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: offset,
                end: offset + order.len(),
            });
            return slot;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &k in order.iter() {
            lo = lo.inf(&self.points[k]);
            hi = hi.sup(&self.points[k]);
        }
        let axis = (hi - lo).imax();
        let mid = order.len() / 2;
        let points = &self.points;
        order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = self.points[order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (left_part, right_part) = order.split_at_mut(mid);
        let left = self.build_node(left_part, offset);
        let right = self.build_node(right_part, offset + mid);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            id: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, query: &Vector3<f64>, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let cand = Neighbor {
                        id: self.ids[k],
                        dist_sq: (self.points[k] - query).norm_squared(),
                    };
                    if cand.better_than(best) {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // Points equal to `value` can sit on either side of the split.
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, best);
                // Keep exploring on equality: an equally distant point may carry a smaller id.
                if diff * diff <= best.dist_sq {
                    self.search(far, query, best);
                }
            }
        }
    }
}

/// Linear scan with the same tie rule as [`KdTree::nearest`].
pub fn brute_force_nearest(items: &[(Vector3<f64>, usize)], query: &Vector3<f64>) -> Option<Neighbor> {
    items
        .iter()
        .map(|(p, id)| Neighbor {
            id: *id,
            dist_sq: (p - query).norm_squared(),
        })
        .reduce(|best, cand| if cand.better_than(&best) { cand } else { best })
}

/// Nearest-neighbor index that switches to a tree above [`BRUTE_FORCE_LIMIT`].
pub enum NearestIndex {
    Brute(Vec<(Vector3<f64>, usize)>),
    Tree(KdTree),
}

impl NearestIndex {
    pub fn new(items: Vec<(Vector3<f64>, usize)>) -> Self {
        if items.len() < BRUTE_FORCE_LIMIT {
            Self::Brute(items)
        } else {
            Self::Tree(KdTree::build(items))
        }
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Option<Neighbor> {
        match self {
            Self::Brute(items) => brute_force_nearest(items, query),
            Self::Tree(tree) => tree.nearest(query),
        }
    }
}
