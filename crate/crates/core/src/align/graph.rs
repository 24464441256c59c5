//! Pairwise connectivity graph.

use std::collections::BTreeMap;

use super::AlignError;
use crate::geometry::ImageSize;
use crate::pointmap::PairPrediction;

/// A directed prediction `F(I^n, I^m)`, expressed in view `n`'s frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub n: usize,
    pub m: usize,
    pub prediction: PairPrediction,
    pub mean_confidence: f64,
}

/// Views `0..sizes.len()` and the predictions linking them.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    sizes: Vec<ImageSize>,
    edges: Vec<GraphEdge>,
}

impl SceneGraph {
    /// Validates edge endpoints and sizes, then checks connectivity.
    pub fn new(sizes: Vec<ImageSize>, edges: Vec<GraphEdge>) -> Result<Self, AlignError> {
        if sizes.is_empty() {
            return Err(AlignError::EmptyGraph);
        }
        for e in &edges {
            if e.n == e.m {
                return Err(AlignError::SelfEdge { view: e.n });
            }
            for (v, pm) in [(e.n, &e.prediction.view1), (e.m, &e.prediction.view2)] {
                let size = sizes.get(v).ok_or(AlignError::UnknownView { view: v })?;
                if pm.points.size() != *size {
                    return Err(AlignError::SizeMismatch { view: v });
                }
            }
        }
        let graph = Self { sizes, edges };
        let components = graph.components();
        if components.len() > 1 {
            return Err(AlignError::Disconnected { components });
        }
        Ok(graph)
    }

    pub fn view_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[ImageSize] {
        &self.sizes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Connected components over undirected adjacency, each sorted, ordered
    /// by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.sizes.len());
        for e in &self.edges {
            uf.union(e.n, e.m);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..self.sizes.len() {
            groups.entry(uf.find(v)).or_default().push(v);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    /// Edge indices of a maximum-mean-confidence spanning tree. Ties go to
    /// the lower edge index.
    pub fn spanning_tree(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        // Stable sort keeps index order among equal confidences.
        order.sort_by(|&a, &b| self.edges[b].mean_confidence.total_cmp(&self.edges[a].mean_confidence));
        let mut uf = UnionFind::new(self.sizes.len());
        order
            .into_iter()
            .filter(|&e| uf.union(self.edges[e].n, self.edges[e].m))
            .collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when already joined. The smaller root wins.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// Keeps each directed prediction whose mean confidence over both views'
/// valid pixels is at least `keep_threshold`. Views are `0..=max id`.
pub fn build_graph(
    predictions: &BTreeMap<(usize, usize), PairPrediction>,
    keep_threshold: f64,
) -> Result<SceneGraph, AlignError> {
    let count = predictions
        .keys()
        .map(|&(n, m)| n.max(m) + 1)
        .max()
        .ok_or(AlignError::EmptyGraph)?;
    let mut sizes: Vec<Option<ImageSize>> = vec![None; count];
    let mut edges = Vec::new();
    for (&(n, m), pred) in predictions {
        if n == m {
            return Err(AlignError::SelfEdge { view: n });
        }
        for (v, size) in [(n, pred.view1.points.size()), (m, pred.view2.points.size())] {
            match sizes[v] {
                Some(s) if s != size => return Err(AlignError::SizeMismatch { view: v }),
                _ => sizes[v] = Some(size),
            }
        }
        let mean_confidence = pred.mean_confidence();
        if mean_confidence >= keep_threshold {
            edges.push(GraphEdge {
                n,
                m,
                prediction: pred.clone(),
                mean_confidence,
            });
        }
    }
    let sizes = sizes
        .into_iter()
        .enumerate()
        .map(|(v, s)| s.ok_or(AlignError::UnknownView { view: v }))
        .collect::<Result<Vec<_>, _>>()?;
    SceneGraph::new(sizes, edges)
}
