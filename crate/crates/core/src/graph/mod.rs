//! Undirected graphs in compressed adjacency form, dataset I/O, feature
//! reduction and edge splitting.

mod io;
mod pca;
pub(crate) mod split;
pub mod synthetic;

pub use io::{load_dataset, save_dataset, Dataset, Metadata};
pub use pca::pca_reduce;
pub use split::{sample_negative_edges, split_edges, EdgeSplit, SplitRatios};

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

pub type NodeId = usize;

/// Undirected edge. Stored with `0 <= u < v` when normalized.
pub type Edge = (NodeId, NodeId);

#[inline]
pub fn normalize_edge((u, v): Edge) -> Edge {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Node-by-feature matrix; row `i` belongs to node `i`.
pub type FeatureMatrix = DenseMatrix;

/// Immutable undirected graph in CSR form. Each undirected edge appears in
/// both endpoints' neighbor lists, which are sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    edge_count: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Orientation is ignored
    /// and repeated pairs collapse to one edge; self-loops and out-of-range
    /// ids are rejected.
    pub fn from_edges(node_count: usize, edges: &[Edge]) -> Result<Self> {
        let mut degree = vec![0usize; node_count];
        let mut norm: Vec<Edge> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::Data(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            if u == v {
                return Err(Error::Data(format!("self-loop on node {u}")));
            }
            norm.push(normalize_edge((u, v)));
        }
        norm.sort_unstable();
        norm.dedup();
        for &(u, v) in &norm {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..node_count].to_vec();
        let mut neighbors = vec![0; 2 * norm.len()];
        for &(u, v) in &norm {
            neighbors[cursor[u]] = v;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            cursor[v] += 1;
        }
        for u in 0..node_count {
            neighbors[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        let g = Self {
            offsets,
            neighbors,
            edge_count: norm.len(),
        };
        debug_assert!(g.check_invariants().is_ok());
        Ok(g)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    #[inline]
    pub fn degree(&self, u: NodeId) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    #[inline]
    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.node_count() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Every undirected edge once, as `(u, v)` with `u < v`, in sorted order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count);
        for u in 0..self.node_count() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Full scan of the structural invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.node_count();
        if self.offsets[0] != 0 || self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Contract("offsets are not monotone".into()));
        }
        if self.offsets[n] != self.neighbors.len() || self.neighbors.len() != 2 * self.edge_count {
            return Err(Error::Contract("offset/neighbor/edge counts disagree".into()));
        }
        for u in 0..n {
            let nb = self.neighbors(u);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("neighbors of {u} unsorted or duplicated")));
            }
            for &v in nb {
                if v == u {
                    return Err(Error::Contract(format!("self-loop on {u}")));
                }
                if v >= n || !self.has_edge(v, u) {
                    return Err(Error::Contract(format!("edge ({u}, {v}) is not symmetric")));
                }
            }
        }
        Ok(())
    }
}

/// Symmetric normalization weights `1/sqrt((deg(u)+1)(deg(v)+1))`, one per
/// stored directed edge plus one self weight `1/(deg(u)+1)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnNormCoeffs {
    self_coeff: Vec<f64>,
    edge_coeff: Vec<f64>,
}

pub fn gcn_norm(g: &Graph) -> GcnNormCoeffs {
    let self_coeff = (0..g.node_count()).map(|u| 1.0 / (g.degree(u) + 1) as f64).collect();
    let mut edge_coeff = Vec::with_capacity(g.neighbors.len());
    for u in 0..g.node_count() {
        for &v in g.neighbors(u) {
            let du = (g.degree(u) + 1) as f64;
            let dv = (g.degree(v) + 1) as f64;
            edge_coeff.push(1.0 / (du * dv).sqrt());
        }
    }
    GcnNormCoeffs { self_coeff, edge_coeff }
}

impl GcnNormCoeffs {
    pub fn self_coeff(&self, u: NodeId) -> f64 {
        self.self_coeff[u]
    }

    /// Coefficients aligned with `g.neighbors(u)`.
    pub fn edge_coeffs<'a>(&'a self, g: &Graph, u: NodeId) -> &'a [f64] {
        &self.edge_coeff[g.offsets[u]..g.offsets[u + 1]]
    }

    pub fn coeff(&self, g: &Graph, u: NodeId, v: NodeId) -> Option<f64> {
        if u == v {
            return Some(self.self_coeff[u]);
        }
        let idx = g.neighbors(u).binary_search(&v).ok()?;
        Some(self.edge_coeffs(g, u)[idx])
    }

    /// `Â · x` with `Â` the normalized, self-loop-augmented adjacency. Each
    /// output row sums the self term first, then neighbors in ascending id.
    /// `Â` is symmetric, so this is also its own adjoint.
    pub fn propagate(&self, g: &Graph, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != g.node_count() {
            return Err(Error::Dimension {
                op: "gcn propagate",
                left: (g.node_count(), g.node_count()),
                right: x.shape(),
            });
        }
        use rayon::prelude::*;
        let cols = x.cols();
        let mut out = DenseMatrix::zeros(x.rows(), cols);
        if cols == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(u, row)| {
                let c = self.self_coeff[u];
                for (o, xv) in row.iter_mut().zip(x.row(u)) {
                    *o = c * xv;
                }
                for (&v, &c) in g.neighbors(u).iter().zip(self.edge_coeffs(g, u)) {
                    for (o, xv) in row.iter_mut().zip(x.row(v)) {
                        *o += c * xv;
                    }
                }
            });
        Ok(out)
    }
}
