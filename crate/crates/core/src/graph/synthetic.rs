//! Planted-partition graphs with community-correlated node features, used
//! for smoke runs and tests where the public datasets are not at hand.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Edge, Graph, Metadata};
use crate::error::Result;
use crate::numeric::DenseMatrix;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub communities: usize,
    /// Edge probability inside a community.
    pub p_in: f64,
    /// Edge probability across communities.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of per-node noise around the community centroid.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            nodes: 120,
            communities: 4,
            p_in: 0.15,
            p_out: 0.01,
            feature_dim: 16,
            noise: 0.6,
            seed: 0,
        }
    }
}

impl PlantedPartition {
    pub fn community_of(&self, u: usize) -> usize {
        u % self.communities
    }

    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = stream(self.seed, 0, 0, Purpose::Init);
        let centroids: Vec<Vec<f64>> = (0..self.communities)
            .map(|_| (0..self.feature_dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut features = DenseMatrix::zeros(self.nodes, self.feature_dim);
        for u in 0..self.nodes {
            let c = &centroids[self.community_of(u)];
            for (j, x) in features.row_mut(u).iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *x = c[j] + self.noise * eps;
            }
        }
        let mut edges: Vec<Edge> = Vec::new();
        for u in 0..self.nodes {
            for v in u + 1..self.nodes {
                let p = if self.community_of(u) == self.community_of(v) {
                    self.p_in
                } else {
                    self.p_out
                };
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let graph = Graph::from_edges(self.nodes, &edges)?;
        let meta = Metadata {
            nodes: self.nodes,
            edges: graph.edge_count(),
            features: self.feature_dim,
            name: format!("planted-{}x{}", self.nodes, self.communities),
        };
        Ok(Dataset { graph, features, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_assortative() {
        let cfg = PlantedPartition::default();
        let a = cfg.generate().unwrap();
        assert_eq!(a, cfg.generate().unwrap());
        let inside = a
            .graph
            .edges()
            .iter()
            .filter(|&&(u, v)| cfg.community_of(u) == cfg.community_of(v))
            .count();
        assert!(inside * 2 > a.graph.edge_count());
    }
}
