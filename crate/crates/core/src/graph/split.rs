use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_edge, Edge, Graph};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Give up after this many rejected draws per requested pair.
pub(crate) const REJECTION_FACTOR: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.4,
            val: 0.4,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub seed: u64,
}

impl EdgeSplit {
    /// Message-passing graph for training: train edges only, so validation
    /// and test edges never leak into neighborhoods.
    pub fn train_graph(&self, node_count: usize) -> Result<Graph> {
        Graph::from_edges(node_count, &self.train_pos)
    }
}

/// Shuffles the undirected edges with a seeded generator and cuts them into
/// contiguous train/validation/test blocks, then draws one evaluation
/// negative per validation and test positive.
pub fn split_edges(g: &Graph, ratios: SplitRatios, seed: u64) -> Result<EdgeSplit> {
    let sum = ratios.train + ratios.val + ratios.test;
    if [ratios.train, ratios.val, ratios.test].iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be nonnegative and sum to 1, got {sum}"
        )));
    }
    let mut edges = g.edges();
    edges.shuffle(&mut stream(seed, 0, 0, Purpose::Split));
    let m = edges.len();
    let n_train = ((ratios.train * m as f64).round() as usize).min(m);
    let n_val = ((ratios.val * m as f64).round() as usize).min(m - n_train);
    let test_pos = edges.split_off(n_train + n_val);
    let val_pos = edges.split_off(n_train);
    let train_pos = edges;

    let mut rng = stream(seed, 0, 0, Purpose::EvalNegatives);
    let val_neg = sample_negative_edges(g, val_pos.len(), &[], &mut rng)?;
    let test_neg = sample_negative_edges(g, test_pos.len(), &[&val_neg], &mut rng)?;
    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        val_neg,
        test_neg,
        seed,
    })
}

/// Uniform rejection sampling of `count` distinct node pairs `(u, v)`, `u < v`,
/// that are neither edges of `g` nor listed in `exclude`.
pub fn sample_negative_edges<R: Rng>(g: &Graph, count: usize, exclude: &[&[Edge]], rng: &mut R) -> Result<Vec<Edge>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = g.node_count();
    let excluded: HashSet<Edge> = exclude
        .iter()
        .flat_map(|list| list.iter().map(|&e| normalize_edge(e)))
        .filter(|&(u, v)| u != v && !g.has_edge(u, v))
        .collect();
    let all_pairs = n * n.saturating_sub(1) / 2;
    let available = all_pairs - g.edge_count() - excluded.len();
    if count > available {
        return Err(Error::Saturation {
            attempts: 0,
            found: 0,
            wanted: count,
        });
    }
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let limit = REJECTION_FACTOR * count;
    let mut attempts = 0;
    while out.len() < count {
        if attempts >= limit {
            return Err(Error::Saturation {
                attempts,
                found: out.len(),
                wanted: count,
            });
        }
        attempts += 1;
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        let e = normalize_edge((u, v));
        if excluded.contains(&e) || !chosen.insert(e) {
            continue;
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut impl Rng, n: usize, m: usize) -> Graph {
        let edges: Vec<Edge> = (0..m)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .filter(|(u, v)| u != v)
            .collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn ten_edges_split_four_four_two() {
        let edges: Vec<Edge> = (0..10).map(|i| (i, i + 1)).collect();
        let g = Graph::from_edges(11, &edges).unwrap();
        let s = split_edges(&g, SplitRatios::default(), 3).unwrap();
        assert_eq!((s.train_pos.len(), s.val_pos.len(), s.test_pos.len()), (4, 4, 2));
        assert_eq!(s.val_neg.len(), 4);
        assert_eq!(s.test_neg.len(), 2);
        assert_eq!(s, split_edges(&g, SplitRatios::default(), 3).unwrap());
    }

    #[test]
    fn bad_ratios_rejected() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let r = SplitRatios {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(matches!(split_edges(&g, r, 0), Err(Error::Config(_))));
    }

    #[test]
    fn forced_negative_in_near_complete_graph() {
        let n = 6;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if (u, v) != (2, 4) {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(n, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_negative_edges(&g, 1, &[], &mut rng).unwrap(), vec![(2, 4)]);
        assert!(matches!(
            sample_negative_edges(&g, 2, &[], &mut rng),
            Err(Error::Saturation { .. })
        ));
    }

    #[test]
    fn negatives_avoid_edges_and_repeat_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_graph(&mut rng, 400, 2000);
        let a = sample_negative_edges(&g, 10_000, &[], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for &(u, v) in &a {
            assert!(u < v && !g.has_edge(u, v));
        }
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), a.len());
        let b = sample_negative_edges(&g, 10_000, &[], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exclusions_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_graph(&mut rng, 30, 60);
        let first = sample_negative_edges(&g, 100, &[], &mut rng).unwrap();
        let second = sample_negative_edges(&g, 100, &[&first], &mut rng).unwrap();
        let first: HashSet<_> = first.into_iter().collect();
        assert!(second.iter().all(|e| !first.contains(e)));
    }

    proptest! {
        #[test]
        fn positive_sets_partition_edges(seed in any::<u64>(), n in 30usize..60, m in 5usize..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, n, m);
            prop_assume!(g.edge_count() > 0);
            let s = split_edges(&g, SplitRatios::default(), seed).unwrap();
            let mut all: Vec<Edge> = s.train_pos.iter().chain(&s.val_pos).chain(&s.test_pos)
                .map(|&e| normalize_edge(e)).collect();
            all.sort_unstable();
            let before = all.len();
            all.dedup();
            prop_assert_eq!(before, all.len());
            prop_assert_eq!(all, g.edges());
            for &(u, v) in s.val_neg.iter().chain(&s.test_neg) {
                prop_assert!(u != v && !g.has_edge(u, v));
            }
        }
    }
}
