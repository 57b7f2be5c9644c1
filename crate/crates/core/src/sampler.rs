//! Uniform neighbor sampling and two-layer block construction for
//! mini-batch GraphSAGE training.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::split::REJECTION_FACTOR;
use crate::graph::{Edge, Graph, NodeId};
use crate::rng::{stream, Purpose};

/// Per-layer neighbor counts. `layer1` is the input-side layer, `layer2`
/// the layer that produces the output embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct Fanout {
    pub layer1: usize,
    pub layer2: usize,
}

impl Fanout {
    pub fn new(layer1: usize, layer2: usize) -> Result<Self> {
        if layer1 == 0 || layer2 == 0 {
            return Err(Error::Config(format!(
                "fanout counts must be at least 1, got ({layer1}, {layer2})"
            )));
        }
        Ok(Self { layer1, layer2 })
    }

    /// Takes every neighbor at both layers.
    pub fn full() -> Self {
        Self {
            layer1: usize::MAX,
            layer2: usize::MAX,
        }
    }
}

impl TryFrom<[usize; 2]> for Fanout {
    type Error = Error;

    fn try_from(v: [usize; 2]) -> Result<Self> {
        Fanout::new(v[0], v[1])
    }
}

impl From<Fanout> for [usize; 2] {
    fn from(f: Fanout) -> Self {
        [f.layer1, f.layer2]
    }
}

/// One message-passing layer of a sampled subgraph.
///
/// `inputs` starts with `seeds` (same order), followed by sampled nodes in
/// order of first appearance. `sampled[i]` lists, by local input index,
/// the neighbors drawn for `seeds[i]`, sorted by global id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub seeds: Vec<NodeId>,
    pub inputs: Vec<NodeId>,
    pub sampled: Vec<Vec<usize>>,
}

impl Block {
    fn from_adjacency(seeds: Vec<NodeId>, adjacency: Vec<Vec<NodeId>>) -> Self {
        let mut local: HashMap<NodeId, usize> = HashMap::with_capacity(seeds.len() * 2);
        let mut inputs = seeds.clone();
        for (i, &s) in seeds.iter().enumerate() {
            local.insert(s, i);
        }
        let sampled = adjacency
            .into_iter()
            .map(|nbrs| {
                nbrs.into_iter()
                    .map(|v| {
                        *local.entry(v).or_insert_with(|| {
                            inputs.push(v);
                            inputs.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        Self { seeds, inputs, sampled }
    }

    fn check(&self) -> Result<()> {
        if self.sampled.len() != self.seeds.len() || self.inputs.get(..self.seeds.len()) != Some(&self.seeds[..]) {
            return Err(Error::Contract("block seeds must prefix its inputs".into()));
        }
        if self.sampled.iter().flatten().any(|&i| i >= self.inputs.len()) {
            return Err(Error::Contract("block references an input it does not hold".into()));
        }
        Ok(())
    }
}

/// Two nested blocks: `layers[0]` feeds `layers[1]`, and the seeds of
/// `layers[0]` are exactly the inputs of `layers[1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredSubgraph {
    pub layers: [Block; 2],
}

impl LayeredSubgraph {
    /// The nodes whose embeddings this subgraph produces.
    pub fn output_nodes(&self) -> &[NodeId] {
        &self.layers[1].seeds
    }

    pub fn check(&self) -> Result<()> {
        self.layers[0].check()?;
        self.layers[1].check()?;
        if self.layers[0].seeds != self.layers[1].inputs {
            return Err(Error::Contract("layer-1 seeds must equal layer-2 inputs".into()));
        }
        Ok(())
    }

    /// Blocks covering every node with its complete neighborhood.
    pub fn full_graph(g: &Graph) -> Self {
        let all: Vec<NodeId> = (0..g.node_count()).collect();
        let adj: Vec<Vec<NodeId>> = all.iter().map(|&u| g.neighbors(u).to_vec()).collect();
        let block = Block::from_adjacency(all, adj);
        Self {
            layers: [block.clone(), block],
        }
    }
}

/// Draws `min(p, degree)` distinct neighbors per node, uniformly without
/// replacement, returned sorted by id. Isolated nodes get an empty list.
pub fn sample_neighbors<R: Rng>(g: &Graph, nodes: &[NodeId], p: usize, rng: &mut R) -> Vec<Vec<NodeId>> {
    nodes
        .iter()
        .map(|&u| {
            let nbrs = g.neighbors(u);
            if nbrs.len() <= p {
                return nbrs.to_vec();
            }
            let mut picked: Vec<NodeId> = index::sample(rng, nbrs.len(), p).into_iter().map(|i| nbrs[i]).collect();
            picked.sort_unstable();
            picked
        })
        .collect()
}

fn dedup_in_order(nodes: &[NodeId]) -> Vec<NodeId> {
    let mut seen = std::collections::HashSet::with_capacity(nodes.len());
    nodes.iter().copied().filter(|n| seen.insert(*n)).collect()
}

/// Samples the output layer's neighborhoods for `seeds` first, then the
/// input layer's neighborhoods for everything that layer needs.
pub fn build_blocks<R: Rng>(g: &Graph, seeds: &[NodeId], fanout: Fanout, rng: &mut R) -> LayeredSubgraph {
    let seeds = dedup_in_order(seeds);
    let adj2 = sample_neighbors(g, &seeds, fanout.layer2, rng);
    let outer = Block::from_adjacency(seeds, adj2);
    let adj1 = sample_neighbors(g, &outer.inputs, fanout.layer1, rng);
    let inner = Block::from_adjacency(outer.inputs.clone(), adj1);
    LayeredSubgraph { layers: [inner, outer] }
}

/// Shuffles the training edges with the epoch's seed and cuts them into
/// consecutive batches; the last batch may be short.
pub fn edge_minibatches(train_pos: &[Edge], batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<Edge>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order = train_pos.to_vec();
    order.shuffle(&mut stream(epoch_seed, 0, 0, Purpose::Shuffle));
    Ok(order.chunks(batch_size).map(<[Edge]>::to_vec).collect())
}

/// For each positive `(u, v)`, draws `neg_ratio` pairs `(u, w)` with `w`
/// uniform over nodes, `w != u` and `(u, w)` not an edge of `g`.
pub fn attach_negatives<R: Rng>(positives: &[Edge], g: &Graph, neg_ratio: usize, rng: &mut R) -> Result<Vec<Edge>> {
    if neg_ratio == 0 {
        return Err(Error::Config("negative ratio must be at least 1".into()));
    }
    let n = g.node_count();
    let mut out = Vec::with_capacity(positives.len() * neg_ratio);
    for &(u, _) in positives {
        for _ in 0..neg_ratio {
            let mut attempts = 0;
            loop {
                if attempts >= REJECTION_FACTOR {
                    return Err(Error::Saturation {
                        attempts,
                        found: out.len(),
                        wanted: positives.len() * neg_ratio,
                    });
                }
                attempts += 1;
                let w = rng.gen_range(0..n);
                if w != u && !g.has_edge(u, w) {
                    out.push((u, w));
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// One training step's worth of edges with the sampled subgraph that
/// covers every endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub index: usize,
    pub positives: Vec<Edge>,
    pub negatives: Vec<Edge>,
    /// Distinct endpoints in order of first appearance (positives, then
    /// negatives). These are the fairness anchors for the batch.
    pub endpoints: Vec<NodeId>,
    pub blocks: LayeredSubgraph,
}

impl MiniBatch {
    /// Negatives are drawn, then blocks are built over the endpoints plus
    /// `extra_seeds` (e.g. fairness candidates).
    #[allow(clippy::too_many_arguments)]
    pub fn prepare<F>(
        index: usize,
        positives: Vec<Edge>,
        g: &Graph,
        neg_ratio: usize,
        fanout: Fanout,
        seed: u64,
        epoch: u64,
        extra_seeds: F,
    ) -> Result<Self>
    where
        F: FnOnce(&[NodeId]) -> Vec<NodeId>,
    {
        let mut neg_rng = stream(seed, epoch, index as u64, Purpose::Negatives);
        let negatives = attach_negatives(&positives, g, neg_ratio, &mut neg_rng)?;
        let flat: Vec<NodeId> = positives.iter().chain(&negatives).flat_map(|&(u, v)| [u, v]).collect();
        let endpoints = dedup_in_order(&flat);
        let mut seeds = endpoints.clone();
        seeds.extend(extra_seeds(&endpoints));
        let mut nb_rng = stream(seed, epoch, index as u64, Purpose::Neighbors);
        let blocks = build_blocks(g, &seeds, fanout, &mut nb_rng);
        Ok(Self {
            index,
            positives,
            negatives,
            endpoints,
            blocks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn random_graph(rng: &mut impl Rng, n: usize, m: usize) -> Graph {
        let edges: Vec<Edge> = (0..m)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .filter(|(u, v)| u != v)
            .collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    fn star(leaves: usize) -> Graph {
        let edges: Vec<Edge> = (1..=leaves).map(|l| (0, l)).collect();
        Graph::from_edges(leaves + 1, &edges).unwrap()
    }

    #[test]
    fn fanout_above_degree_takes_all() {
        let g = star(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_neighbors(&g, &[0], 5, &mut rng), vec![vec![1, 2, 3]]);
        let iso = Graph::from_edges(2, &[]).unwrap();
        assert_eq!(sample_neighbors(&iso, &[1], 5, &mut rng), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn neighbor_marginals_are_uniform() {
        let g = star(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 100_000;
        let mut hits = [0usize; 11];
        for _ in 0..trials {
            let s = &sample_neighbors(&g, &[0], 2, &mut rng)[0];
            assert_eq!(s.len(), 2);
            assert_ne!(s[0], s[1]);
            for &v in s {
                hits[v] += 1;
            }
        }
        // each leaf is in a size-2 sample of 10 with probability 0.2
        for &h in &hits[1..] {
            let f = h as f64 / trials as f64;
            assert!((f - 0.2).abs() <= 0.01, "{f}");
        }
    }

    #[test]
    fn sampling_repeats_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(&mut rng, 50, 400);
        let nodes: Vec<usize> = (0..50).collect();
        let a = sample_neighbors(&g, &nodes, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_neighbors(&g, &nodes, 3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn star_center_with_unit_fanout() {
        let g = star(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = build_blocks(&g, &[0], Fanout::new(1, 1).unwrap(), &mut rng);
        b.check().unwrap();
        assert_eq!(b.layers[1].sampled[0].len(), 1);
        assert_eq!(b.layers[1].inputs.len(), 2);
        // the center samples one leaf again; the leaf can only reach the center
        assert_eq!(b.layers[0].sampled[0].len(), 1);
        assert_eq!(b.layers[0].sampled[1].len(), 1);
        assert_eq!(b.layers[0].inputs[b.layers[0].sampled[1][0]], 0);
    }

    #[test]
    fn large_fanout_gives_two_hop_neighborhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(&mut rng, 40, 90);
        let seeds = vec![3, 17];
        let b = build_blocks(&g, &seeds, Fanout::full(), &mut rng);
        let mut one_hop: HashSet<usize> = seeds.iter().copied().collect();
        for &s in &seeds {
            one_hop.extend(g.neighbors(s));
        }
        let mut two_hop = one_hop.clone();
        for &u in &one_hop {
            two_hop.extend(g.neighbors(u));
        }
        assert_eq!(b.layers[1].inputs.iter().copied().collect::<HashSet<_>>(), one_hop);
        assert_eq!(b.layers[0].inputs.iter().copied().collect::<HashSet<_>>(), two_hop);
    }

    #[test]
    fn minibatches_partition_the_epoch() {
        let edges: Vec<Edge> = (0..100).map(|i| (i, i + 1)).collect();
        let batches = edge_minibatches(&edges, 32, 9).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        let mut all: Vec<Edge> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, edges);
        assert!(edge_minibatches(&edges, 0, 9).is_err());
    }

    #[test]
    fn epoch_seeds_permute_differently() {
        let edges: Vec<Edge> = (0..200).map(|i| (i, i + 1)).collect();
        let a = edge_minibatches(&edges, 16, 1).unwrap().concat();
        let b = edge_minibatches(&edges, 16, 2).unwrap().concat();
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
        assert_eq!(a, edge_minibatches(&edges, 16, 1).unwrap().concat());
    }

    #[test]
    fn negative_counts_follow_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(&mut rng, 200, 800);
        let pos: Vec<Edge> = g.edges().into_iter().take(32).collect();
        assert_eq!(attach_negatives(&pos, &g, 1, &mut rng).unwrap().len(), 32);
        let five = attach_negatives(&pos, &g, 5, &mut rng).unwrap();
        assert_eq!(five.len(), 160);
        for (i, &(u, w)) in five.iter().enumerate() {
            assert_eq!(u, pos[i / 5].0);
            assert!(u != w && !g.has_edge(u, w));
        }
    }

    #[test]
    fn negatives_never_hit_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_graph(&mut rng, 30, 200);
        let pos = g.edges();
        let mut total = 0;
        while total < 10_000 {
            let neg = attach_negatives(&pos, &g, 3, &mut rng).unwrap();
            assert!(neg.iter().all(|&(u, w)| u != w && !g.has_edge(u, w)));
            total += neg.len();
        }
    }

    #[test]
    fn minibatch_covers_endpoints_and_extras() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(&mut rng, 80, 300);
        let pos: Vec<Edge> = g.edges().into_iter().take(10).collect();
        let mb = MiniBatch::prepare(0, pos.clone(), &g, 2, Fanout::new(3, 2).unwrap(), 11, 0, |_| {
            vec![79, 0]
        })
        .unwrap();
        mb.blocks.check().unwrap();
        let out: HashSet<usize> = mb.blocks.output_nodes().iter().copied().collect();
        for &(u, v) in mb.positives.iter().chain(&mb.negatives) {
            assert!(out.contains(&u) && out.contains(&v));
        }
        assert!(out.contains(&79));
        let again = MiniBatch::prepare(0, pos, &g, 2, Fanout::new(3, 2).unwrap(), 11, 0, |_| vec![79, 0]).unwrap();
        assert_eq!(mb, again);
    }

    proptest! {
        #[test]
        fn blocks_respect_graph_and_fanout(seed in any::<u64>(), n in 5usize..60, m in 0usize..200, f1 in 1usize..6, f2 in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, n, m);
            let seeds: Vec<usize> = (0..rng.gen_range(1..n)).map(|_| rng.gen_range(0..n)).collect();
            let b = build_blocks(&g, &seeds, Fanout::new(f1, f2).unwrap(), &mut rng);
            prop_assert!(b.check().is_ok());
            prop_assert_eq!(b.output_nodes().to_vec(), dedup_in_order(&seeds));
            for (layer, p) in b.layers.iter().zip([f1, f2]) {
                for (i, &s) in layer.seeds.iter().enumerate() {
                    let picked = &layer.sampled[i];
                    prop_assert_eq!(picked.len(), p.min(g.degree(s)));
                    let globals: HashSet<usize> = picked.iter().map(|&l| layer.inputs[l]).collect();
                    prop_assert_eq!(globals.len(), picked.len());
                    for v in globals {
                        prop_assert!(g.has_edge(s, v));
                    }
                }
            }
        }
    }
}
