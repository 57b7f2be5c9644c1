use rand::Rng;

use super::{dropout_mask, hadamard, Embeddings, SageParams};
use crate::error::{Error, Result};
use crate::numeric::{mean_rows, mean_rows_backward, relu, relu_backward, DenseMatrix};
use crate::sampler::{Block, LayeredSubgraph};

#[derive(Debug, Clone)]
struct Cache {
    agg1: DenseMatrix,
    z1: DenseMatrix,
    mask: Option<DenseMatrix>,
    groups2: Vec<Vec<usize>>,
    hidden_rows: usize,
    agg2: DenseMatrix,
}

/// Mean-aggregator GraphSAGE over a sampled two-layer subgraph:
/// each layer averages a node with its sampled neighbors, then applies
/// `W·(·) + b`; ReLU follows the first layer only.
#[derive(Debug, Clone)]
pub struct SageEncoder {
    pub params: SageParams,
    cache: Option<Cache>,
}

/// Self first, then the sampled neighbors, as indices into the block inputs.
fn mean_groups(block: &Block, map: impl Fn(usize) -> usize) -> Vec<Vec<usize>> {
    block
        .sampled
        .iter()
        .enumerate()
        .map(|(i, nbrs)| std::iter::once(i).chain(nbrs.iter().copied()).map(&map).collect())
        .collect()
}

impl SageEncoder {
    pub fn new(params: SageParams) -> Result<Self> {
        params.check()?;
        Ok(Self { params, cache: None })
    }

    fn run<F>(&self, blocks: &LayeredSubgraph, x: &DenseMatrix, mask: F) -> Result<(DenseMatrix, Cache)>
    where
        F: FnOnce(usize, usize) -> Option<DenseMatrix>,
    {
        blocks.check()?;
        if x.cols() != self.params.input_dim() {
            return Err(Error::Dimension {
                op: "sage input",
                left: x.shape(),
                right: self.params.layers[0].weight.value.shape(),
            });
        }
        let [b1, b2] = &blocks.layers;
        if let Some(&bad) = b1.inputs.iter().find(|&&n| n >= x.rows()) {
            return Err(Error::Contract(format!(
                "subgraph node {bad} has no feature row ({} rows)",
                x.rows()
            )));
        }
        let [l1, l2] = &self.params.layers;
        // layer-1 groups index feature rows by global id directly
        let groups1 = mean_groups(b1, |i| b1.inputs[i]);
        let agg1 = mean_rows(x, &groups1)?;
        let z1 = l1.forward(&agg1)?;
        let mut h1 = relu(&z1);
        let mask = mask(h1.rows(), h1.cols());
        if let Some(m) = &mask {
            hadamard(&mut h1, m);
        }
        let groups2 = mean_groups(b2, |i| i);
        let agg2 = mean_rows(&h1, &groups2)?;
        let out = l2.forward(&agg2)?;
        let hidden_rows = h1.rows();
        Ok((
            out,
            Cache {
                agg1,
                z1,
                mask,
                groups2,
                hidden_rows,
                agg2,
            },
        ))
    }

    /// Embeddings for `blocks.output_nodes()`; nothing is cached.
    pub fn forward(&self, blocks: &LayeredSubgraph, x: &DenseMatrix) -> Result<Embeddings> {
        let (out, _) = self.run(blocks, x, |_, _| None)?;
        Embeddings::with_nodes(out, blocks.output_nodes().to_vec())
    }

    pub fn forward_train<R: Rng>(
        &mut self,
        blocks: &LayeredSubgraph,
        x: &DenseMatrix,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Embeddings> {
        let (out, cache) = self.run(blocks, x, |r, c| {
            (dropout > 0.0).then(|| dropout_mask(r, c, dropout, rng))
        })?;
        self.cache = Some(cache);
        Embeddings::with_nodes(out, blocks.output_nodes().to_vec())
    }

    /// Accumulates parameter gradients for `upstream = dL/d(output rows)`.
    pub fn backward(&mut self, upstream: &DenseMatrix) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("sage backward called without a cached forward pass".into()))?;
        if upstream.shape() != (cache.agg2.rows(), self.params.output_dim()) {
            return Err(Error::Dimension {
                op: "sage backward",
                left: (cache.agg2.rows(), self.params.output_dim()),
                right: upstream.shape(),
            });
        }
        let [l1, l2] = &mut self.params.layers;
        let d_agg2 = l2.backward(&cache.agg2, upstream, true)?.expect("requested");
        let mut d_h1 = mean_rows_backward(&d_agg2, &cache.groups2, cache.hidden_rows)?;
        if let Some(m) = &cache.mask {
            hadamard(&mut d_h1, m);
        }
        let dz1 = relu_backward(&cache.z1, &d_h1)?;
        l1.backward(&cache.agg1, &dz1, false)?;
        Ok(())
    }
}
