use rand::Rng;

use super::{dropout_mask, hadamard, Embeddings, GcnParams};
use crate::error::{Error, Result};
use crate::graph::{GcnNormCoeffs, Graph};
use crate::numeric::{relu, relu_backward, DenseMatrix};

/// Activations kept from the last training forward pass.
#[derive(Debug, Clone)]
struct Cache {
    agg1: DenseMatrix,
    z1: DenseMatrix,
    mask: Option<DenseMatrix>,
    agg2: DenseMatrix,
}

/// Full-batch two-layer GCN:
/// `H1 = ReLU(Â·X·W1 + b1)`, `H2 = Â·H1·W2 + b2`.
#[derive(Debug, Clone)]
pub struct GcnEncoder {
    pub params: GcnParams,
    cache: Option<Cache>,
}

impl GcnEncoder {
    pub fn new(params: GcnParams) -> Result<Self> {
        params.check()?;
        Ok(Self { params, cache: None })
    }

    fn run<F>(&self, g: &Graph, x: &DenseMatrix, norm: &GcnNormCoeffs, mask: F) -> Result<(DenseMatrix, Cache)>
    where
        F: FnOnce(usize, usize) -> Option<DenseMatrix>,
    {
        if x.cols() != self.params.input_dim() {
            return Err(Error::Dimension {
                op: "gcn input",
                left: x.shape(),
                right: self.params.layers[0].weight.value.shape(),
            });
        }
        let [l1, l2] = &self.params.layers;
        let agg1 = norm.propagate(g, x)?;
        let z1 = l1.forward(&agg1)?;
        let mut h1 = relu(&z1);
        let mask = mask(h1.rows(), h1.cols());
        if let Some(m) = &mask {
            hadamard(&mut h1, m);
        }
        let agg2 = norm.propagate(g, &h1)?;
        let out = l2.forward(&agg2)?;
        Ok((out, Cache { agg1, z1, mask, agg2 }))
    }

    /// Inference pass over every node; nothing is cached.
    pub fn forward(&self, g: &Graph, x: &DenseMatrix, norm: &GcnNormCoeffs) -> Result<Embeddings> {
        let (out, _) = self.run(g, x, norm, |_, _| None)?;
        Embeddings::full(out)
    }

    /// Training pass that keeps activations for [`Self::backward`].
    /// Dropout, when `dropout > 0`, is applied to the hidden layer.
    pub fn forward_train<R: Rng>(
        &mut self,
        g: &Graph,
        x: &DenseMatrix,
        norm: &GcnNormCoeffs,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Embeddings> {
        let (out, cache) = self.run(g, x, norm, |r, c| {
            (dropout > 0.0).then(|| dropout_mask(r, c, dropout, rng))
        })?;
        self.cache = Some(cache);
        Embeddings::full(out)
    }

    /// Accumulates parameter gradients for `upstream = dL/dH2`. Consumes
    /// the cache of the preceding [`Self::forward_train`].
    pub fn backward(&mut self, g: &Graph, norm: &GcnNormCoeffs, upstream: &DenseMatrix) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("gcn backward called without a cached forward pass".into()))?;
        if upstream.shape() != (cache.agg2.rows(), self.params.output_dim()) {
            return Err(Error::Dimension {
                op: "gcn backward",
                left: (cache.agg2.rows(), self.params.output_dim()),
                right: upstream.shape(),
            });
        }
        let [l1, l2] = &mut self.params.layers;
        let d_agg2 = l2.backward(&cache.agg2, upstream, true)?.expect("requested");
        // Â is symmetric, so propagating is its own transpose
        let mut d_h1 = norm.propagate(g, &d_agg2)?;
        if let Some(m) = &cache.mask {
            hadamard(&mut d_h1, m);
        }
        let dz1 = relu_backward(&cache.z1, &d_h1)?;
        l1.backward(&cache.agg1, &dz1, false)?;
        Ok(())
    }
}
