//! Two-layer GCN and GraphSAGE encoders, the dot-product link head and the
//! binary cross-entropy utility loss.
//!
//! Both encoders share one layer shape: a dense map `Z = A·W + b` applied
//! to an aggregated input `A`. They differ only in how `A` is formed
//! (normalized propagation for GCN, a neighborhood mean for GraphSAGE).
//! Backward passes are written out by hand and accumulate into each
//! [`ParamTensor`]'s `grad`; nothing is updated in place.

mod checkpoint;
mod gcn;
mod sage;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use gcn::GcnEncoder;
pub use sage::SageEncoder;

use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId};
use crate::numeric::{self, sigmoid, softplus, DenseMatrix, ParamTensor};
use crate::rng::{stream, Purpose};

/// Width of both hidden and output layers.
pub const HIDDEN: usize = 256;

/// Scores are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "graphsage", alias = "sage")]
    Sage,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "graphsage",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: ParamTensor,
    pub bias: Option<ParamTensor>,
}

impl Layer {
    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
        Self {
            weight: ParamTensor::new(DenseMatrix::from_vec(fan_in, fan_out, data).expect("sized")),
            bias: bias.then(|| ParamTensor::new(DenseMatrix::zeros(1, fan_out))),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        let mut z = numeric::matmul(input, &self.weight.value)?;
        if let Some(b) = &self.bias {
            z.add_row_broadcast(&b.value)?;
        }
        Ok(z)
    }

    /// Accumulates `dW = inputᵀ·dz` and `db = Σ_rows dz`; returns
    /// `dz·Wᵀ` when `want_input_grad` is set.
    pub fn backward(
        &mut self,
        input: &DenseMatrix,
        dz: &DenseMatrix,
        want_input_grad: bool,
    ) -> Result<Option<DenseMatrix>> {
        self.weight.accumulate(&numeric::matmul_tn(input, dz)?)?;
        if let Some(b) = &mut self.bias {
            b.accumulate(&dz.column_sums())?;
        }
        if want_input_grad {
            Ok(Some(numeric::matmul_nt(dz, &self.weight.value)?))
        } else {
            Ok(None)
        }
    }
}

/// Weights of a two-layer encoder. Used unchanged by both architectures.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerParams {
    pub layers: [Layer; 2],
}

pub type GcnParams = TwoLayerParams;
pub type SageParams = TwoLayerParams;

impl TwoLayerParams {
    pub fn glorot(input_dim: usize, hidden: usize, bias: bool, seed: u64) -> Self {
        let mut rng = stream(seed, 0, 0, Purpose::Init);
        let l1 = Layer::glorot(input_dim, hidden, bias, &mut rng);
        let l2 = Layer::glorot(hidden, hidden, bias, &mut rng);
        Self { layers: [l1, l2] }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[1].output_dim()
    }

    pub fn has_bias(&self) -> bool {
        self.layers[0].bias.is_some()
    }

    pub fn check(&self) -> Result<()> {
        let [l1, l2] = &self.layers;
        if l1.output_dim() != l2.input_dim() {
            return Err(Error::Dimension {
                op: "layer chaining",
                left: l1.weight.value.shape(),
                right: l2.weight.value.shape(),
            });
        }
        for l in &self.layers {
            if let Some(b) = &l.bias {
                if b.value.shape() != (1, l.output_dim()) {
                    return Err(Error::Dimension {
                        op: "bias shape",
                        left: l.weight.value.shape(),
                        right: b.value.shape(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Parameter names in the order used by [`Self::tensors`].
    pub fn names(&self) -> Vec<&'static str> {
        if self.has_bias() {
            vec!["W1", "b1", "W2", "b2"]
        } else {
            vec!["W1", "W2"]
        }
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
            .collect()
    }

    /// Inverse of cloning [`Self::tensors`]: rebuilds the parameters from a
    /// flat tensor list.
    pub fn from_tensors(tensors: &[ParamTensor], bias: bool) -> Result<Self> {
        let per = if bias { 2 } else { 1 };
        if tensors.len() != 2 * per {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                2 * per,
                tensors.len()
            )));
        }
        let layer = |i: usize| Layer {
            weight: tensors[i * per].clone(),
            bias: bias.then(|| tensors[i * per + 1].clone()),
        };
        let p = Self {
            layers: [layer(0), layer(1)],
        };
        p.check()?;
        Ok(p)
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(ParamTensor::zero_grad);
    }
}

/// Inverted dropout mask: entries are 0 with probability `rate` and
/// `1/(1-rate)` otherwise.
pub(crate) fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> DenseMatrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized")
}

pub(crate) fn hadamard(a: &mut DenseMatrix, mask: &DenseMatrix) {
    a.as_mut_slice()
        .iter_mut()
        .zip(mask.as_slice())
        .for_each(|(v, m)| *v *= m);
}

#[derive(Debug, Clone, PartialEq)]
enum RowIndex {
    Identity,
    Mapped {
        nodes: Vec<NodeId>,
        index: HashMap<NodeId, usize>,
    },
}

/// Node embeddings: one finite row per node, addressed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    matrix: DenseMatrix,
    rows: RowIndex,
}

impl Embeddings {
    /// Row `i` is node `i`.
    pub fn full(matrix: DenseMatrix) -> Result<Self> {
        check_finite(&matrix)?;
        Ok(Self {
            matrix,
            rows: RowIndex::Identity,
        })
    }

    /// Row `i` is node `nodes[i]`; ids must be distinct.
    pub fn with_nodes(matrix: DenseMatrix, nodes: Vec<NodeId>) -> Result<Self> {
        if nodes.len() != matrix.rows() {
            return Err(Error::Contract(format!(
                "{} node ids for {} embedding rows",
                nodes.len(),
                matrix.rows()
            )));
        }
        check_finite(&matrix)?;
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, &n) in nodes.iter().enumerate() {
            if index.insert(n, i).is_some() {
                return Err(Error::Contract(format!("node {n} appears twice in embedding ids")));
            }
        }
        Ok(Self {
            matrix,
            rows: RowIndex::Mapped { nodes, index },
        })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row_of(&self, node: NodeId) -> Option<usize> {
        match &self.rows {
            RowIndex::Identity => (node < self.matrix.rows()).then_some(node),
            RowIndex::Mapped { index, .. } => index.get(&node).copied(),
        }
    }

    pub fn node_at(&self, row: usize) -> NodeId {
        match &self.rows {
            RowIndex::Identity => row,
            RowIndex::Mapped { nodes, .. } => nodes[row],
        }
    }

    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.row_of(node).map(|r| self.matrix.row(r))
    }

    fn require(&self, node: NodeId) -> Result<usize> {
        self.row_of(node)
            .ok_or_else(|| Error::Contract(format!("node {node} has no embedding")))
    }
}

fn check_finite(m: &DenseMatrix) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric("embedding matrix contains NaN or infinity".into()))
    }
}

/// `dot(emb[u], emb[v])` per pair.
pub fn link_logits(emb: &Embeddings, pairs: &[Edge]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(u, v)| {
            let (ru, rv) = (emb.require(u)?, emb.require(v)?);
            Ok(numeric::dot(emb.matrix.row(ru), emb.matrix.row(rv)))
        })
        .collect()
}

/// `sigmoid(dot(emb[u], emb[v]))` per pair.
pub fn score_links(emb: &Embeddings, pairs: &[Edge]) -> Result<Vec<f64>> {
    Ok(link_logits(emb, pairs)?.into_iter().map(sigmoid).collect())
}

/// Gradient of a loss with respect to the embedding matrix, given its
/// gradient with respect to each pair's logit.
pub fn link_logits_backward(emb: &Embeddings, pairs: &[Edge], dlogits: &[f64]) -> Result<DenseMatrix> {
    if pairs.len() != dlogits.len() {
        return Err(Error::Contract(format!(
            "{} pairs but {} logit gradients",
            pairs.len(),
            dlogits.len()
        )));
    }
    let m = &emb.matrix;
    let mut grad = DenseMatrix::zeros(m.rows(), m.cols());
    for (&(u, v), &g) in pairs.iter().zip(dlogits) {
        let (ru, rv) = (emb.require(u)?, emb.require(v)?);
        for c in 0..m.cols() {
            let (eu, ev) = (m.get(ru, c), m.get(rv, c));
            grad.row_mut(ru)[c] += g * ev;
            grad.row_mut(rv)[c] += g * eu;
        }
    }
    Ok(grad)
}

fn check_labels(n: usize, labels: &[bool]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::Contract(format!("{n} predictions but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Contract("utility loss over an empty batch".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities, with the gradient with
/// respect to each score. Scores are clamped away from 0 and 1.
pub fn utility_loss(scores: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_labels(scores.len(), labels)?;
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let s = s.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = if y { 1.0 } else { 0.0 };
        loss -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        // d/ds of the BCE is (s - y) / (s (1 - s)): the logit gradient s - y
        // divided by the sigmoid's derivative
        grad.push((s - y) / (s * (1.0 - s)) / n);
    }
    Ok((loss / n, grad))
}

/// The same loss evaluated from logits: `mean(softplus(z) - y·z)`, with
/// gradient `(sigmoid(z) - y) / N` per logit.
pub fn utility_loss_logits(logits: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_labels(logits.len(), labels)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}
