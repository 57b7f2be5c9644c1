use rayon::prelude::*;

use super::ndcg::{dcg, ndcg_delta, IDCG_FLOOR};
use super::similarity::{rank_order, CosineSpace, RankedSimilarity};
use super::{apriori_probability, learned_probability, pair_loss, FairnessConfig};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::models::Embeddings;
use crate::numeric::DenseMatrix;

/// Fairness loss over a set of anchors with its gradient with respect to
/// the embedding matrix (same row layout as the embeddings).
#[derive(Debug, Clone)]
pub struct FairnessTerm {
    pub loss: f64,
    pub grad: DenseMatrix,
    pub anchors: usize,
    pub skipped: usize,
    pub pairs: usize,
}

struct AnchorTerm {
    row: usize,
    loss: f64,
    pairs: usize,
    skipped: bool,
    /// dL/dŝ(anchor, candidate) per candidate embedding row.
    d_sim: Vec<(usize, f64)>,
}

fn anchor_term(
    anchor: NodeId,
    apriori: &CosineSpace,
    s_g: &RankedSimilarity,
    learned: &CosineSpace,
    cfg: &FairnessConfig,
) -> Result<AnchorTerm> {
    let k = cfg.k;
    let row = learned
        .row_of(anchor)
        .ok_or_else(|| Error::Contract(format!("anchor {anchor} has no embedding")))?;
    let ideal = s_g
        .get(anchor)
        .ok_or_else(|| Error::Contract(format!("anchor {anchor} has no apriori ranking")))?;
    let ideal_sims: Vec<f64> = ideal.iter().take(k).map(|p| p.1).collect();
    let idcg = dcg(&ideal_sims, k);
    let mut term = AnchorTerm {
        row,
        loss: 0.0,
        pairs: 0,
        skipped: false,
        d_sim: Vec::new(),
    };
    if idcg.abs() < IDCG_FLOOR {
        term.skipped = true;
        return Ok(term);
    }

    let mut pool: Vec<NodeId> = ideal.iter().take(k).map(|p| p.0).collect();
    pool.extend(learned.topk_row(row, k).into_iter().map(|p| p.0));
    pool.sort_unstable();
    pool.dedup();

    // (candidate, learned similarity), then sorted into the learned order
    let mut order = Vec::with_capacity(pool.len());
    let mut rows = Vec::with_capacity(pool.len());
    for &v in &pool {
        let r = learned
            .row_of(v)
            .ok_or_else(|| Error::Contract(format!("candidate {v} of anchor {anchor} has no embedding")))?;
        rows.push(r);
        order.push((v, learned.sim_rows(row, r)));
    }
    let mut ranked: Vec<usize> = (0..pool.len()).collect();
    ranked.sort_unstable_by(|&a, &b| rank_order(&order[a], &order[b]));
    let mut rank = vec![0; pool.len()];
    for (r, &i) in ranked.iter().enumerate() {
        rank[i] = r;
    }
    let s: Vec<f64> = pool
        .iter()
        .map(|&v| {
            apriori
                .sim(anchor, v)
                .ok_or_else(|| Error::Contract(format!("node {v} has no apriori vector")))
        })
        .collect::<Result<_>>()?;
    let sims_in_learned_order: Vec<f64> = ranked.iter().map(|&i| s[i]).collect();

    let mut d_sim = vec![0.0; pool.len()];
    for j in 0..pool.len() {
        for m in 0..pool.len() {
            if j == m {
                continue;
            }
            term.pairs += 1;
            let w = ndcg_delta(&sims_in_learned_order, rank[j], rank[m], k, idcg);
            if w == 0.0 {
                continue;
            }
            let p = apriori_probability(s[j], s[m]);
            let p_hat = learned_probability(order[j].1, order[m].1, cfg.alpha);
            term.loss += w * pair_loss(p, p_hat);
            let g = w * cfg.alpha * (p_hat - p);
            d_sim[j] += g;
            d_sim[m] -= g;
        }
    }
    term.d_sim = rows.into_iter().zip(d_sim).filter(|&(_, d)| d != 0.0).collect();
    Ok(term)
}

/// Sum over anchors of the NDCG-weighted pairwise cross-entropy between
/// apriori and learned ranking probabilities.
///
/// Each anchor's candidates are the union of its apriori top-k (from
/// `s_g`) and its learned top-k among the embedded nodes. Ranks and swap
/// weights are constants of the current embeddings; the gradient flows
/// through the learned cosine similarities only.
pub fn fairness_loss_and_grad(
    anchors: &[NodeId],
    apriori: &CosineSpace,
    s_g: &RankedSimilarity,
    emb: &Embeddings,
    cfg: &FairnessConfig,
) -> Result<FairnessTerm> {
    cfg.validate()?;
    let learned = CosineSpace::from_embeddings(emb);
    let terms: Vec<AnchorTerm> = anchors
        .par_iter()
        .map(|&a| anchor_term(a, apriori, s_g, &learned, cfg))
        .collect::<Result<_>>()?;

    let dim = emb.dim();
    let mut grad = DenseMatrix::zeros(emb.len(), dim);
    let mut out = FairnessTerm {
        loss: 0.0,
        grad: DenseMatrix::zeros(0, 0),
        anchors: anchors.len(),
        skipped: 0,
        pairs: 0,
    };
    let mut scratch = vec![0.0; dim];
    for t in &terms {
        out.loss += t.loss;
        out.pairs += t.pairs;
        out.skipped += t.skipped as usize;
        let i = t.row;
        let ni = learned.norm(i);
        for &(j, d) in &t.d_sim {
            let nj = learned.norm(j);
            if ni == 0.0 || nj == 0.0 {
                continue;
            }
            // d cos(e_i, e_j) / d e_i = (û_j - cos·û_i) / |e_i|, and symmetrically
            let c = learned.sim_rows(i, j);
            let (ui, uj) = (learned.unit(i), learned.unit(j));
            for ((s, a), b) in scratch.iter_mut().zip(ui).zip(uj) {
                *s = b - c * a;
            }
            for (g, s) in grad.row_mut(i).iter_mut().zip(&scratch) {
                *g += d * s / ni;
            }
            for ((g, a), b) in grad.row_mut(j).iter_mut().zip(ui).zip(uj) {
                *g += d * (a - c * b) / nj;
            }
        }
    }
    if !out.loss.is_finite() {
        return Err(Error::Numeric("fairness loss is not finite".into()));
    }
    out.grad = grad;
    Ok(out)
}
