use crate::error::{Error, Result};
use crate::fairness::{cosine_topk_all, fairness_ndcg_metric, CosineSpace, FairnessMetric, RankedSimilarity};
use crate::graph::{Edge, EdgeSplit};
use crate::models::{link_logits, Embeddings};

/// Ranking depth of the reported fairness metric.
pub const EVAL_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Val,
    Test,
}

/// Mann–Whitney AUC as a percentage: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("AUC needs at least one positive and one negative".into()));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite link score".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok(100.0 * (rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUC of the dot-product head on the validation or test edges. Logits
/// are ranked directly, so sigmoid saturation cannot create ties.
pub fn evaluate_auc(emb: &Embeddings, split: &EdgeSplit, part: SplitPart) -> Result<f64> {
    let (pos, neg): (&[Edge], &[Edge]) = match part {
        SplitPart::Val => (&split.val_pos, &split.val_neg),
        SplitPart::Test => (&split.test_pos, &split.test_neg),
    };
    auc(&link_logits(emb, pos)?, &link_logits(emb, neg)?)
}

/// Learned top-k lists over every embedded node.
pub fn learned_ranking(emb: &Embeddings, k: usize) -> Result<RankedSimilarity> {
    cosine_topk_all(&CosineSpace::from_embeddings(emb), k)
}

/// NDCG@[`EVAL_K`] of the embedding-space rankings against the apriori
/// rankings, averaged over nodes.
pub fn evaluate_fairness(emb: &Embeddings, apriori: &CosineSpace, s_g: &RankedSimilarity) -> Result<FairnessMetric> {
    let s_y = learned_ranking(emb, EVAL_K)?;
    fairness_ndcg_metric(apriori, s_g, &s_y, EVAL_K)
}
