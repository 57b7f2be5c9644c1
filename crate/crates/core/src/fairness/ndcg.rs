use rayon::prelude::*;

use super::similarity::{CosineSpace, RankedSimilarity};
use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Nodes whose ideal DCG is smaller than this in magnitude are skipped.
pub const IDCG_FLOOR: f64 = 1e-12;

/// `2^s - 1`, with `s` a raw (possibly negative) cosine.
#[inline]
pub fn gain(s: f64) -> f64 {
    s.exp2() - 1.0
}

/// `1 / log2(2 + rank)` inside the top `k`, 0 beyond it. Ranks start at 0.
#[inline]
pub fn discount(rank: usize, k: usize) -> f64 {
    if rank < k {
        1.0 / ((2 + rank) as f64).log2()
    } else {
        0.0
    }
}

/// DCG@k of similarities listed in ranked order.
pub fn dcg(sims: &[f64], k: usize) -> f64 {
    sims.iter()
        .take(k)
        .enumerate()
        .map(|(i, &s)| gain(s) * discount(i, k))
        .sum()
}

/// `|ΔNDCG@k|` from exchanging the items at ranks `a` and `b` of a list
/// whose apriori similarities, in learned order, are `sims`.
pub fn ndcg_delta(sims: &[f64], a: usize, b: usize, k: usize, idcg: f64) -> f64 {
    let d = (gain(sims[a]) - gain(sims[b])) * (discount(a, k) - discount(b, k));
    (d / idcg).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessMetric {
    /// Mean NDCG@k over evaluated nodes, times 100.
    pub ndcg_pct: f64,
    pub evaluated: usize,
    /// Nodes whose ideal DCG vanished.
    pub skipped: usize,
    /// Evaluated nodes with a negative ideal DCG or an NDCG outside [0, 1].
    pub ill_scaled: usize,
}

/// Per node: the DCG of the learned top-k scored with apriori gains,
/// divided by the DCG of the apriori top-k.
pub fn fairness_ndcg_metric(
    apriori: &CosineSpace,
    s_g: &RankedSimilarity,
    s_y: &RankedSimilarity,
    k: usize,
) -> Result<FairnessMetric> {
    if k == 0 {
        return Err(Error::Config("NDCG cutoff must be at least 1".into()));
    }
    let anchors: Vec<NodeId> = s_g.anchors().collect();
    let per_node: Vec<Option<(f64, bool)>> = anchors
        .par_iter()
        .map(|&u| {
            let ideal = s_g.get(u).expect("anchor from s_g");
            let learned = s_y
                .get(u)
                .ok_or_else(|| Error::Contract(format!("node {u} missing from the learned ranking")))?;
            let ideal_sims: Vec<f64> = ideal.iter().map(|p| p.1).collect();
            let idcg = dcg(&ideal_sims, k);
            if idcg.abs() < IDCG_FLOOR {
                return Ok(None);
            }
            let learned_sims = learned
                .iter()
                .map(|&(v, _)| {
                    apriori
                        .sim(u, v)
                        .ok_or_else(|| Error::Contract(format!("node {v} has no apriori vector")))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Some((dcg(&learned_sims, k) / idcg, idcg < 0.0)))
        })
        .collect::<Result<_>>()?;

    let mut sum = 0.0;
    let mut m = FairnessMetric {
        ndcg_pct: 0.0,
        evaluated: 0,
        skipped: 0,
        ill_scaled: 0,
    };
    for (u, v) in anchors.iter().zip(&per_node) {
        match v {
            None => {
                log::debug!("node {u}: ideal DCG is zero, skipped");
                m.skipped += 1;
            }
            Some((x, negative_ideal)) => {
                if *negative_ideal || !(0.0..=1.0).contains(x) {
                    m.ill_scaled += 1;
                }
                sum += x;
                m.evaluated += 1;
            }
        }
    }
    if m.skipped > 0 {
        log::info!("{} nodes skipped: zero ideal DCG", m.skipped);
    }
    if m.ill_scaled > 0 {
        log::info!("{} nodes have ill-scaled NDCG (negative gains)", m.ill_scaled);
    }
    if m.evaluated == 0 {
        return Err(Error::Numeric("no node has a nonzero ideal DCG".into()));
    }
    m.ndcg_pct = 100.0 * sum / m.evaluated as f64;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::similarity::cosine_topk_all;
    use crate::numeric::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example_reversed_order() {
        let ideal = [1.0, 0.5, 0.0];
        let reversed = [0.0, 0.5, 1.0];
        let idcg = dcg(&ideal, 2);
        let got = dcg(&reversed, 2) / idcg;
        // IDCG = 1 + (√2 - 1)/log2 3, DCG = (√2 - 1)/log2 3
        let g = 2f64.sqrt() - 1.0;
        let want = (g / 3f64.log2()) / (1.0 + g / 3f64.log2());
        assert!((got - want).abs() <= 1e-15);
        assert!((got - 0.207_193).abs() <= 1e-6);
    }

    #[test]
    fn delta_matches_swap_oracle() {
        let sims = [0.9, 0.1, 0.7, 0.3];
        let idcg = dcg(&[0.9, 0.7, 0.3, 0.1], 3);
        for a in 0..4 {
            for b in 0..4 {
                let mut swapped = sims;
                swapped.swap(a, b);
                let oracle = ((dcg(&swapped, 3) - dcg(&sims, 3)) / idcg).abs();
                let d = ndcg_delta(&sims, a, b, 3, idcg);
                assert!((d - oracle).abs() <= 1e-15);
                assert_eq!(d, ndcg_delta(&sims, b, a, 3, idcg));
            }
        }
        assert_eq!(ndcg_delta(&[0.5, 0.4, 0.3, 0.2], 2, 3, 2, 1.0), 0.0);
    }

    #[test]
    fn three_items_swap_one_and_two() {
        // positions 1 and 2 of gains (2^s - 1)/log2(2 + i)
        let sims = [0.8, 0.6, 0.2];
        let g = |s: f64| 2f64.powf(s) - 1.0;
        let idcg = g(0.8) + g(0.6) / 3f64.log2() + g(0.2) / 2.0;
        let hand = ((g(0.6) - g(0.2)) * (1.0 / 3f64.log2() - 0.5) / idcg).abs();
        assert!((ndcg_delta(&sims, 1, 2, 3, idcg) - hand).abs() <= 1e-15);
    }

    #[test]
    fn same_ordering_scores_one_hundred() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DenseMatrix::from_vec(30, 4, (0..120).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let s = CosineSpace::from_matrix(&x);
        let r = cosine_topk_all(&s, 5).unwrap();
        let m = fairness_ndcg_metric(&s, &r, &r, 5).unwrap();
        assert!((m.ndcg_pct - 100.0).abs() <= 1e-12);
        assert_eq!((m.evaluated, m.skipped, m.ill_scaled), (30, 0, 0));
    }

    fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> f64 {
        let n = a.len();
        let cos = |x: &[f64], y: &[f64]| {
            let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
            let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
            d / (nx * ny)
        };
        let mut total = 0.0;
        for u in 0..n {
            let order = |m: &[Vec<f64>]| {
                let mut o: Vec<(usize, f64)> = (0..n).filter(|&v| v != u).map(|v| (v, cos(&m[u], &m[v]))).collect();
                o.sort_by(|p, q| q.1.partial_cmp(&p.1).unwrap().then(p.0.cmp(&q.0)));
                o
            };
            let ideal = order(a);
            let learned = order(b);
            let mut idcg = 0.0;
            let mut dcg_v = 0.0;
            for i in 0..k {
                let w = 1.0 / ((i + 2) as f64).log2();
                idcg += (2f64.powf(ideal[i].1) - 1.0) * w;
                dcg_v += (2f64.powf(cos(&a[u], &a[learned[i].0])) - 1.0) * w;
            }
            total += dcg_v / idcg;
        }
        100.0 * total / n as f64
    }

    #[test]
    fn metric_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = |rng: &mut ChaCha8Rng, d: usize| -> Vec<Vec<f64>> {
            (0..100)
                .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect()
        };
        let a = gen(&mut rng, 6);
        let b = gen(&mut rng, 8);
        let sa = CosineSpace::from_matrix(&DenseMatrix::from_rows(&a).unwrap());
        let sb = CosineSpace::from_matrix(&DenseMatrix::from_rows(&b).unwrap());
        let m = fairness_ndcg_metric(
            &sa,
            &cosine_topk_all(&sa, 10).unwrap(),
            &cosine_topk_all(&sb, 10).unwrap(),
            10,
        )
        .unwrap();
        let oracle = brute_force(&a, &b, 10);
        assert!((m.ndcg_pct - oracle).abs() <= 1e-12, "{} vs {oracle}", m.ndcg_pct);
        assert!(m.ndcg_pct > 0.0 && m.ndcg_pct < 100.0);
    }

    #[test]
    fn zero_vectors_are_skipped() {
        let x = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let s = CosineSpace::from_matrix(&x);
        let r = cosine_topk_all(&s, 2).unwrap();
        let m = fairness_ndcg_metric(&s, &r, &r, 2).unwrap();
        assert_eq!(m.skipped, 1);
        assert_eq!(m.evaluated, 2);
    }
}
