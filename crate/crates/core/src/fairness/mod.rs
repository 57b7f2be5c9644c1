//! Rank-based individual fairness: apriori and learned cosine rankings,
//! the pairwise ranking loss weighted by NDCG swap deltas, and the NDCG@k
//! metric.

mod loss;
mod ndcg;
mod similarity;

use serde::{Deserialize, Serialize};

pub use loss::{fairness_loss_and_grad, FairnessTerm};
pub use ndcg::{dcg, discount, fairness_ndcg_metric, gain, ndcg_delta, FairnessMetric, IDCG_FLOOR};
pub use similarity::{cosine_topk, cosine_topk_all, CosineSpace, RankedSimilarity};

use crate::error::{Error, Result};
use crate::models::PROB_EPS;
use crate::numeric::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    /// Sharpness of the learned pairwise probability.
    pub alpha: f64,
    /// Weight of the fairness term in the total loss.
    pub gamma: f64,
    /// Ranking depth for both the loss and the metric.
    pub k: usize,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 1.0,
            k: 10,
        }
    }
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Target probability that `j` ranks above `m` under the apriori
/// similarities: 1, 0.5 on exact ties, else 0.
pub fn apriori_probability(s_ij: f64, s_im: f64) -> f64 {
    if s_ij > s_im {
        1.0
    } else if s_ij == s_im {
        0.5
    } else {
        0.0
    }
}

/// `sigmoid(alpha * (s_ij - s_im))`.
pub fn learned_probability(s_ij: f64, s_im: f64, alpha: f64) -> f64 {
    sigmoid(alpha * (s_ij - s_im))
}

/// Cross-entropy of the learned probability against the target.
pub fn pair_loss(p: f64, p_hat: f64) -> f64 {
    let q = p_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let mut l = 0.0;
    if p > 0.0 {
        l -= p * q.ln();
    }
    if p < 1.0 {
        l -= (1.0 - p) * (1.0 - q).ln();
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn step_function_cases() {
        assert_eq!(apriori_probability(0.9, 0.2), 1.0);
        assert_eq!(apriori_probability(0.4, 0.4), 0.5);
        assert_eq!(apriori_probability(0.1, 0.7), 0.0);
    }

    #[test]
    fn learned_probability_values() {
        assert_eq!(learned_probability(0.3, 0.3, 5.0), 0.5);
        assert!((learned_probability(1.5, 0.5, 2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
    }

    #[test]
    fn pair_loss_values() {
        assert!((pair_loss(1.0, 0.5) - LN_2).abs() < 1e-15);
        assert!((pair_loss(0.5, 0.5) - LN_2).abs() < 1e-15);
        assert!(pair_loss(1.0, 1.0) < 1e-11);
    }

    #[test]
    fn pair_loss_minimized_at_target() {
        for p in [0.0, 0.5, 1.0] {
            // golden-section search on (0, 1)
            let (mut a, mut b) = (1e-9, 1.0 - 1e-9);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - r * (b - a);
                let d = a + r * (b - a);
                if pair_loss(p, c) < pair_loss(p, d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let best = (a + b) / 2.0;
            assert!((best - p).abs() < 1e-6, "p={p}: {best}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(FairnessConfig::default().validate().is_ok());
        let bad = FairnessConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FairnessConfig {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn antisymmetry_over_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let alpha = rng.gen_range(0.01..20.0);
            assert_eq!(apriori_probability(a, b) + apriori_probability(b, a), 1.0);
            let s = learned_probability(a, b, alpha) + learned_probability(b, a, alpha);
            assert!((s - 1.0).abs() <= 1e-15);
        }
    }

    proptest! {
        #[test]
        fn probabilities_are_complementary(a in -1.0f64..1.0, b in -1.0f64..1.0, alpha in 1e-3f64..100.0) {
            prop_assert_eq!(apriori_probability(a, b) + apriori_probability(b, a), 1.0);
            let s = learned_probability(a, b, alpha) + learned_probability(b, a, alpha);
            prop_assert!((s - 1.0).abs() <= 1e-15);
            let p = learned_probability(a, b, alpha);
            prop_assert!((0.0..=1.0).contains(&p));
            // below double-precision saturation the value is strictly inside
            if (alpha * (a - b)).abs() < 30.0 {
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
