//! Caption-quality metrics, retrieval scoring and the InfoNCE
//! mutual-information bound.

mod retrieval;
mod text;

pub use retrieval::{cosine, rank_items, retrieval_eval, retrieval_eval_text, AtK, RetrievalResult};
pub use text::{
    align, lcs_len, meteor_from_alignment, meteor_lite, rouge_l, rouge_n, Alignment, RougeScore, METEOR_ALPHA,
    METEOR_BETA, METEOR_GAMMA,
};

use serde::{Deserialize, Serialize};

/// `ln n - loss`, in nats. Not floored.
pub fn mi_lower_bound(contrastive_loss: f64, n: usize) -> f64 {
    (n as f64).ln() - contrastive_loss
}

/// Corpus-level caption scores: per-pair scores averaged over pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub meteor_lite: f64,
}

impl MetricsReport {
    /// Scores `(candidate, reference)` pairs. Empty input gives all zeros.
    pub fn from_pairs<T: Eq + std::hash::Hash>(pairs: &[(Vec<T>, Vec<T>)]) -> Self {
        let mut r = Self {
            n: pairs.len(),
            ..Self::default()
        };
        if pairs.is_empty() {
            return r;
        }
        let add = |acc: &mut RougeScore, s: RougeScore| {
            acc.precision += s.precision;
            acc.recall += s.recall;
            acc.f1 += s.f1;
        };
        for (c, rf) in pairs {
            add(&mut r.rouge1, rouge_n(c, rf, 1));
            add(&mut r.rouge2, rouge_n(c, rf, 2));
            add(&mut r.rouge_l, rouge_l(c, rf));
            r.meteor_lite += meteor_lite(c, rf);
        }
        let n = pairs.len() as f64;
        for s in [&mut r.rouge1, &mut r.rouge2, &mut r.rouge_l] {
            s.precision /= n;
            s.recall /= n;
            s.f1 /= n;
        }
        r.meteor_lite /= n;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mi_bound_cases() {
        assert_eq!(mi_lower_bound(5f64.ln(), 5), 0.0);
        assert_eq!(mi_lower_bound(0.0, 7), 7f64.ln());
        let l = (1.0 + (-1.0f64).exp()).ln();
        assert!((mi_lower_bound(l, 2) - 0.37989).abs() < 1e-5);
        assert_eq!(mi_lower_bound(0.0, 1), 0.0);
    }

    #[test]
    fn identity_report_is_perfect() {
        let pairs = vec![(vec![1, 2, 3], vec![1, 2, 3]), (vec![4, 5], vec![4, 5])];
        let r = MetricsReport::from_pairs(&pairs);
        assert_eq!(r.rouge1.f1, 1.0);
        assert_eq!(r.rouge2.f1, 1.0);
        assert_eq!(r.rouge_l.f1, 1.0);
        assert!(r.meteor_lite < 1.0 && r.meteor_lite > 0.9);
    }
}
