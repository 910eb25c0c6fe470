use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hash;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Score from an overlap count and the two denominators; a zero
    /// denominator gives zero for that side.
    pub fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, cand_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap. `n == 0` yields the zero score.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, cand.values().sum(), refs.values().sum())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Exact-match unigram alignment summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Maximum one-to-one exact alignment with the fewest chunks.
///
/// A chunk is a run of candidate tokens that are adjacent in the candidate
/// and aligned to adjacent reference positions in the same order. The
/// search is exact; its cost grows with how often a word repeats in both
/// sequences, not with their lengths.
pub fn align<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Alignment {
    let mut word_of: HashMap<&T, usize> = HashMap::new();
    let mut positions: Vec<Vec<usize>> = Vec::new();
    for (j, t) in reference.iter().enumerate() {
        let w = *word_of.entry(t).or_insert_with(|| {
            positions.push(Vec::new());
            positions.len() - 1
        });
        positions[w].push(j);
    }
    let words: Vec<Option<usize>> = candidate.iter().map(|t| word_of.get(t).copied()).collect();
    let mut cand_count = vec![0usize; positions.len()];
    for w in words.iter().flatten() {
        cand_count[*w] += 1;
    }
    let matches: usize = cand_count.iter().zip(&positions).map(|(&c, p)| c.min(p.len())).sum();
    // Candidate copies of a word beyond its reference count must go unmatched.
    let slack: Vec<usize> = cand_count
        .iter()
        .zip(&positions)
        .map(|(&c, p)| c.saturating_sub(p.len()))
        .collect();
    let mut search = AlignSearch {
        words,
        positions,
        slack,
        memo: HashMap::new(),
    };
    let mut skipped = vec![0usize; search.positions.len()];
    let links = search
        .best(0, &mut vec![0u64; reference.len().div_ceil(64)], None, &mut skipped)
        .expect("a maximum alignment always exists");
    Alignment {
        matches,
        chunks: matches - links,
    }
}

/// Search over maximum-cardinality alignments only: a candidate token may be
/// left unmatched just when its word has surplus candidate copies.
struct AlignSearch {
    words: Vec<Option<usize>>,
    positions: Vec<Vec<usize>>,
    slack: Vec<usize>,
    memo: HashMap<(usize, Vec<u64>, Option<usize>), Option<usize>>,
}

impl AlignSearch {
    /// Most links achievable for candidate suffix `i..`, where a link is a
    /// candidate pair `(i-1, i)` aligned to `(j-1, j)`; chunks = matches - links.
    /// `None` when the suffix cannot complete a maximum alignment.
    fn best(&mut self, i: usize, used: &mut Vec<u64>, prev: Option<usize>, skipped: &mut [usize]) -> Option<usize> {
        if i == self.words.len() {
            return Some(0);
        }
        let Some(w) = self.words[i] else {
            return self.best(i + 1, used, None, skipped);
        };
        let key = (i, used.clone(), prev);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let mut best = None;
        if skipped[w] < self.slack[w] {
            skipped[w] += 1;
            best = self.best(i + 1, used, None, skipped);
            skipped[w] -= 1;
        }
        for k in 0..self.positions[w].len() {
            let j = self.positions[w][k];
            let (word, bit) = (j / 64, 1u64 << (j % 64));
            if used[word] & bit != 0 {
                continue;
            }
            used[word] |= bit;
            let rest = self.best(i + 1, used, Some(j), skipped);
            used[word] &= !bit;
            if let Some(l) = rest {
                let l = l + usize::from(prev.is_some_and(|p| p + 1 == j));
                best = best.max(Some(l));
            }
        }
        self.memo.insert(key, best);
        best
    }
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;

/// METEOR score from an alignment and the two sequence lengths.
pub fn meteor_from_alignment(a: Alignment, cand_len: usize, ref_len: usize) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (a.chunks as f64 / m).powf(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

/// METEOR restricted to exact unigram matches.
pub fn meteor_lite<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    meteor_from_alignment(align(candidate, reference), candidate.len(), reference.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn rouge1_hand_case() {
        let s = rouge_n(&words("the cat sat"), &words("the cat"), 1);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let a = words("a b c d");
        for n in 1..=4 {
            assert_eq!(rouge_n(&a, &a, n).f1, 1.0);
        }
        assert_eq!(rouge_n(&a, &words("x y"), 1), RougeScore::default());
        assert_eq!(rouge_n(&a, &a, 5), RougeScore::default());
        assert_eq!(rouge_n(&a, &a, 0), RougeScore::default());
    }

    #[test]
    fn rouge_l_hand_case() {
        let s = rouge_l(&words("the cat sat on mat"), &words("the cat on the mat"));
        assert_eq!(lcs_len(&words("the cat sat on mat"), &words("the cat on the mat")), 4);
        assert!((s.precision - 0.8).abs() < 1e-15);
        assert!((s.recall - 0.8).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);
        assert_eq!(rouge_l::<&str>(&[], &words("a")), RougeScore::default());
    }

    #[test]
    fn reversed_distinct_lcs_is_one() {
        let a = [1, 2, 3, 4, 5, 6];
        let b: Vec<_> = a.iter().rev().copied().collect();
        assert_eq!(lcs_len(&a, &b), 1);
    }

    #[test]
    fn meteor_identity_three() {
        let a = words("x y z");
        assert_eq!(align(&a, &a), Alignment { matches: 3, chunks: 1 });
        assert!((meteor_lite(&a, &a) - (1.0 - 0.5 / 27.0)).abs() < 1e-15);
        assert_eq!(meteor_lite(&a, &words("p q")), 0.0);
    }

    #[test]
    fn meteor_swapped_tail() {
        assert_eq!(
            align(&words("a c b"), &words("a b c")),
            Alignment { matches: 3, chunks: 3 }
        );
    }

    #[test]
    fn repeated_tokens_prefer_contiguous() {
        // second "a" in the candidate should pair with ref index 2 to make one chunk
        let a = align(&words("a b"), &words("a x a b"));
        assert_eq!(a, Alignment { matches: 2, chunks: 1 });
    }

    #[test]
    fn meteor_long_reference_uses_multiword_mask() {
        let r: Vec<usize> = (0..150).collect();
        assert_eq!(
            align(&r, &r),
            Alignment {
                matches: 150,
                chunks: 1
            }
        );
    }
}
