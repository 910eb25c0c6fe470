//! Brute-force references for the text metrics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, alphabet: usize) -> Vec<u8> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| rng.gen_range(0..alphabet as u8)).collect()
}

pub fn oracle_rouge_n(c: &[u8], r: &[u8], n: usize) -> (f64, f64, f64) {
    let grams = |s: &[u8]| -> Vec<Vec<u8>> {
        if s.len() < n {
            Vec::new()
        } else {
            (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
        }
    };
    let cg = grams(c);
    let rg = grams(r);
    let mut distinct: Vec<&Vec<u8>> = cg.iter().collect();
    distinct.sort();
    distinct.dedup();
    let overlap: usize = distinct
        .iter()
        .map(|g| {
            let a = cg.iter().filter(|x| x == g).count();
            let b = rg.iter().filter(|x| x == g).count();
            a.min(b)
        })
        .sum();
    prf(overlap, cg.len(), rg.len())
}

pub fn prf(overlap: usize, nc: usize, nr: usize) -> (f64, f64, f64) {
    let p = if nc == 0 { 0.0 } else { overlap as f64 / nc as f64 };
    let r = if nr == 0 { 0.0 } else { overlap as f64 / nr as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn is_subsequence(sub: &[u8], s: &[u8]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

pub fn oracle_lcs(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

/// Every one-to-one exact alignment, scored as (matches, chunks).
pub fn oracle_alignment(c: &[u8], r: &[u8]) -> (usize, usize) {
    fn go(
        i: usize,
        c: &[u8],
        r: &[u8],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == c.len() {
            let m = pairs.len();
            let chunks = (0..m)
                .filter(|&k| k == 0 || !(pairs[k].0 == pairs[k - 1].0 + 1 && pairs[k].1 == pairs[k - 1].1 + 1))
                .count();
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        go(i + 1, c, r, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, c, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    best
}

pub fn oracle_meteor(c: &[u8], r: &[u8]) -> f64 {
    let (m, ch) = oracle_alignment(c, r);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c.len() as f64;
    let rc = m as f64 / r.len() as f64;
    let f_mean = 10.0 * p * rc / (rc + 9.0 * p);
    f_mean * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}
