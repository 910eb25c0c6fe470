use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub n_queries: usize,
    pub n_items: usize,
    pub at_k: Vec<AtK>,
    /// 0-based rank of the relevant item for each query.
    pub relevant_rank: Vec<usize>,
    /// Item indices per query, best first.
    pub rankings: Vec<Vec<usize>>,
}

impl RetrievalResult {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.at_k.iter().find(|a| a.k == k).map(|a| a.precision)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.at_k.iter().find(|a| a.k == k).map(|a| a.recall)
    }

    /// One row per query: query, relevant item, its rank, then the top
    /// `top` items.
    pub fn write_csv(&self, w: impl Write, relevant: &[usize], top: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let top = top.min(self.n_items);
        let mut header = vec!["query".to_string(), "relevant".into(), "rank".into()];
        header.extend((1..=top).map(|i| format!("top{i}")));
        out.write_record(&header)?;
        for (q, ranking) in self.rankings.iter().enumerate() {
            let mut row = vec![
                q.to_string(),
                relevant[q].to_string(),
                self.relevant_rank[q].to_string(),
            ];
            row.extend(ranking[..top].iter().map(usize::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Items ordered by decreasing cosine similarity to `query`, ties by index.
pub fn rank_items(query: &[f64], items: &[Vec<f64>]) -> Vec<usize> {
    let sims: Vec<f64> = items.iter().map(|v| cosine(query, v)).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order
}

/// Single-relevant retrieval: `relevant[q]` is the one correct item for
/// query `q`.
pub fn retrieval_eval(
    queries: &[Vec<f64>],
    items: &[Vec<f64>],
    relevant: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult> {
    if queries.len() != relevant.len() {
        return Err(Error::Param(format!(
            "{} queries but {} relevance labels",
            queries.len(),
            relevant.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::EmptySequence("retrieval queries"));
    }
    if let Some(&bad) = relevant.iter().find(|&&r| r >= items.len()) {
        return Err(Error::Index {
            op: "retrieval_eval",
            index: bad,
            bound: items.len(),
        });
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > items.len()) {
        return Err(Error::Param(format!("k = {k} outside 1..={}", items.len())));
    }
    let rankings: Vec<Vec<usize>> = queries.iter().map(|q| rank_items(q, items)).collect();
    let relevant_rank: Vec<usize> = rankings
        .iter()
        .zip(relevant)
        .map(|(r, &rel)| r.iter().position(|&i| i == rel).expect("relevant item is ranked"))
        .collect();
    let nq = queries.len() as f64;
    let at_k = ks
        .iter()
        .map(|&k| {
            let hits = relevant_rank.iter().filter(|&&r| r < k).count() as f64;
            AtK {
                k,
                precision: hits / (k as f64 * nq),
                recall: hits / nq,
            }
        })
        .collect();
    Ok(RetrievalResult {
        n_queries: queries.len(),
        n_items: items.len(),
        at_k,
        relevant_rank,
        rankings,
    })
}

/// Retrieval over token sequences embedded by `embed`.
pub fn retrieval_eval_text<F>(
    queries: &[Vec<usize>],
    items: &[Vec<usize>],
    relevant: &[usize],
    embed: F,
    ks: &[usize],
) -> Result<RetrievalResult>
where
    F: Fn(&[usize]) -> Result<Vec<f64>>,
{
    let q = queries.iter().map(|t| embed(t)).collect::<Result<Vec<_>>>()?;
    let c = items.iter().map(|t| embed(t)).collect::<Result<Vec<_>>>()?;
    retrieval_eval(&q, &c, relevant, ks)
}
