//! Nearest-neighbor retrieval between embedding spaces: cosine and CSLS
//! scoring, word-translation precision@k, and mutual-nearest-neighbor
//! dictionary synthesis for refinement.
//!
//! CSLS(x, y) = 2·cos(x, y) − rT(x) − rS(y), where rT(x) is the mean cosine
//! of x to its k nearest target neighbors and rS(y) the symmetric quantity
//! over the (aligned) source side. Retrieval is brute-force and exact.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus_io::{AlignmentMatrix, AnchorTable, Dictionary};
use crate::linalg_align::align_table;
use crate::mat::{norm, Mat};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("target table is empty")]
    EmptyTarget,
    #[error("tables have different dims: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero evaluable queries: every dictionary entry is out of vocabulary")]
    NoEvaluableQueries,
    #[error("refinement dictionary empty: no mutual nearest neighbors")]
    EmptyDictionary,
    #[error(transparent)]
    Align(#[from] crate::linalg_align::AlignError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Csls,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "csls" => Ok(Metric::Csls),
            other => Err(format!("unknown metric {other:?}, expected cosine|csls")),
        }
    }
}

/// Ranked neighbors of one query token; scores non-increasing.
#[derive(Clone, Debug, Serialize)]
pub struct NeighborList {
    pub query: String,
    pub neighbors: Vec<(String, f64)>,
}

/// Word-translation evaluation summary.
#[derive(Clone, Debug, Serialize)]
pub struct TranslationReport {
    pub k: usize,
    pub metric: Metric,
    pub precision_at_k: f64,
    pub evaluated: usize,
    pub skipped_oov: usize,
}

fn unit_rows(table: &AnchorTable) -> Mat {
    let mut m = table.to_matrix();
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let n = norm(row);
        if n > 0.0 {
            for v in row {
                *v /= n;
            }
        }
    }
    m
}

/// For each row of `a`, the mean cosine to its `k` most similar rows of `b`.
fn mean_topk_sims(a: &Mat, b: &Mat, k: usize) -> Vec<f64> {
    let k = k.max(1).min(b.rows());
    (0..a.rows())
        .into_par_iter()
        .map(|i| {
            let sims = b.matvec(a.row(i));
            let mut top: Vec<f64> = sims;
            top.sort_by(|x, y| y.partial_cmp(x).unwrap());
            top.truncate(k);
            top.iter().sum::<f64>() / k as f64
        })
        .collect()
}

struct Scorer {
    q_rows: Mat,
    t_rows: Mat,
    // CSLS penalties; empty for plain cosine.
    r_target: Vec<f64>,
    r_source: Vec<f64>,
    metric: Metric,
}

impl Scorer {
    fn new(
        queries: &AnchorTable,
        targets: &AnchorTable,
        k_csls: usize,
        metric: Metric,
    ) -> Result<Self, RetrievalError> {
        if targets.is_empty() {
            return Err(RetrievalError::EmptyTarget);
        }
        if queries.dim() != targets.dim() {
            return Err(RetrievalError::DimMismatch(queries.dim(), targets.dim()));
        }
        let q_rows = unit_rows(queries);
        let t_rows = unit_rows(targets);
        let (r_target, r_source) = match metric {
            Metric::Cosine => (vec![], vec![]),
            Metric::Csls => (
                mean_topk_sims(&q_rows, &t_rows, k_csls),
                mean_topk_sims(&t_rows, &q_rows, k_csls),
            ),
        };
        Ok(Scorer {
            q_rows,
            t_rows,
            r_target,
            r_source,
            metric,
        })
    }

    /// Scores of query `qi` against every target.
    fn scores(&self, qi: usize) -> Vec<f64> {
        let cos = self.t_rows.matvec(self.q_rows.row(qi));
        match self.metric {
            Metric::Cosine => cos,
            Metric::Csls => cos
                .iter()
                .enumerate()
                .map(|(j, c)| 2.0 * c - self.r_target[qi] - self.r_source[j])
                .collect(),
        }
    }

    /// Top-k target indices for query `qi`, ties broken by target rank.
    fn top_k(&self, qi: usize, k: usize) -> Vec<(usize, f64)> {
        let scores = self.scores(qi);
        if k == 1 {
            let mut best = 0usize;
            for j in 1..scores.len() {
                if scores[j] > scores[best] {
                    best = j;
                }
            }
            return vec![(best, scores[best])];
        }
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(k);
        idx.into_iter().map(|j| (j, scores[j])).collect()
    }
}

/// Exact k-nearest-neighbor lists from an aligned query table into a target
/// table. `k_csls` is the neighborhood size of the CSLS penalty terms.
pub fn csls_knn(
    queries_aligned: &AnchorTable,
    targets: &AnchorTable,
    k_retrieve: usize,
    k_csls: usize,
) -> Result<Vec<NeighborList>, RetrievalError> {
    knn(queries_aligned, targets, k_retrieve, k_csls, Metric::Csls)
}

pub fn knn(
    queries_aligned: &AnchorTable,
    targets: &AnchorTable,
    k_retrieve: usize,
    k_csls: usize,
    metric: Metric,
) -> Result<Vec<NeighborList>, RetrievalError> {
    let scorer = Scorer::new(queries_aligned, targets, k_csls, metric)?;
    let lists = (0..queries_aligned.len())
        .into_par_iter()
        .map(|qi| NeighborList {
            query: queries_aligned.entries()[qi].token.clone(),
            neighbors: scorer
                .top_k(qi, k_retrieve)
                .into_iter()
                .map(|(j, s)| (targets.entries()[j].token.clone(), s))
                .collect(),
        })
        .collect();
    Ok(lists)
}

/// Mean metric score of each query's single nearest neighbor. This is the
/// unsupervised model-selection criterion.
pub fn mean_nn_score(
    queries_aligned: &AnchorTable,
    targets: &AnchorTable,
    k_csls: usize,
    metric: Metric,
) -> Result<f64, RetrievalError> {
    let scorer = Scorer::new(queries_aligned, targets, k_csls, metric)?;
    let total: f64 = (0..queries_aligned.len())
        .into_par_iter()
        .map(|qi| scorer.top_k(qi, 1)[0].1)
        .sum();
    Ok(total / queries_aligned.len().max(1) as f64)
}

/// Precision@k of word translation through an alignment, over the `vocab_cap`
/// most frequent words of each table. A query counts as evaluable when its
/// source word and at least one gold target are in vocabulary; it succeeds
/// when any gold target appears in the metric's top-k.
#[allow(clippy::too_many_arguments)]
pub fn translation_precision(
    alignment: &AlignmentMatrix,
    src: &AnchorTable,
    tgt: &AnchorTable,
    dict: &Dictionary,
    k: usize,
    metric: Metric,
    k_csls: usize,
    vocab_cap: usize,
) -> Result<TranslationReport, RetrievalError> {
    let src_cap = src.truncated(vocab_cap);
    let tgt_cap = tgt.truncated(vocab_cap);
    let aligned = align_table(alignment, &src_cap)?;
    let scorer = Scorer::new(&aligned, &tgt_cap, k_csls, metric)?;

    let mut evaluated = 0usize;
    let mut skipped_oov = 0usize;
    let mut queries: Vec<(usize, Vec<usize>)> = Vec::new();
    for source in dict.sources() {
        let gold: Vec<usize> = dict
            .targets_of(source)
            .filter_map(|t| tgt_cap.rank_of(t))
            .collect();
        match (aligned.rank_of(source), gold.is_empty()) {
            (Some(qi), false) => {
                evaluated += 1;
                queries.push((qi, gold));
            }
            _ => skipped_oov += 1,
        }
    }
    if evaluated == 0 {
        return Err(RetrievalError::NoEvaluableQueries);
    }

    let successes: usize = queries
        .par_iter()
        .map(|(qi, gold)| {
            let top = scorer.top_k(*qi, k);
            usize::from(top.iter().any(|(j, _)| gold.contains(j)))
        })
        .sum();

    Ok(TranslationReport {
        k,
        metric,
        precision_at_k: successes as f64 / evaluated as f64,
        evaluated,
        skipped_oov,
    })
}

/// Mutual CSLS nearest neighbors among tokens with frequency rank below
/// `max_rank`, as a synthesized dictionary for refinement.
pub fn build_synthetic_dictionary(
    src_aligned: &AnchorTable,
    tgt: &AnchorTable,
    max_rank: usize,
    k_csls: usize,
) -> Result<Dictionary, RetrievalError> {
    let src_cap = src_aligned.truncated(max_rank);
    let tgt_cap = tgt.truncated(max_rank);
    if src_cap.is_empty() || tgt_cap.is_empty() {
        return Err(RetrievalError::EmptyDictionary);
    }
    let scorer = Scorer::new(&src_cap, &tgt_cap, k_csls, Metric::Csls)?;

    // One sweep over query score rows yields both directions: the best
    // target per source and, under the same symmetric score, the best source
    // per target. Ties break toward the lower index, which makes the
    // parallel merge order-independent.
    let (nn_of_source, nn_of_target) = (0..src_cap.len())
        .into_par_iter()
        .fold(
            || {
                (
                    Vec::new(),
                    vec![(f64::NEG_INFINITY, usize::MAX); tgt_cap.len()],
                )
            },
            |(mut fwd, mut bwd), qi| {
                let scores = scorer.scores(qi);
                let mut best = 0usize;
                for (tj, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = tj;
                    }
                    if s > bwd[tj].0 || (s == bwd[tj].0 && qi < bwd[tj].1) {
                        bwd[tj] = (s, qi);
                    }
                }
                fwd.push((qi, best));
                (fwd, bwd)
            },
        )
        .reduce(
            || {
                (
                    Vec::new(),
                    vec![(f64::NEG_INFINITY, usize::MAX); tgt_cap.len()],
                )
            },
            |(mut fwd_a, mut bwd_a), (fwd_b, bwd_b)| {
                fwd_a.extend(fwd_b);
                for (a, b) in bwd_a.iter_mut().zip(bwd_b) {
                    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                        *a = b;
                    }
                }
                (fwd_a, bwd_a)
            },
        );
    let mut nn_of_source = nn_of_source;
    nn_of_source.sort_by_key(|&(qi, _)| qi);
    let nn_of_target: Vec<usize> = nn_of_target.into_iter().map(|(_, qi)| qi).collect();

    let mut pairs = Vec::new();
    for &(qi, tj) in &nn_of_source {
        if nn_of_target[tj] == qi {
            pairs.push((
                src_cap.entries()[qi].token.clone(),
                tgt_cap.entries()[tj].token.clone(),
            ));
        }
    }
    if pairs.is_empty() {
        return Err(RetrievalError::EmptyDictionary);
    }
    Ok(Dictionary::new(pairs))
}
