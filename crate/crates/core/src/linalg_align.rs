//! Closed-form orthogonal alignment between paired point sets, plus helpers
//! to apply an alignment and measure orthogonality.
//!
//! The best orthogonal map is `W = U V^T` where `U Σ V^T` is the SVD of the
//! weighted cross-covariance of the pairs (targets times transposed sources,
//! so that `W · source ≈ target`).

use thiserror::Error;

use crate::corpus_io::{AlignmentMatrix, AnchorEntry, AnchorTable, Dictionary};
use crate::mat::{svd, Mat, MatError};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("paired point set invalid: {0}")]
    InvalidPairs(String),
    #[error("degenerate pairing: cross-covariance is all zero")]
    Degenerate,
    #[error("vector has dim {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error("no dictionary pair is present in both vocabularies")]
    EmptyOverlap,
}

/// Paired (source, target) vectors with optional positive weights.
#[derive(Clone, Debug)]
pub struct PairedPointSet {
    dim: usize,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    weights: Option<Vec<f64>>,
}

impl PairedPointSet {
    pub fn new(dim: usize, pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self, AlignError> {
        Self::weighted(dim, pairs, None)
    }

    pub fn weighted(
        dim: usize,
        pairs: Vec<(Vec<f64>, Vec<f64>)>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, AlignError> {
        if pairs.is_empty() {
            return Err(AlignError::InvalidPairs("at least one pair required".into()));
        }
        for (s, t) in &pairs {
            if s.len() != dim || t.len() != dim {
                return Err(AlignError::InvalidPairs(format!(
                    "pair has dims ({}, {}), expected {}",
                    s.len(),
                    t.len(),
                    dim
                )));
            }
        }
        if let Some(w) = &weights {
            if w.len() != pairs.len() {
                return Err(AlignError::InvalidPairs("one weight per pair required".into()));
            }
            if w.iter().any(|x| !(*x > 0.0)) {
                return Err(AlignError::InvalidPairs("weights must be positive".into()));
            }
        }
        Ok(PairedPointSet { dim, pairs, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pairs
    }

    /// Scale every vector to unit length (zero vectors are left alone).
    pub fn normalized(mut self) -> Self {
        for (s, t) in &mut self.pairs {
            normalize_in_place(s);
            normalize_in_place(t);
        }
        self
    }

    /// Subtract each side's (weighted) mean from its vectors.
    pub fn centered(mut self) -> Self {
        let n = self.pairs.len() as f64;
        let mut mean_s = vec![0.0; self.dim];
        let mut mean_t = vec![0.0; self.dim];
        for (s, t) in &self.pairs {
            for i in 0..self.dim {
                mean_s[i] += s[i] / n;
                mean_t[i] += t[i] / n;
            }
        }
        for (s, t) in &mut self.pairs {
            for i in 0..self.dim {
                s[i] -= mean_s[i];
                t[i] -= mean_t[i];
            }
        }
        self
    }

    /// Weighted sum of `weight * target * source^T`.
    fn cross_covariance(&self) -> Mat {
        let mut c = Mat::zeros(self.dim, self.dim);
        for (idx, (s, t)) in self.pairs.iter().enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |ws| ws[idx]);
            for a in 0..self.dim {
                let wt = w * t[a];
                let row = c.row_mut(a);
                for (b, sv) in s.iter().enumerate() {
                    row[b] += wt * sv;
                }
            }
        }
        c
    }
}

fn normalize_in_place(v: &mut [f64]) {
    let n = crate::mat::norm(v);
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

/// One (source, target) pair per dictionary entry whose words appear in both
/// tables; a source with several translations contributes several equally
/// weighted pairs. Returns the pairs and the number of skipped OOV entries.
pub fn pairs_from_dictionary(
    src: &AnchorTable,
    tgt: &AnchorTable,
    dict: &Dictionary,
) -> Result<(PairedPointSet, usize), AlignError> {
    if src.dim() != tgt.dim() {
        return Err(AlignError::DimMismatch {
            expected: src.dim(),
            got: tgt.dim(),
        });
    }
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for (s, t) in dict.pairs() {
        match (src.vector_of(s), tgt.vector_of(t)) {
            (Some(sv), Some(tv)) => pairs.push((sv.to_vec(), tv.to_vec())),
            _ => skipped += 1,
        }
    }
    if pairs.is_empty() {
        return Err(AlignError::EmptyOverlap);
    }
    Ok((PairedPointSet::new(src.dim(), pairs)?, skipped))
}

/// Closed-form solution of the orthogonal least-squares fit
/// `argmin_{W orthogonal} Σ wᵢ ‖W sᵢ − tᵢ‖²`.
pub fn orthogonal_procrustes(data: &PairedPointSet) -> Result<AlignmentMatrix, AlignError> {
    let c = data.cross_covariance();
    if c.data().iter().all(|v| *v == 0.0) {
        return Err(AlignError::Degenerate);
    }
    let decomp = svd(&c)?;
    let w = decomp.u.matmul_nt(&decomp.v);
    AlignmentMatrix::new("", "", w).map_err(|e| AlignError::InvalidPairs(e.to_string()))
}

/// Map every vector through `W`.
pub fn apply_alignment(
    alignment: &AlignmentMatrix,
    vectors: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, AlignError> {
    let dim = alignment.dim();
    vectors
        .iter()
        .map(|v| {
            if v.len() != dim {
                return Err(AlignError::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            Ok(alignment.matrix.matvec(v))
        })
        .collect()
}

/// Map every anchor of a table through `W`, preserving tokens and counts.
pub fn align_table(
    alignment: &AlignmentMatrix,
    table: &AnchorTable,
) -> Result<AnchorTable, AlignError> {
    if table.dim() != alignment.dim() {
        return Err(AlignError::DimMismatch {
            expected: alignment.dim(),
            got: table.dim(),
        });
    }
    let entries = table
        .entries()
        .iter()
        .map(|e| AnchorEntry {
            token: e.token.clone(),
            count: e.count,
            vector: alignment.matrix.matvec(&e.vector),
        })
        .collect();
    AnchorTable::new(table.space_id(), table.dim(), entries)
        .map_err(|e| AlignError::InvalidPairs(e.to_string()))
}

/// `‖W^T W − I‖_F`.
pub fn orthogonality_error(w: &Mat) -> f64 {
    let g = w.transpose().matmul(w);
    g.sub(&Mat::identity(w.cols())).frob_norm()
}

/// Σ wᵢ ‖W sᵢ − tᵢ‖², the quantity Procrustes minimizes.
pub fn alignment_objective(w: &Mat, data: &PairedPointSet) -> f64 {
    let mut total = 0.0;
    for (idx, (s, t)) in data.pairs.iter().enumerate() {
        let weight = data.weights.as_ref().map_or(1.0, |ws| ws[idx]);
        let mapped = w.matvec(s);
        let mut d = 0.0;
        for (m, tv) in mapped.iter().zip(t) {
            d += (m - tv) * (m - tv);
        }
        total += weight * d;
    }
    total
}
