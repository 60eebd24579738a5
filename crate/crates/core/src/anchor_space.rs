//! Anchors: per-token means of contextual occurrence vectors, the shift of
//! an occurrence from its anchor, and point-cloud geometry statistics.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus_io::{AnchorEntry, AnchorTable, ContextualOccurrence};
use crate::mat::cosine;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("occurrence of {token:?} has dim {got}, expected {expected}")]
    DimMismatch {
        token: String,
        expected: usize,
        got: usize,
    },
    #[error("token {0:?} not present in anchor table")]
    UnknownToken(String),
    #[error("invalid anchor table: {0}")]
    Table(String),
}

/// Streaming (sum, count) accumulator for anchors. Sums use Kahan
/// compensation so the result is permutation-invariant well below 1e-6.
/// Partial accumulators from shards can be merged.
pub struct AnchorAccumulator {
    dim: usize,
    // token -> (component sums, Kahan compensations, count)
    state: HashMap<String, (Vec<f64>, Vec<f64>, u64)>,
    alphabetic_only: bool,
}

impl AnchorAccumulator {
    pub fn new(dim: usize, alphabetic_only: bool) -> Self {
        AnchorAccumulator {
            dim,
            state: HashMap::new(),
            alphabetic_only,
        }
    }

    pub fn add(&mut self, occ: &ContextualOccurrence) -> Result<(), AnchorError> {
        if occ.vector.len() != self.dim {
            return Err(AnchorError::DimMismatch {
                token: occ.token.clone(),
                expected: self.dim,
                got: occ.vector.len(),
            });
        }
        if self.alphabetic_only && !is_alphabetic_token(&occ.token) {
            return Ok(());
        }
        let (sum, comp, count) = self
            .state
            .entry(occ.token.clone())
            .or_insert_with(|| (vec![0.0; self.dim], vec![0.0; self.dim], 0));
        for ((s, c), v) in sum.iter_mut().zip(comp.iter_mut()).zip(&occ.vector) {
            // Kahan step.
            let y = v - *c;
            let t = *s + y;
            *c = (t - *s) - y;
            *s = t;
        }
        *count += 1;
        Ok(())
    }

    /// Merge a shard's partial sums. Merge order perturbs results only at
    /// the compensation level, far below 1e-6.
    pub fn merge(&mut self, other: AnchorAccumulator) -> Result<(), AnchorError> {
        if other.dim != self.dim {
            return Err(AnchorError::DimMismatch {
                token: "<merge>".into(),
                expected: self.dim,
                got: other.dim,
            });
        }
        for (token, (osum, _ocomp, ocount)) in other.state {
            let (sum, comp, count) = self
                .state
                .entry(token)
                .or_insert_with(|| (vec![0.0; self.dim], vec![0.0; self.dim], 0));
            for ((s, c), v) in sum.iter_mut().zip(comp.iter_mut()).zip(&osum) {
                let y = v - *c;
                let t = *s + y;
                *c = (t - *s) - y;
                *s = t;
            }
            *count += ocount;
        }
        Ok(())
    }

    pub fn finish(
        self,
        space_id: impl Into<String>,
        min_count: u64,
    ) -> Result<AnchorTable, AnchorError> {
        let dim = self.dim.max(1);
        let entries: Vec<AnchorEntry> = self
            .state
            .into_iter()
            .filter(|(_, (_, _, count))| *count >= min_count.max(1))
            .map(|(token, (sum, _, count))| AnchorEntry {
                token,
                count,
                vector: sum.iter().map(|s| s / count as f64).collect(),
            })
            .collect();
        AnchorTable::new(space_id, dim, entries).map_err(|e| AnchorError::Table(e.to_string()))
    }
}

fn is_alphabetic_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(char::is_alphabetic)
}

/// Anchor of each token with at least `min_count` occurrences: the arithmetic
/// mean of its occurrence vectors.
pub fn compute_anchors(
    dim: usize,
    occurrences: impl IntoIterator<Item = ContextualOccurrence>,
    min_count: u64,
    alphabetic_only: bool,
    space_id: &str,
) -> Result<AnchorTable, AnchorError> {
    let mut acc = AnchorAccumulator::new(dim, alphabetic_only);
    for occ in occurrences {
        acc.add(&occ)?;
    }
    acc.finish(space_id, min_count)
}

/// Residual of an occurrence from its token's anchor.
pub fn shift_from_anchor(
    occ: &ContextualOccurrence,
    table: &AnchorTable,
) -> Result<Vec<f64>, AnchorError> {
    let anchor = table
        .vector_of(&occ.token)
        .ok_or_else(|| AnchorError::UnknownToken(occ.token.clone()))?;
    if occ.vector.len() != table.dim() {
        return Err(AnchorError::DimMismatch {
            token: occ.token.clone(),
            expected: table.dim(),
            got: occ.vector.len(),
        });
    }
    Ok(occ
        .vector
        .iter()
        .zip(anchor)
        .map(|(v, a)| v - a)
        .collect())
}

/// Point-cloud geometry statistics. All distances are cosine distances
/// `1 − cos`, so they live in [0, 2].
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct GeometryStats {
    /// Mean over tokens of the mean cosine distance of each occurrence to
    /// its own anchor.
    pub mean_within_cloud: f64,
    /// Mean cosine distance between distinct anchors.
    pub mean_between_anchors: f64,
    /// Within-cloud mean restricted to a supplied token subset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_within_subset: Option<f64>,
    pub tokens_counted: u64,
}

#[derive(Clone, Debug)]
pub struct GeometryConfig {
    /// Use all anchor pairs up to this vocabulary size, sample beyond it.
    pub pair_exhaustive_limit: usize,
    pub pair_samples: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            pair_exhaustive_limit: 2000,
            pair_samples: 1_000_000,
            seed: 42,
        }
    }
}

/// Within-cloud vs between-anchor cosine distances, optionally also for a
/// token subset (e.g. homonyms). Empty inputs yield zeroed stats.
pub fn geometry_report(
    occurrences: impl IntoIterator<Item = ContextualOccurrence>,
    table: &AnchorTable,
    subset: Option<&[String]>,
    config: &GeometryConfig,
) -> GeometryStats {
    let subset: Option<HashSet<&str>> =
        subset.map(|s| s.iter().map(String::as_str).collect());

    // token -> (sum of distances to own anchor, occurrence count)
    let mut within: HashMap<String, (f64, u64)> = HashMap::new();
    for occ in occurrences {
        let Some(anchor) = table.vector_of(&occ.token) else {
            continue;
        };
        let dist = 1.0 - cosine(&occ.vector, anchor);
        let e = within.entry(occ.token).or_insert((0.0, 0));
        e.0 += dist;
        e.1 += 1;
    }

    let mut token_means = 0.0;
    let mut tokens_counted = 0u64;
    let mut subset_means = 0.0;
    let mut subset_counted = 0u64;
    for (token, (sum, count)) in &within {
        let mean = sum / *count as f64;
        token_means += mean;
        tokens_counted += 1;
        if let Some(subset) = &subset {
            if subset.contains(token.as_str()) {
                subset_means += mean;
                subset_counted += 1;
            }
        }
    }

    let mean_within_cloud = if tokens_counted > 0 {
        token_means / tokens_counted as f64
    } else {
        0.0
    };
    let mean_within_subset = match (&subset, subset_counted) {
        (Some(_), 0) => Some(0.0),
        (Some(_), n) => Some(subset_means / n as f64),
        (None, _) => None,
    };

    GeometryStats {
        mean_within_cloud,
        mean_between_anchors: mean_between_anchors(table, config),
        mean_within_subset,
        tokens_counted,
    }
}

fn mean_between_anchors(table: &AnchorTable, config: &GeometryConfig) -> f64 {
    let n = table.len();
    if n < 2 {
        return 0.0;
    }
    let entries = table.entries();
    if n <= config.pair_exhaustive_limit {
        let mut sum = 0.0;
        let mut pairs = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += 1.0 - cosine(&entries[i].vector, &entries[j].vector);
                pairs += 1;
            }
        }
        sum / pairs as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sum = 0.0;
        let mut pairs = 0u64;
        while pairs < config.pair_samples as u64 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j {
                continue;
            }
            sum += 1.0 - cosine(&entries[i].vector, &entries[j].vector);
            pairs += 1;
        }
        sum / pairs as f64
    }
}
