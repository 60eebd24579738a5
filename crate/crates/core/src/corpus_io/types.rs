//! Shared on-disk domain types.

use std::collections::HashMap;

use crate::corpus_io::CorpusError;
use crate::mat::Mat;

/// One vocabulary entry of an [`AnchorTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorEntry {
    pub token: String,
    pub count: u64,
    pub vector: Vec<f64>,
}

/// A vocabulary of token strings mapped to fixed-dimension anchor vectors,
/// ordered by descending count (frequency rank), ties broken lexicographically.
#[derive(Clone, Debug)]
pub struct AnchorTable {
    space_id: String,
    dim: usize,
    entries: Vec<AnchorEntry>,
    index: HashMap<String, usize>,
}

impl AnchorTable {
    /// Build a table, validating invariants and sorting entries into
    /// canonical frequency-rank order.
    pub fn new(
        space_id: impl Into<String>,
        dim: usize,
        mut entries: Vec<AnchorEntry>,
    ) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::invariant("AnchorTable", "dim must be positive"));
        }
        for e in &entries {
            if e.vector.len() != dim {
                return Err(CorpusError::invariant(
                    "AnchorTable",
                    format!(
                        "vector for token {:?} has length {}, expected {}",
                        e.token,
                        e.vector.len(),
                        dim
                    ),
                ));
            }
        }
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.token.clone(), i).is_some() {
                return Err(CorpusError::invariant(
                    "AnchorTable",
                    format!("duplicate token {:?}", e.token),
                ));
            }
        }
        Ok(AnchorTable {
            space_id: space_id.into(),
            dim,
            entries,
            index,
        })
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn set_space_id(&mut self, id: impl Into<String>) {
        self.space_id = id.into();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[AnchorEntry] {
        &self.entries
    }

    /// Frequency rank of a token (0 = most frequent), if present.
    pub fn rank_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector_of(&self, token: &str) -> Option<&[f64]> {
        self.rank_of(token).map(|i| self.entries[i].vector.as_slice())
    }

    /// Restrict to the `cap` most frequent tokens.
    pub fn truncated(&self, cap: usize) -> AnchorTable {
        let entries: Vec<AnchorEntry> = self.entries.iter().take(cap).cloned().collect();
        AnchorTable::new(self.space_id.clone(), self.dim, entries)
            .expect("truncation preserves invariants")
    }

    /// Entry vectors stacked into a row matrix, in rank order.
    pub fn to_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.entries.len(), self.dim);
        for (i, e) in self.entries.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&e.vector);
        }
        m
    }
}

/// One token-in-context embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualOccurrence {
    pub token: String,
    pub sentence_id: u64,
    pub position: u64,
    pub vector: Vec<f64>,
}

/// A multiset of (source word, target word) translation pairs. A source word
/// may map to multiple targets; exact duplicate pairs are collapsed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dictionary {
    pairs: Vec<(String, String)>,
}

impl Dictionary {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let pairs = pairs
            .into_iter()
            .filter(|p| seen.insert(p.clone()))
            .collect();
        Dictionary { pairs }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// All targets recorded for `source`, in file order.
    pub fn targets_of<'a>(&'a self, source: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pairs
            .iter()
            .filter(move |(s, _)| s == source)
            .map(|(_, t)| t.as_str())
    }

    /// Distinct source words, in first-appearance order.
    pub fn sources(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.pairs
            .iter()
            .filter(|(s, _)| seen.insert(s.as_str()))
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// An orthogonal map between two named embedding spaces.
#[derive(Clone, Debug)]
pub struct AlignmentMatrix {
    pub source_space: String,
    pub target_space: String,
    pub matrix: Mat,
}

impl AlignmentMatrix {
    pub fn new(
        source_space: impl Into<String>,
        target_space: impl Into<String>,
        matrix: Mat,
    ) -> Result<Self, CorpusError> {
        if matrix.rows() != matrix.cols() || matrix.rows() == 0 {
            return Err(CorpusError::invariant(
                "AlignmentMatrix",
                format!("matrix must be square and non-empty, got {}x{}", matrix.rows(), matrix.cols()),
            ));
        }
        Ok(AlignmentMatrix {
            source_space: source_space.into(),
            target_space: target_space.into(),
            matrix,
        })
    }

    pub fn identity(dim: usize) -> Self {
        AlignmentMatrix {
            source_space: String::new(),
            target_space: String::new(),
            matrix: Mat::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `‖W^T W − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.matrix.transpose().matmul(&self.matrix);
        g.sub(&Mat::identity(self.dim())).frob_norm()
    }
}

/// One syntactic word of a [`Sentence`].
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub form: String,
    pub upos: String,
    /// Gold head index; 0 is the artificial root, 1-based otherwise.
    pub head: usize,
    pub label: String,
}

/// A CoNLL-U sentence (syntactic words only).
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub language: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Check that gold heads form a tree rooted at the artificial root:
    /// every head in range and every token reachable from node 0.
    pub fn validate_tree(&self) -> Result<(), String> {
        let n = self.tokens.len();
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.head > n {
                return Err(format!(
                    "token {} has head {} out of range 0..={}",
                    i + 1,
                    tok.head,
                    n
                ));
            }
            if tok.head == i + 1 {
                return Err(format!("token {} is its own head", i + 1));
            }
        }
        // Walk up from each token; a cycle never reaches the root.
        for start in 1..=n {
            let mut cur = start;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(format!("cycle in heads involving token {start}"));
                }
            }
        }
        Ok(())
    }
}
