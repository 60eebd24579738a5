//! Readers and writers for every on-disk artifact: static embedding tables
//! (word2vec text), contextual occurrence streams (CTXEMB v1), bilingual
//! dictionaries (TSV), CoNLL-U treebanks, and alignment matrices.
//!
//! All formats are UTF-8 with LF line endings. Loaders are pure and
//! re-entrant; returned structures are immutable after construction.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod conllu;
mod ctxemb;
mod dictionary;
mod embeddings;
mod matrix;
mod types;

pub use conllu::{load_conllu, load_conllu_lenient, write_conllu};
pub use ctxemb::{stream_occurrences, OccurrenceReader, OccurrenceWriter};
pub use dictionary::{load_dictionary, save_dictionary};
pub use embeddings::{load_static_embeddings, save_static_embeddings};
pub use matrix::{load_matrix, save_matrix};
pub use types::{
    AlignmentMatrix, AnchorEntry, AnchorTable, ContextualOccurrence, Dictionary, Sentence, Token,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid {what}: {msg}")]
    Invariant { what: &'static str, msg: String },
}

/// Tokenized raw text: one sentence per line, space-separated tokens.
/// Blank lines are skipped.
pub fn load_tokenized_corpus(path: &Path) -> Result<Vec<Vec<String>>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

/// Write a tokenized corpus in the same one-sentence-per-line format.
pub fn save_tokenized_corpus(corpus: &[Vec<String>], path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for sent in corpus {
        out.push_str(&sent.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invariant(what: &'static str, msg: impl Into<String>) -> Self {
        CorpusError::Invariant {
            what,
            msg: msg.into(),
        }
    }
}
