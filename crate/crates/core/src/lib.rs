//! Cross-lingual alignment of contextual word embeddings via
//! context-independent anchors, with a graph-based biaffine dependency
//! parser for zero-shot and few-shot transfer.
//!
//! The pipeline is a chain: embed a corpus with a small bidirectional LM,
//! average each token's contextual vectors into anchors, align anchor spaces
//! across languages (supervised Procrustes or adversarial training with CSLS
//! refinement), then feed aligned contextual embeddings to the parser.

pub mod adversarial;
pub mod anchor_space;
pub mod bilm;
pub mod corpus_io;
pub mod linalg_align;
pub mod mat;
pub mod neural;
pub mod parser;
pub mod retrieval;
pub mod synth;

pub use corpus_io::{
    AlignmentMatrix, AnchorEntry, AnchorTable, ContextualOccurrence, Dictionary, Sentence, Token,
};
pub use mat::Mat;
