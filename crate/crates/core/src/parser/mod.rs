//! First-order graph-based biaffine dependency parser over aligned
//! contextual embeddings, with maximum-spanning-arborescence decoding,
//! multilingual training, and attachment-score evaluation.

use thiserror::Error;

mod model;
mod mst;
mod train;

pub use model::{
    encode, loss_gradient_max_error, parse_sentence, score_arcs, score_labels,
    sentence_loss_parts, EncodeOutput, EncodedSentence, ParseResult, ParserConfig, ParserModel,
    ARC_MASK,
};
pub use mst::{brute_force_decode, is_arborescence, mst_decode, tree_score};
pub use train::{
    attach_embeddings, evaluate, parse_to_sentences, score_attachment, train_parser, Attachment,
    ParserTrainReport,
};

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("bad parser config: {0}")]
    Config(String),
    #[error("parser data error: {0}")]
    Data(String),
    #[error("a development set is required: early stopping is part of the training contract")]
    MissingDev,
    #[error("parser model I/O: {0}")]
    Io(#[from] std::io::Error),
}
