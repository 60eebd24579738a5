//! Minimal reverse-mode autodiff and the layer zoo shared by the biLM, the
//! adversarial discriminator, and the parser: matmul, bias add, concat,
//! nonlinearities, embedding lookup, dropout, LSTM, biaffine forms, softmax
//! cross-entropy, and Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod store;
pub mod tape;
pub mod tensor;

pub use checkpoint::{
    read_named_tensors, tensors_from_bytes, tensors_to_bytes, write_named_tensors, CheckpointError,
};
pub use lstm::{bilstm_layer, lstm_sequence, register_lstm, LstmParams};
pub use store::{sgd_step, sgd_step_filtered, AdamConfig, AdamState, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

/// `scores[i][j] = h1_i^T · U · h2_j  (+ u1^T h1_i + u2^T h2_j + b)`.
///
/// `h1` is `[n, p]`, `h2` is `[m, q]`, `u` is `[p, q]`; the optional linear
/// terms are `u1 [p, 1]`, `u2 [q, 1]` and a scalar bias.
pub fn biaffine(
    tape: &mut Tape,
    h1: NodeId,
    u: NodeId,
    h2: NodeId,
    u1: Option<NodeId>,
    u2: Option<NodeId>,
    bias: Option<NodeId>,
) -> NodeId {
    let h1u = tape.matmul(h1, u);
    let mut scores = tape.matmul_nt(h1u, h2);
    if let Some(u1) = u1 {
        let per_row = tape.matmul(h1, u1);
        scores = tape.add_col_broadcast(scores, per_row);
    }
    if let Some(u2) = u2 {
        let per_col = tape.matmul(h2, u2);
        let per_col = tape.transpose(per_col);
        scores = tape.add_row_broadcast(scores, per_col);
    }
    if let Some(b) = bias {
        scores = tape.add_scalar_broadcast(scores, b);
    }
    scores
}
