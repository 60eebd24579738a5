//! LSTM recurrence composed from tape primitives, so gradients come from
//! the same reverse sweep as everything else.
//!
//! Gate layout in the stacked kernels is `[input, forget, cell, output]`.
//! The forget-gate bias is initialized to 1.

use rand::Rng;

use super::init::{orthogonal, xavier_uniform, zeros_vec};
use super::store::ParamStore;
use super::tape::{NodeId, Tape};

/// Register `w_x [in,4h]`, `w_h [h,4h]`, `b [4h]` under `prefix.*`.
pub fn register_lstm(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    rng: &mut impl Rng,
) {
    store.insert(format!("{prefix}.w_x"), xavier_uniform(rng, input_dim, 4 * hidden));
    store.insert(format!("{prefix}.w_h"), orthogonal(rng, hidden, 4 * hidden));
    let mut bias = zeros_vec(4 * hidden);
    for v in &mut bias.data_mut()[hidden..2 * hidden] {
        *v = 1.0;
    }
    store.insert(format!("{prefix}.b"), bias);
}

/// Bound node ids of one LSTM direction's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub b: NodeId,
}

impl LstmParams {
    pub fn bind(store: &ParamStore, tape: &mut Tape, prefix: &str) -> Self {
        LstmParams {
            w_x: store.bind(tape, &format!("{prefix}.w_x")),
            w_h: store.bind(tape, &format!("{prefix}.w_h")),
            b: store.bind(tape, &format!("{prefix}.b")),
        }
    }
}

/// Run the recurrence over the rows of `inputs` ([T, in]). Returns one
/// `[1, h]` node per timestep, in input order; `reverse` runs right-to-left
/// (the returned vector is still aligned with input positions). T = 0 yields
/// an empty vector.
pub fn lstm_sequence(
    tape: &mut Tape,
    inputs: NodeId,
    params: LstmParams,
    hidden: usize,
    reverse: bool,
) -> Vec<NodeId> {
    let t_len = tape.value(inputs).rows();
    if t_len == 0 {
        return Vec::new();
    }
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };

    let mut h_prev = tape.leaf(super::tensor::Tensor::matrix(1, hidden, vec![0.0; hidden]));
    let mut c_prev = tape.leaf(super::tensor::Tensor::matrix(1, hidden, vec![0.0; hidden]));
    let mut states = vec![None; t_len];
    for &t in &order {
        let x_t = tape.slice_rows(inputs, t..t + 1);
        let from_x = tape.matmul(x_t, params.w_x);
        let from_h = tape.matmul(h_prev, params.w_h);
        let pre = tape.add(from_x, from_h);
        let pre = tape.add_row_broadcast(pre, params.b);

        let i_gate = {
            let s = tape.slice_cols(pre, 0..hidden);
            tape.sigmoid(s)
        };
        let f_gate = {
            let s = tape.slice_cols(pre, hidden..2 * hidden);
            tape.sigmoid(s)
        };
        let g_cell = {
            let s = tape.slice_cols(pre, 2 * hidden..3 * hidden);
            tape.tanh(s)
        };
        let o_gate = {
            let s = tape.slice_cols(pre, 3 * hidden..4 * hidden);
            tape.sigmoid(s)
        };

        let keep = tape.mul(f_gate, c_prev);
        let write = tape.mul(i_gate, g_cell);
        let c_t = tape.add(keep, write);
        let c_act = tape.tanh(c_t);
        let h_t = tape.mul(o_gate, c_act);

        states[t] = Some(h_t);
        h_prev = h_t;
        c_prev = c_t;
    }
    states.into_iter().map(Option::unwrap).collect()
}

/// Forward and backward passes concatenated per timestep: `[T, 2h]`.
pub fn bilstm_layer(
    tape: &mut Tape,
    inputs: NodeId,
    fwd: LstmParams,
    bwd: LstmParams,
    hidden: usize,
) -> NodeId {
    let f_states = lstm_sequence(tape, inputs, fwd, hidden, false);
    let b_states = lstm_sequence(tape, inputs, bwd, hidden, true);
    let per_step: Vec<NodeId> = f_states
        .iter()
        .zip(&b_states)
        .map(|(&f, &b)| tape.concat_cols(&[f, b]))
        .collect();
    tape.concat_rows(&per_step)
}
