//! Central finite-difference gradient checking.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Maximum scaled error between analytic gradients and central differences
/// over every component of every input. `build` must be deterministic (any
/// dropout inside must draw from a freshly seeded generator).
pub fn max_relative_error(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> f64 {
    let eval = |tensors: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let value = tape.value(loss).item();
        tape.backward(loss);
        let grads = ids.iter().map(|&id| tape.grad(id)).collect();
        (value, grads)
    };

    let (_, analytic) = eval(inputs);

    let mut worst = 0.0_f64;
    let h = DEFAULT_STEP;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let (fp, _) = eval_value_only(&plus, build);
            let (fm, _) = eval_value_only(&minus, build);
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

fn eval_value_only(
    tensors: &[Tensor],
    build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> (f64, ()) {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    (tape.value(loss).item(), ())
}
