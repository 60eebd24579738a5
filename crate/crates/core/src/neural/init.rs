//! Parameter initializers: Glorot uniform for dense and biaffine weights,
//! orthogonal blocks for recurrent kernels, zeros for biases.

use rand::Rng;

use super::tensor::Tensor;
use crate::mat::random_orthogonal;

pub fn xavier_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Orthogonal init. When `cols` is a multiple of `rows` (the stacked-gate
/// recurrent kernel), each `rows`-wide block is an independent orthogonal
/// matrix; otherwise a submatrix of a larger orthogonal matrix is used.
pub fn orthogonal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    if cols % rows == 0 {
        for block in 0..cols / rows {
            let q = random_orthogonal(rng, rows);
            for i in 0..rows {
                for j in 0..rows {
                    data[i * cols + block * rows + j] = q.get(i, j);
                }
            }
        }
    } else {
        let n = rows.max(cols);
        let q = random_orthogonal(rng, n);
        for i in 0..rows {
            for j in 0..cols {
                data[i * cols + j] = q.get(i, j);
            }
        }
    }
    Tensor::matrix(rows, cols, data)
}

pub fn zeros_vec(len: usize) -> Tensor {
    Tensor::new(vec![len], vec![0.0; len])
}
