//! Alignment matrix text format: header `D D`, then `D` rows of `D` floats.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::embeddings::format_float;
use super::types::AlignmentMatrix;
use super::CorpusError;
use crate::mat::Mat;

/// Orthogonality tolerance enforced when saving.
pub const ORTHOGONALITY_SAVE_TOL: f64 = 1e-4;

pub fn load_matrix(path: &Path) -> Result<AlignmentMatrix, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| CorpusError::parse(path, 1, "empty file"))?;
    let header = header.map_err(|e| CorpusError::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CorpusError::parse(path, 1, "expected header \"D D\""))?;
    if dims.len() != 2 || dims[0] != dims[1] || dims[0] == 0 {
        return Err(CorpusError::parse(path, 1, "expected square non-zero \"D D\" header"));
    }
    let dim = dims[0];

    let mut mat = Mat::zeros(dim, dim);
    let mut row = 0;
    for (i, line) in lines {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if row >= dim {
            return Err(CorpusError::parse(path, i + 1, "more rows than header declares"));
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| CorpusError::parse(path, i + 1, format!("bad float {f:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(CorpusError::parse(
                path,
                i + 1,
                format!("ragged row: {} values, expected {}", values.len(), dim),
            ));
        }
        mat.row_mut(row).copy_from_slice(&values);
        row += 1;
    }
    if row != dim {
        return Err(CorpusError::parse(
            path,
            row + 1,
            format!("expected {dim} rows, found {row}"),
        ));
    }
    AlignmentMatrix::new("", "", mat)
}

pub fn save_matrix(alignment: &AlignmentMatrix, path: &Path) -> Result<(), CorpusError> {
    let err = alignment.orthogonality_error();
    if !err.is_finite() || err > ORTHOGONALITY_SAVE_TOL {
        return Err(CorpusError::invariant(
            "AlignmentMatrix",
            format!("orthogonality error {err:.3e} exceeds {ORTHOGONALITY_SAVE_TOL:.0e}"),
        ));
    }
    let dim = alignment.dim();
    let mut out = format!("{dim} {dim}\n");
    for i in 0..dim {
        for (j, v) in alignment.matrix.row(i).iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn identity_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.mat");
        let a = AlignmentMatrix::new("s", "t", Mat::identity(3)).unwrap();
        save_matrix(&a, &path).unwrap();
        let b = load_matrix(&path).unwrap();
        assert_eq!(b.matrix, Mat::identity(3));
    }

    #[test]
    fn rotation_round_trips_within_tolerance() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.mat");
        let th = 30.0_f64.to_radians();
        let rot = Mat::from_vec(2, 2, vec![th.cos(), -th.sin(), th.sin(), th.cos()]);
        let a = AlignmentMatrix::new("s", "t", rot.clone()).unwrap();
        save_matrix(&a, &path).unwrap();
        let b = load_matrix(&path).unwrap();
        for (x, y) in rot.data().iter().zip(b.matrix.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn non_orthogonal_save_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.mat");
        // ‖W^T W − I‖_F substantially above tolerance.
        let w = Mat::from_vec(2, 2, vec![1.2, 0.0, 0.0, 1.0]);
        let a = AlignmentMatrix::new("s", "t", w).unwrap();
        assert!(save_matrix(&a, &path).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.mat");
        std::fs::write(&path, "2 2\n1 0\n0\n").unwrap();
        let err = load_matrix(&path).unwrap_err().to_string();
        assert!(err.contains("ragged"), "{err}");
    }
}
