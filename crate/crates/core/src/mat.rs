//! Dense row-major `f64` matrices and a one-sided Jacobi SVD.
//!
//! Everything in here is deterministic: fixed sweep order, no randomness,
//! and a fixed sign convention for singular vectors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Mat { rows, cols, data }
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols, p % self.cols))
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`, ikj loop order to stay cache-friendly.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt shape mismatch: {}x{} * ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (a, b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for (a, b) in self.row(i).iter().zip(x) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero vectors are treated as orthogonal to everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Random orthogonal matrix: modified Gram-Schmidt on i.i.d. uniform columns.
pub fn random_orthogonal(rng: &mut impl rand::Rng, d: usize) -> Mat {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut ok = true;
        for j in 0..d {
            for prev in 0..j {
                let p = dot(&cols[j], &cols[prev]);
                let prev_col = cols[prev].clone();
                for (x, pc) in cols[j].iter_mut().zip(&prev_col) {
                    *x -= p * pc;
                }
            }
            let n = norm(&cols[j]);
            if n < 1e-6 {
                ok = false;
                break;
            }
            for x in &mut cols[j] {
                *x /= n;
            }
        }
        if ok {
            return Mat::from_fn(d, d, |i, j| cols[j][i]);
        }
    }
}

/// Result of a thin SVD: `m = u * diag(s) * v^T` with `r = min(rows, cols)`
/// columns in `u` and `v`, singular values descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// Thin SVD via one-sided Jacobi (Hestenes) rotations.
///
/// Column pairs of the working matrix are rotated until mutually orthogonal,
/// which diagonalizes the Gram matrix implicitly. Deterministic for a fixed
/// input: fixed sweep order and a fixed sign convention (largest-magnitude
/// entry of each left singular vector is non-negative).
pub fn svd(m: &Mat) -> Result<Svd, MatError> {
    if let Some((row, col)) = m.find_non_finite() {
        return Err(MatError::NonFinite { row, col });
    }
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn svd_tall(m: &Mat) -> Result<Svd, MatError> {
    let n = m.rows;
    let k = m.cols;
    if k == 0 || n == 0 {
        return Ok(Svd {
            u: Mat::zeros(n, k.min(n)),
            s: vec![],
            v: Mat::zeros(k, k.min(n)),
        });
    }

    // Column-major copies so column rotations touch contiguous memory.
    let mut b: Vec<Vec<f64>> = (0..k).map(|j| (0..n).map(|i| m.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut col = vec![0.0; k];
            col[j] = 1.0;
            col
        })
        .collect();

    let tol = 1e-15;
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = dot(&b[p], &b[p]);
                let beta = dot(&b[q], &b[q]);
                let gamma = dot(&b[p], &b[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut b, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values are the column norms; sort descending.
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = b.iter().map(|col| norm(col)).collect();
    order.sort_by(|&a, &c| norms[c].partial_cmp(&norms[a]).unwrap().then(a.cmp(&c)));

    let mut u = Mat::zeros(n, k);
    let mut vout = Mat::zeros(k, k);
    let mut s = vec![0.0; k];
    let scale = norms.iter().cloned().fold(0.0_f64, f64::max);
    for (out_j, &j) in order.iter().enumerate() {
        s[out_j] = norms[j];
        if norms[j] > scale * 1e-300 && norms[j] > 0.0 {
            for i in 0..n {
                u.set(i, out_j, b[j][i] / norms[j]);
            }
        }
        for i in 0..k {
            vout.set(i, out_j, v[j][i]);
        }
    }

    // Zero (or numerically dead) columns of u: complete to an orthonormal
    // basis so callers can rely on u^T u = I.
    complete_orthonormal(&mut u, &s, scale);

    // Sign convention: largest-magnitude entry of each u column non-negative.
    for j in 0..k {
        let mut best = 0.0_f64;
        let mut sign = 1.0_f64;
        for i in 0..n {
            let val = u.get(i, j);
            if val.abs() > best {
                best = val.abs();
                sign = val.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..n {
                let val = u.get(i, j);
                u.set(i, j, -val);
            }
            for i in 0..k {
                let val = vout.get(i, j);
                vout.set(i, j, -val);
            }
        }
    }

    Ok(Svd { u, s, v: vout })
}

fn rotate_cols(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    // Split borrow: p < q always holds here.
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let new_p = c * *xp - s * *xq;
        let new_q = s * *xp + c * *xq;
        *xp = new_p;
        *xq = new_q;
    }
}

/// Replace dead columns of `u` with vectors orthonormal to the live ones.
/// Uses deterministic unit-basis candidates with Gram-Schmidt.
fn complete_orthonormal(u: &mut Mat, s: &[f64], scale: f64) {
    let n = u.rows();
    let k = u.cols();
    for j in 0..k {
        if s[j] > scale * 1e-300 && s[j] > 0.0 {
            continue;
        }
        // Try each standard basis vector until one survives projection.
        'candidates: for cand in 0..n {
            let mut col = vec![0.0; n];
            col[cand] = 1.0;
            for prev in 0..k {
                if prev == j {
                    continue;
                }
                let mut proj = 0.0;
                for i in 0..n {
                    proj += u.get(i, prev) * col[i];
                }
                for (i, item) in col.iter_mut().enumerate() {
                    *item -= proj * u.get(i, prev);
                }
            }
            let nrm = norm(&col);
            if nrm > 1e-6 {
                for (i, item) in col.iter().enumerate() {
                    u.set(i, j, item / nrm);
                }
                break 'candidates;
            }
        }
    }
}
