//! Small dense linear algebra: a row-major matrix, Cholesky factorization and
//! a cyclic Jacobi eigensolver.
//!
//! Every system solved in this crate is at most a few dozen columns wide (the
//! design has `d_t·d_x + p` columns), so plain cache-friendly loops beat the
//! overhead of a general-purpose backend.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: {rows}x{cols} needs {} values", rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "Mat::from_rows: ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Self {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec: dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self ⊗ other`, with the row index of `other` running fastest.
    pub fn kron(&self, other: &Mat) -> Self {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        let mut out = Self::zeros(r, c);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add: shape mismatch");
        axpy(s, &other.data, &mut self.data);
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Copies the leading `k × k` block.
    pub fn leading_block(&self, k: usize) -> Self {
        let mut out = Self::zeros(k, k);
        for i in 0..k {
            out.row_mut(i).copy_from_slice(&self.row(i)[..k]);
        }
        out
    }

    /// `vᵀ A v` for square `A`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        assert_eq!(self.rows, v.len());
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| v[i] * dot(self.row(i), v)).sum()
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += a·x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower-triangular Cholesky factor `S = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    /// Row-major lower triangle (upper part is zero).
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `s`. Fails when a pivot is not positive relative to the
    /// diagonal scale, which is how rank deficiency shows up in practice.
    pub fn factor(s: &Mat) -> Result<Self> {
        let n = s.rows();
        if s.cols() != n {
            return Err(Error::InvalidDimension(alloc::format!("Cholesky of a {}x{} matrix", n, s.cols())));
        }
        let scale = (0..n).fold(0.0_f64, |m, i| m.max(s[(i, i)].abs()));
        let tiny = scale * 1e-13;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let (done, rest) = l.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + j];
                row_i[j] = (s[(i, j)] - dot(&row_i[..j], row_j)) / done[j * n + j];
            }
            let d = s[(i, i)] - dot(&row_i[..i], &row_i[..i]);
            if !(d > tiny) {
                return Err(Error::Singular(alloc::format!(
                    "pivot {i} of {n} is {d:.3e} (diagonal scale {scale:.3e})"
                )));
            }
            row_i[i] = libm::sqrt(d);
        }
        Ok(Self { n, l })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> Mat {
        Mat::from_vec(self.n, self.n, self.l.clone())
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let xi = y[i] / self.l[i * n + i];
            y[i] = xi;
            for k in 0..i {
                y[k] -= self.l[i * n + k] * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    /// `L⁻¹` as a row-major lower triangle.
    fn lower_inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        for j in 0..n {
            inv[j * n + j] = 1.0 / self.l[j * n + j];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s += self.l[i * n + k] * inv[k * n + j];
                }
                inv[i * n + j] = -s / self.l[i * n + i];
            }
        }
        inv
    }

    /// `S⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> Mat {
        let n = self.n;
        let li = self.lower_inverse();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += li[k * n + i] * li[k * n + j];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// `tr(S⁻¹ A)` for symmetric `A`, without forming the product.
    pub fn trace_inverse_times(&self, a: &Mat) -> f64 {
        let inv = self.inverse();
        dot(inv.as_slice(), a.as_slice())
    }

    /// `log det S`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * libm::log(self.l[i * self.n + i])).sum()
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of the second matrix.
pub fn symmetric_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Mat::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if libm::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    (values, vectors)
}

/// Factor `F` with `F Fᵀ = V` for a numerically semi-definite `V`.
///
/// Eigenvalues down to `-rel_tol·‖V‖` are clipped to zero; anything more
/// negative is reported as an indefinite covariance. Columns belonging to
/// zero eigenvalues are dropped, so `F` may have fewer columns than rows.
pub fn psd_factor(v: &Mat, rel_tol: f64) -> Result<Mat> {
    let n = v.rows();
    let norm = v.frobenius_norm();
    let tol = rel_tol * norm;
    let (values, vectors) = symmetric_eigen(v);
    if let Some(&min) = values.last() {
        if min < -tol {
            return Err(Error::Covariance { min_eigenvalue: min, tolerance: -tol });
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&k| values[k] > tol && values[k] > 0.0).collect();
    let mut f = Mat::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let root = libm::sqrt(values[k]);
        for i in 0..n {
            f[(i, c)] = vectors[(i, k)] * root;
        }
    }
    Ok(f)
}

/// Numerical rank of a symmetric matrix: eigenvalues above `rel_tol·max|λ|`.
pub fn symmetric_rank(a: &Mat, rel_tol: f64) -> usize {
    let (values, _) = symmetric_eigen(a);
    let top = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    values.iter().filter(|v| v.abs() > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat {
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = 1.0 / (1.0 + (i + j) as f64) + if i == j { 1.0 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn cholesky_reconstructs_and_solves() {
        let a = spd(6);
        let ch = Cholesky::factor(&a).unwrap();
        let l = ch.lower();
        let back = l.matmul(&l.transpose());
        for (x, y) in back.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-13);
        }
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let x = ch.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let inv = ch.inverse();
        let id = inv.matmul(&a);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-11);
            }
        }
        assert!((ch.trace_inverse_times(&a) - 6.0).abs() < 1e-11);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(Cholesky::factor(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = spd(5);
        let (vals, vecs) = symmetric_eigen(&a);
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let mut d = Mat::zeros(5, 5);
        for i in 0..5 {
            d[(i, i)] = vals[i];
        }
        let back = vecs.matmul(&d).matmul(&vecs.transpose());
        for (x, y) in back.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_factor_clips_and_rejects() {
        let v = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = psd_factor(&v, 1e-10).unwrap();
        assert_eq!(f.cols(), 1);
        let back = f.matmul(&f.transpose());
        for (x, y) in back.as_slice().iter().zip(v.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        let bad = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -0.5]]);
        assert!(matches!(psd_factor(&bad, 1e-10), Err(Error::Covariance { .. })));
        let zero = psd_factor(&Mat::zeros(3, 3), 1e-10).unwrap();
        assert_eq!(zero.cols(), 0);
    }

    #[test]
    fn kron_orders_right_factor_fastest() {
        let a = Mat::from_rows(&[vec![1.0, 2.0]]);
        let b = Mat::from_rows(&[vec![1.0], vec![10.0]]);
        let k = a.kron(&b);
        assert_eq!(k.as_slice(), &[1.0, 2.0, 10.0, 20.0]);
    }
}
