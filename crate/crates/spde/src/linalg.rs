//! Small dense linear algebra: row-major matrices, a PSD-tolerant Cholesky
//! with an escalating jitter policy, triangular solves and a Jacobi
//! eigenvalue sweep for diagnostics.
//!
//! The matrices here are mode-space covariance matrices (a few hundred rows
//! at most), so simple O(n³) routines are adequate.

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// `out = A·x` restricted to the first `n_rows` rows.
    pub fn matvec_rows(&self, x: &[T], out: &mut [T], n_rows: usize) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert!(n_rows <= self.rows && out.len() >= n_rows);
        for i in 0..n_rows {
            let row = self.row(i);
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x.iter()) {
                acc += *a * *b;
            }
            out[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        self.matvec_rows(x, out, self.rows);
    }

    /// `out += A·x` using only the lower triangle (A assumed lower triangular),
    /// restricted to the first `n_rows` rows.
    pub fn lower_matvec_add_rows(&self, x: &[T], out: &mut [T], n_rows: usize) {
        debug_assert_eq!(self.rows, self.cols);
        for i in 0..n_rows {
            let row = &self.row(i)[..=i];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x.iter()) {
                acc += *a * *b;
            }
            out[i] += acc;
        }
    }

    /// Replace `A` by `(A + Aᵀ)/2`, making symmetry exact.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let s = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = s;
                self[(j, i)] = s;
            }
        }
    }

    /// Max absolute asymmetry `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `A·Aᵀ` (used to check Cholesky reconstructions).
    pub fn times_transpose(&self) -> Matrix<T> {
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc += self[(i, k)] * self[(j, k)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Strict lower Cholesky: `L·Lᵀ = A`. Fails on a non-positive pivot.
pub fn cholesky_lower<T: Real>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d <= T::zero() || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Jitter escalation used for nearly-semidefinite covariance matrices:
/// try 0, then `1e-14·max|A|`, multiplying by 10 up to `1e-8·max|A|`.
pub fn cholesky_with_jitter<T: Real>(a: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    let n = a.rows();
    let scale = a.max_abs();
    if scale == T::zero() {
        // The zero matrix factors as L = 0.
        return Ok((Matrix::zeros(n, n), T::zero()));
    }
    let mut jitter = T::zero();
    loop {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(l) = cholesky_lower(&shifted) {
            return Ok((l, jitter));
        }
        jitter = if jitter == T::zero() {
            T::lit(1e-14) * scale
        } else {
            jitter * T::lit(10.0)
        };
        if jitter > T::lit(1e-8) * scale {
            let min_ev = symmetric_eigenvalues(a)
                .into_iter()
                .fold(f64::INFINITY, |m, v| m.min(v.to_f64().unwrap_or(f64::NAN)));
            return Err(Error::Factorization {
                min_eigenvalue: min_ev,
                ceiling: (T::lit(1e-8) * scale).to_f64().unwrap_or(f64::NAN),
            });
        }
    }
}

/// Solve `L·x = b` for lower-triangular `L` in place.
pub fn forward_solve<T: Real>(l: &Matrix<T>, b: &mut [T]) {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[(i, k)] * b[k];
        }
        let d = l[(i, i)];
        // Zero pivots only occur for exactly singular inputs whose right-hand
        // side vanishes in the same direction.
        b[i] = if d == T::zero() { T::zero() } else { s / d };
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn symmetric_eigenvalues<T: Real>(a: &Matrix<T>) -> Vec<T> {
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize();
    let tol = T::lit(1e-14) * m.max_abs().max(T::one());
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = {
                    let sign = if theta >= T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_identity_is_identity() {
        let (l, jitter) = cholesky_with_jitter::<f64>(&Matrix::identity(4)).unwrap();
        assert_eq!(jitter, 0.0);
        assert_eq!(l, Matrix::identity(4));
    }

    #[test]
    fn cholesky_2x2_closed_form() {
        let a = Matrix::<f64>::from_rows(vec![vec![1.0, 0.5], vec![0.5, 1.0]]);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert_eq!(jitter, 0.0);
        assert!((l[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_zero_matrix() {
        let (l, jitter) = cholesky_with_jitter::<f64>(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(jitter, 0.0);
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_matrix_reports_most_negative_eigenvalue() {
        // Eigenvalues 3 and -1.
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        match cholesky_with_jitter(&a) {
            Err(Error::Factorization { min_eigenvalue, .. }) => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-10);
            }
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn forward_solve_roundtrip() {
        let a = Matrix::<f64>::from_rows(vec![
            vec![4.0, 1.0, 0.2],
            vec![1.0, 3.0, 0.5],
            vec![0.2, 0.5, 2.0],
        ]);
        let (l, _) = cholesky_with_jitter(&a).unwrap();
        let x = [1.0f64, -2.0, 0.5];
        let mut b = [0.0; 3];
        l.matvec(&x, &mut b);
        forward_solve(&l, &mut b);
        for (got, want) in b.iter().zip(x.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues_match_hand_computation() {
        let a = Matrix::<f64>::from_rows(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        let mut ev = symmetric_eigenvalues(&a);
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((ev[0] - 1.0).abs() < 1e-10);
        assert!((ev[1] - 3.0).abs() < 1e-10);
    }
}
