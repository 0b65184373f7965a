//! Small dense linear algebra: a row-major matrix, Gaussian elimination with partial
//! pivoting, Cholesky, Householder QR with a null-space basis, and cyclic Jacobi for
//! symmetric eigenproblems. Sizes in this crate stay in the hundreds, so everything is
//! `O(n^3)` on plain `Vec`s.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::LengthMismatch {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
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

    pub fn matmul(&self, other: &Mat<T>) -> Result<Mat<T>> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`.
    pub fn tmatvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows, "tmatvec dimension");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat<T>) -> Result<Mat<T>> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("matrix difference shapes differ".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.data)
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows.min(self.cols) {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> Mat<T> {
    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

impl<T: Scalar + Serialize> Serialize for Mat<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Mat<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        Mat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Solves `A x = b` by Gaussian elimination with partial (row) pivoting.
pub fn solve_gepp<T: Scalar>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(Error::Dimension(format!(
            "solve: {}x{} with rhs {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(T::min_positive_value());
    let tiny = scale * T::epsilon() * T::from_usize_lossy(n.max(1));
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, m[(i, k)].abs()))
            .fold(
                (k, T::zero()),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if !(pivot > tiny) {
            return Err(Error::Singular(k));
        }
        if p != k {
            for j in 0..n {
                m.data.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        let inv = T::one() / m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] * inv;
            if f == T::zero() {
                continue;
            }
            m[(i, k)] = T::zero();
            let (upper, lower) = m.data.split_at_mut(i * n);
            let pivot_row = &upper[k * n + k + 1..k * n + n];
            for (dst, &src) in lower[k + 1..n].iter_mut().zip(pivot_row) {
                *dst -= f * src;
            }
            let xk = x[k];
            x[i] -= f * xk;
        }
    }
    for k in (0..n).rev() {
        let s = dot(&m.row(k)[k + 1..], &x[k + 1..]);
        x[k] = (x[k] - s) / m[(k, k)];
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix, or `None`
/// when a pivot is not safely positive.
pub fn cholesky<T: Scalar>(a: &Mat<T>) -> Option<Mat<T>> {
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    let floor = a.max_abs() * T::epsilon() * T::from_usize_lossy(n.max(1));
    for j in 0..n {
        let d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(d > floor) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the Cholesky factor.
pub fn cholesky_solve<T: Scalar>(l: &Mat<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &y[..i]);
        y[i] = (y[i] - s) / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = T::zero();
        for k in i + 1..n {
            s += l[(k, i)] * y[k];
        }
        y[i] = (y[i] - s) / l[(i, i)];
    }
    y
}

/// Orthonormal description of the affine set `{x : A x = c}`.
#[derive(Clone, Debug)]
pub struct AffineSubspace<T> {
    /// Minimum-norm point of the set.
    pub particular: Vec<T>,
    /// Columns form an orthonormal basis of `null(A)`; stored as `n x (n - rank)`.
    pub basis: Mat<T>,
}

/// Null-space basis and minimum-norm particular solution of `A x = c` from a Householder QR
/// of `A^T`. Fails when the rows of `A` are (numerically) dependent.
pub fn null_space<T: Scalar>(a: &Mat<T>, c: &[T]) -> Result<AffineSubspace<T>> {
    let (k, n) = (a.rows(), a.cols());
    if c.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            got: c.len(),
        });
    }
    if k > n {
        return Err(Error::DependentConstraints { rank: n, rows: k });
    }
    // Work on A^T (n x k); reflectors stored column-wise.
    let mut r = a.transpose();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(k);
    let scale = a.max_abs().max(T::min_positive_value());
    for j in 0..k {
        let mut v: Vec<T> = (j..n).map(|i| r[(i, j)]).collect();
        let alpha = norm2(&v);
        if !(alpha > scale * T::tol(1e-12)) {
            return Err(Error::DependentConstraints { rank: j, rows: k });
        }
        let sign = if v[0] >= T::zero() {
            T::one()
        } else {
            -T::one()
        };
        v[0] += sign * alpha;
        let vn = norm2(&v);
        v.iter_mut().for_each(|x| *x /= vn);
        for col in j..k {
            let s = (j..n).map(|i| v[i - j] * r[(i, col)]).sum::<T>() * T::lit(2.0);
            for i in j..n {
                r[(i, col)] -= s * v[i - j];
            }
        }
        reflectors.push(v);
    }
    // Q = H_0 H_1 ... H_{k-1}; apply to unit vectors to get columns of Q.
    let apply_q = |x: &mut Vec<T>| {
        for (j, v) in reflectors.iter().enumerate().rev() {
            let s = (j..n).map(|i| v[i - j] * x[i]).sum::<T>() * T::lit(2.0);
            for i in j..n {
                x[i] -= s * v[i - j];
            }
        }
    };
    let mut basis = Mat::zeros(n, n - k);
    for col in 0..n - k {
        let mut e = vec![T::zero(); n];
        e[k + col] = T::one();
        apply_q(&mut e);
        for i in 0..n {
            basis[(i, col)] = e[i];
        }
    }
    // A = R1^T Q1^T, so x0 = Q1 R1^{-T} c.
    let mut y = vec![T::zero(); n];
    for i in 0..k {
        let s: T = (0..i).map(|l| r[(l, i)] * y[l]).sum();
        y[i] = (c[i] - s) / r[(i, i)];
    }
    apply_q(&mut y);
    Ok(AffineSubspace {
        particular: y,
        basis,
    })
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Mat<T>,
    pub sweeps: usize,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is at most
/// `1e-12 * max(1, ||M||_F)`.
pub fn jacobi_eigen<T: Scalar>(m: &Mat<T>) -> Result<SymEigen<T>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigen of {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let asym = m.asymmetry();
    let sym_tol = T::tol(1e-10) * T::one().max(m.max_abs());
    if asym > sym_tol {
        return Err(Error::NotSymmetric(asym.as_f64()));
    }
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = (a[(i, j)] + a[(j, i)]) * T::lit(0.5);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Mat::identity(n);
    let frob = a.data.iter().map(|&x| x * x).sum::<T>().sqrt();
    let tol = T::tol(1e-12) * T::one().max(frob);
    let off = |a: &Mat<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > tol && sweeps < 100 {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
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
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .partial_cmp(&a[(j, j)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(m: &Mat<T>) -> Result<T> {
    if m.rows() == 0 {
        return Err(Error::Empty("matrix".into()));
    }
    Ok(jacobi_eigen(m)?.values[0])
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym<T: Scalar>(m: &Mat<T>) -> Result<T> {
    if m.rows() == 0 {
        return Ok(T::zero());
    }
    let e = jacobi_eigen(m)?;
    Ok(e.values.iter().fold(T::zero(), |acc, &x| acc.max(x.abs())))
}
