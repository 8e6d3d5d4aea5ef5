//! Small dense matrices and the handful of factorizations the cocycle
//! pipelines need: thin QR (Lyapunov re-orthonormalization), one-sided
//! Jacobi singular values (operator norms, conditioning), Gauss-Jordan
//! inversion and a closed-form 3×3 real eigen solver.
//!
//! Matrices here are at most a few dozen entries, so everything is plain
//! row-major `Vec` storage without blocking.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics when the length is wrong.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[T]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has the wrong length");
        Matrix { rows, cols, data: data.to_vec() }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[T]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Thin QR of an m×k matrix (m ≥ k) by modified Gram-Schmidt with one
    /// re-orthogonalization pass. `R` has a non-negative diagonal. A column
    /// that is numerically dependent gets `R[j][j] = 0` and an arbitrary unit
    /// completion in `Q`.
    pub fn qr(&self) -> (Matrix<T>, Matrix<T>) {
        let (m, k) = (self.rows, self.cols);
        assert!(m >= k, "thin QR needs rows >= cols");
        let mut q = Matrix::zeros(m, k);
        let mut r = Matrix::zeros(k, k);
        let mut v = vec![T::zero(); m];
        for j in 0..k {
            for i in 0..m {
                v[i] = self[(i, j)];
            }
            let original = v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
            for _ in 0..2 {
                for p in 0..j {
                    let dot = (0..m).fold(T::zero(), |a, i| a + q[(i, p)] * v[i]);
                    r[(p, j)] += dot;
                    for i in 0..m {
                        v[i] -= dot * q[(i, p)];
                    }
                }
            }
            let norm = v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
            if norm > original * T::epsilon() * T::lit(16.0) && norm > T::min_positive_value() {
                r[(j, j)] = norm;
                for i in 0..m {
                    q[(i, j)] = v[i] / norm;
                }
            } else {
                r[(j, j)] = T::zero();
                let fill = orthogonal_completion(&q, j);
                q.set_column(j, &fill);
            }
        }
        (q, r)
    }

    /// Singular values in descending order (one-sided Jacobi).
    pub fn singular_values(&self) -> Vec<T> {
        let a = if self.rows >= self.cols { self.clone() } else { self.transpose() };
        let (sigma, _) = jacobi_svd(a, false);
        sigma
    }

    /// Singular values (descending) and the matching right singular vectors
    /// as the columns of `V`.
    pub fn svd_right(&self) -> (Vec<T>, Matrix<T>) {
        assert!(self.rows >= self.cols, "svd_right expects rows >= cols");
        let (sigma, v) = jacobi_svd(self.clone(), true);
        (sigma, v.expect("requested"))
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> T {
        self.singular_values().first().copied().unwrap_or_else(T::zero)
    }

    /// ‖A‖·‖A⁻¹‖ in the spectral norm; infinite for singular matrices.
    pub fn condition_number(&self) -> T {
        let s = self.singular_values();
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if lo > T::zero() => hi / lo,
            _ => T::infinity(),
        }
    }

    /// Determinant by partial-pivoting LU.
    pub fn det(&self) -> T {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut det = T::one();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[(i, c)].abs().partial_cmp(&a[(j, c)].abs()).unwrap())
                .unwrap();
            if a[(p, c)] == T::zero() {
                return T::zero();
            }
            if p != c {
                a.swap_rows(p, c);
                det = -det;
            }
            det *= a[(c, c)];
            for i in c + 1..n {
                let f = a[(i, c)] / a[(c, c)];
                for j in c..n {
                    let v = a[(c, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        det
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix<T>> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        let scale = self.max_abs();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[(i, c)].abs().partial_cmp(&a[(j, c)].abs()).unwrap())
                .unwrap();
            if a[(p, c)].abs() <= scale * T::epsilon() {
                return Err(Error::SingularMatrix { condition: f64::INFINITY });
            }
            a.swap_rows(p, c);
            inv.swap_rows(p, c);
            let pivot = a[(c, c)];
            for j in 0..n {
                a[(c, j)] /= pivot;
                inv[(c, j)] /= pivot;
            }
            for i in 0..n {
                if i == c {
                    continue;
                }
                let f = a[(i, c)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let (av, iv) = (a[(c, j)], inv[(c, j)]);
                    a[(i, j)] -= f * av;
                    inv[(i, j)] -= f * iv;
                }
            }
        }
        Ok(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    /// Real 2n×2n representation `[[Re, -Im], [Im, Re]]` of the complex
    /// matrix `re + i·im`.
    pub fn realify(re: &Matrix<T>, im: &Matrix<T>) -> Matrix<T> {
        assert_eq!((re.rows, re.cols), (im.rows, im.cols));
        let (r, c) = (re.rows, re.cols);
        let mut out = Matrix::zeros(2 * r, 2 * c);
        for i in 0..r {
            for j in 0..c {
                out[(i, j)] = re[(i, j)];
                out[(i + r, j + c)] = re[(i, j)];
                out[(i, j + c)] = -im[(i, j)];
                out[(i + r, j)] = im[(i, j)];
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }
}

fn orthogonal_completion<T: Real>(q: &Matrix<T>, filled: usize) -> Vec<T> {
    let m = q.rows();
    for e in 0..m {
        let mut v = vec![T::zero(); m];
        v[e] = T::one();
        for _ in 0..2 {
            for p in 0..filled {
                let dot = (0..m).fold(T::zero(), |a, i| a + q[(i, p)] * v[i]);
                for i in 0..m {
                    v[i] -= dot * q[(i, p)];
                }
            }
        }
        let n = v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
        if n > T::lit(0.5) {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
    unreachable!("a unit vector orthogonal to fewer than m columns always exists")
}

fn jacobi_svd<T: Real>(mut a: Matrix<T>, want_v: bool) -> (Vec<T>, Option<Matrix<T>>) {
    let (m, n) = (a.rows, a.cols);
    let mut v = want_v.then(|| Matrix::identity(n));
    let tol = T::epsilon() * T::lit(4.0);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for i in 0..m {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                if let Some(v) = v.as_mut() {
                    for i in 0..n {
                        let (x, y) = (v[(i, p)], v[(i, q)]);
                        v[(i, p)] = c * x - s * y;
                        v[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(T, usize)> = (0..n)
        .map(|j| ((0..m).fold(T::zero(), |acc, i| acc + a[(i, j)] * a[(i, j)]).sqrt(), j))
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
    let sigma = pairs.iter().map(|p| p.0).collect();
    let v = v.map(|v| Matrix::from_fn(n, n, |i, j| v[(i, pairs[j].1)]));
    (sigma, v)
}

/// Real eigenvalues of a 3×3 matrix, ascending. Solves the characteristic
/// cubic in closed form and polishes each root with Newton steps.
pub fn real_eigenvalues_3x3<T: Real>(m: &Matrix<T>) -> Result<[T; 3]> {
    if m.rows() != 3 || m.cols() != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3x3, got {}x{}", m.rows(), m.cols())));
    }
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m.det();
    // λ³ + a λ² + b λ + c
    let (a, b, c) = (-tr, minors, -det);
    let three = T::lit(3.0);
    let shift = a / three;
    let p = b - a * a / three;
    let q = T::lit(2.0) * a * a * a / T::lit(27.0) - a * b / three + c;
    let scale = T::one() + m.max_abs();
    let disc = q * q / T::lit(4.0) + p * p * p / T::lit(27.0);
    if disc > T::lit(1e3) * T::epsilon() * scale.powi(6) {
        return Err(Error::ComplexSpectrum);
    }
    let mut roots = if p.abs() <= T::epsilon() * scale * scale {
        let r = (-q).cbrt();
        [r, r, r]
    } else {
        let mag = T::lit(2.0) * (-p / three).max(T::zero()).sqrt();
        let arg = (three * q / (T::lit(2.0) * p) * (-three / p).max(T::zero()).sqrt())
            .max(-T::one())
            .min(T::one());
        let phi = arg.acos() / three;
        let two_pi_3 = T::lit(2.0) * T::PI() / three;
        [
            mag * phi.cos(),
            mag * (phi - two_pi_3).cos(),
            mag * (phi - T::lit(2.0) * two_pi_3).cos(),
        ]
    };
    for r in roots.iter_mut() {
        *r = *r - shift;
        for _ in 0..3 {
            let f = ((*r + a) * *r + b) * *r + c;
            let df = (three * *r + T::lit(2.0) * a) * *r + b;
            if df == T::zero() {
                break;
            }
            let step = f / df;
            if !step.is_finite() {
                break;
            }
            *r = *r - step;
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(roots)
}

/// Serialized as a list of rows.
impl<T: Serialize> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[T]> = self.data.chunks(self.cols.max(1)).collect();
        rows.serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<T>> = Vec::deserialize(d)?;
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        let n = rows.len();
        Ok(Matrix { rows: n, cols, data: rows.into_iter().flatten().collect() })
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl<T: Real> Add for &Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

/// `out = a · b` for row-major square blocks of side `n`, without allocating.
#[inline]
pub(crate) fn matmul_into<T: Real>(n: usize, a: &[T], b: &[T], cols: usize, out: &mut [T]) {
    for i in 0..n {
        for j in 0..cols {
            let mut acc = T::zero();
            for k in 0..n {
                acc += a[i * n + k] * b[k * cols + j];
            }
            out[i * cols + j] = acc;
        }
    }
}
