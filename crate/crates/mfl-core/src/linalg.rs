//! Small dense matrices for the fast-process and cell-problem algebra.
//!
//! Dimensions here are the model dimensions (a handful at most), so plain
//! row-major storage with textbook algorithms is all that is needed: LU with
//! partial pivoting, Cholesky, cyclic Jacobi for symmetric eigenproblems,
//! scaling-and-squaring for the matrix exponential and a Kronecker-product
//! Lyapunov solve.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn scalar(x: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn diag(entries: &[T]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        let mut out = vec![T::zero(); self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        assert_eq!(self.cols, v.len());
        assert_eq!(self.rows, out.len());
        for i in 0..self.rows {
            let mut acc = T::zero();
            for j in 0..self.cols {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: T) -> Self {
        let data = self.data.iter().map(|&a| a * s).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    /// Solve `self * x = b` by LU with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        assert!(self.is_square());
        let n = self.rows;
        assert_eq!(b.len(), n);
        let mut a = self.data.clone();
        let mut x: Vec<T> = b.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[perm[col] * n + col].abs();
            for r in col + 1..n {
                let v = a[perm[r] * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::SingularMatrix("lu solve"));
            }
            perm.swap(col, piv);
            let prow = perm[col];
            for r in col + 1..n {
                let row = perm[r];
                let factor = a[row * n + col] / a[prow * n + col];
                a[row * n + col] = factor;
                for c in col + 1..n {
                    let v = a[prow * n + c];
                    a[row * n + c] = a[row * n + c] - factor * v;
                }
            }
        }
        // forward substitution on permuted rows
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = x[perm[i]];
            for j in 0..i {
                acc = acc - a[perm[i] * n + j] * y[j];
            }
            y[i] = acc;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc = acc - a[perm[i] * n + j] * x[j];
            }
            x[i] = acc / a[perm[i] * n + i];
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Self> {
        assert!(self.is_square());
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e)?;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
            e[j] = T::zero();
        }
        Ok(out)
    }

    /// Lower Cholesky factor; `jitter` is added to the diagonal on a first
    /// failure before giving up.
    pub fn cholesky(&self, jitter: T) -> Result<Self> {
        match self.cholesky_once() {
            Ok(l) => Ok(l),
            Err(_) if jitter > T::zero() => {
                let mut bumped = self.clone();
                for i in 0..self.rows {
                    bumped[(i, i)] += jitter;
                }
                bumped.cholesky_once()
            }
            Err(e) => Err(e),
        }
    }

    fn cholesky_once(&self) -> Result<Self> {
        assert!(self.is_square());
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = self[(i, j)];
                for k in 0..j {
                    acc = acc - l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if acc <= T::zero() || !acc.is_finite() {
                        return Err(Error::NotPositiveDefinite(format!(
                            "pivot {acc} at row {i}"
                        )));
                    }
                    l[(i, i)] = acc.sqrt();
                } else {
                    l[(i, j)] = acc / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns `(eigenvalues, eigenvectors)` with columns of the second as
    /// eigenvectors, sorted ascending.
    pub fn sym_eigen(&self) -> (Vec<T>, Self) {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Self::identity(n);
        let tol = T::of(1e-14);
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in i + 1..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= tol * (T::one() + a.frobenius_norm()) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::of(2.0) * apq);
                    let t = {
                        let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                        sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                    };
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
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
        let eigenvalues: Vec<T> = idx.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n, n);
        for (new_col, &old_col) in idx.iter().enumerate() {
            for r in 0..n {
                vectors[(r, new_col)] = v[(r, old_col)];
            }
        }
        (eigenvalues, vectors)
    }

    /// Symmetric PSD square root with eigenvalue clamping. Returns the root
    /// and the total clamped (negative) mass.
    pub fn psd_sqrt(&self) -> (Self, T) {
        let (vals, vecs) = self.sym_eigen();
        let mut clamped = T::zero();
        let roots: Vec<T> = vals
            .iter()
            .map(|&l| {
                if l < T::zero() {
                    clamped += -l;
                    T::zero()
                } else {
                    l.sqrt()
                }
            })
            .collect();
        let mut scaled = vecs.clone();
        for j in 0..self.rows {
            for i in 0..self.rows {
                scaled[(i, j)] = vecs[(i, j)] * roots[j];
            }
        }
        (scaled.matmul(&vecs.transpose()), clamped)
    }

    /// Matrix exponential by scaling and squaring with a Taylor core.
    pub fn expm(&self) -> Self {
        assert!(self.is_square());
        let n = self.rows;
        let norm = self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs())) * T::of_usize(n);
        let mut squarings = 0u32;
        let mut scale = T::one();
        let mut nrm = norm;
        while nrm > T::of(0.5) && squarings < 64 {
            nrm = nrm / T::of(2.0);
            scale = scale / T::of(2.0);
            squarings += 1;
        }
        let a = self.scale(scale);
        let mut result = Self::identity(n);
        let mut term = Self::identity(n);
        for k in 1..=24 {
            term = term.matmul(&a).scale(T::one() / T::of_usize(k));
            result = result.add(&term);
            if term.max_abs() < T::of(1e-18) {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.matmul(&result);
        }
        result
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Solve the continuous Lyapunov equation `A X + X Aᵀ = Q` via the
/// Kronecker-product linear system.
pub fn solve_lyapunov<T: Scalar>(a: &Mat<T>, q: &Mat<T>) -> Result<Mat<T>> {
    assert!(a.is_square() && q.is_square());
    let n = a.rows();
    assert_eq!(q.rows(), n);
    // (I ⊗ A + A ⊗ I) vec(X) = vec(Q), vec stacking columns
    let mut k = Mat::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                // I ⊗ A: block (j, j) holds A
                k[(j * n + i, j * n + l)] += a[(i, l)];
                // A ⊗ I: entry couples column blocks through Aᵀ on the right
                k[(j * n + i, l * n + i)] += a[(j, l)];
            }
        }
    }
    let mut rhs = vec![T::zero(); n * n];
    for j in 0..n {
        for i in 0..n {
            rhs[j * n + i] = q[(i, j)];
        }
    }
    let x = k.solve(&rhs)?;
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] = x[j * n + i];
        }
    }
    // symmetrize: Q symmetric forces a symmetric solution up to rounding
    Ok(out.add(&out.transpose()).scale(T::of(0.5)))
}

/// Check positive stability (all eigenvalues in the right half-plane) via the
/// Lyapunov criterion: `A` is positive stable iff `A X + X Aᵀ = I` has a
/// symmetric positive-definite solution.
pub fn is_positive_stable<T: Scalar>(a: &Mat<T>) -> bool {
    let n = a.rows();
    match solve_lyapunov(a, &Mat::identity(n)) {
        Ok(x) => {
            let (vals, _) = x.sym_eigen();
            vals.iter().all(|&l| l > T::zero())
        }
        Err(_) => false,
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
