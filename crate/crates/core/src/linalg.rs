//! Dense row-major matrices and small 3-vector helpers.

use crate::scalar::Scalar;

pub type Vec3<T> = [T; 3];

#[inline]
pub fn dot<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn add<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Scalar>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm<T: Scalar>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    let d = sub(a, b);
    dot(d, d)
}

/// Unit vector along `a`, or `None` when `a` has zero length.
pub fn normalized<T: Scalar>(a: Vec3<T>) -> Option<Vec3<T>> {
    let n = norm(a);
    if n > T::zero() && n.is_finite() {
        Some(scale(a, T::one() / n))
    } else {
        None
    }
}

pub fn cast3<A: Scalar, B: Scalar>(a: Vec3<A>) -> Vec3<B> {
    [
        B::lit(a[0].to_f64_lossy()),
        B::lit(a[1].to_f64_lossy()),
        B::lit(a[2].to_f64_lossy()),
    ]
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    /// # Panics
    /// When `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_points(points: &[Vec3<T>]) -> Self {
        let data = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::from_vec(points.len(), 3, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled_add_assign(&mut self, s: T, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "scaled_add shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self * other^T`: (r x k) * (n x k)^T -> r x n.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Self::zeros(self.rows, other.rows);
        T::gemm(
            self.rows,
            self.cols,
            other.rows,
            T::one(),
            &self.data,
            false,
            &other.data,
            true,
            T::zero(),
            &mut out.data,
        );
        out
    }

    /// `self * other`: (r x k) * (k x n) -> r x n.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        T::gemm(
            self.rows,
            self.cols,
            other.cols,
            T::one(),
            &self.data,
            false,
            &other.data,
            false,
            T::zero(),
            &mut out.data,
        );
        out
    }

    /// `self^T * other`: (k x r)^T * (k x n) -> r x n.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Self::zeros(self.cols, other.cols);
        T::gemm(
            self.cols,
            self.rows,
            other.cols,
            T::one(),
            &self.data,
            true,
            &other.data,
            false,
            T::zero(),
            &mut out.data,
        );
        out
    }

    /// Adds the `1 x cols` row vector `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &Self) {
        assert_eq!(bias.rows, 1);
        assert_eq!(bias.cols, self.cols, "bias width");
        for row in self.data.chunks_mut(self.cols) {
            for (a, &b) in row.iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn column_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for row in self.data.chunks(self.cols.max(1)) {
            for (a, &b) in out.data.iter_mut().zip(row) {
                *a += b;
            }
        }
        out
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hconcat(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "hconcat row mismatch");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Self::from_vec(self.rows, cols, data)
    }

    /// Contiguous block of rows.
    pub fn row_block(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.rows, "row block out of range");
        Self::from_vec(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        )
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
