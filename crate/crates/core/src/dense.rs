//! Dense row-major matrices and the scalar kernels shared by the engine.
//!
//! Everything numeric in the crate runs on [`Mat`]: augmenter and encoder
//! weights, feature matrices, embeddings, and the buffers recorded on the
//! autodiff tape. Kernels use fixed loop orders so results are bitwise
//! reproducible for a given build.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Element type of the engine: `f32` for training, `f64` for verification.
pub trait Scalar: Float + Debug + Default + Sum + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Dense matrix, row-major.
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

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
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

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Bytes held by the value buffer.
    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<T>()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat<T>, f: impl Fn(T, T) -> T) -> Mat<T> {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Mat {
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

    pub fn transpose(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimensions");
        let (m, kd, n) = (self.rows, self.cols, rhs.cols);
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * kd..(i + 1) * kd];
            let orow = &mut data[i * n..(i + 1) * n];
            for (k, &a) in arow.iter().enumerate() {
                let brow = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        Mat {
            rows: m,
            cols: n,
            data,
        }
    }

    /// `self * rhsᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, rhs.cols, "matmul_nt inner dimensions");
        let (m, kd, n) = (self.rows, self.cols, rhs.rows);
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * kd..(i + 1) * kd];
            let orow = &mut data[i * n..(i + 1) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = &rhs.data[j * kd..(j + 1) * kd];
                let mut acc = T::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    acc = acc + a * b;
                }
                *o = acc;
            }
        }
        Mat {
            rows: m,
            cols: n,
            data,
        }
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.rows, rhs.rows, "matmul_tn inner dimensions");
        let (kd, m, n) = (self.rows, self.cols, rhs.cols);
        let mut data = vec![T::zero(); m * n];
        for k in 0..kd {
            let arow = &self.data[k * m..(k + 1) * m];
            let brow = &rhs.data[k * n..(k + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                let orow = &mut data[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        Mat {
            rows: m,
            cols: n,
            data,
        }
    }

    pub fn add(&self, rhs: &Mat<T>) -> Mat<T> {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Mat<T>) -> Mat<T> {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn add_assign(&mut self, rhs: &Mat<T>) {
        assert_eq!(self.shape(), rhs.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&self, c: T) -> Mat<T> {
        self.map(|v| v * c)
    }

    /// Frobenius norm, accumulated in `f64`.
    pub fn frob_norm(&self) -> T {
        let s: f64 = self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum();
        T::from_f64(s.sqrt())
    }

    pub fn to_precision<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Gather the listed rows into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Mat<T> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Stable rank of a matrix: squared Frobenius norm over squared spectral norm.
///
/// A smooth proxy for rank used to detect embedding collapse. The spectral
/// norm comes from deterministic power iteration on the Gram matrix, so the
/// value is reproducible for a fixed input.
pub fn stable_rank<T: Scalar>(z: &Mat<T>) -> f64 {
    let zf = z.to_precision::<f64>();
    let gram = zf.matmul_tn(&zf);
    let n = gram.rows();
    if n == 0 {
        return 0.0;
    }
    let trace: f64 = (0..n).map(|i| gram.get(i, i)).sum();
    if trace <= 0.0 {
        return 0.0;
    }
    // Power iteration; the slight index-dependent tilt keeps the start vector
    // out of any exact eigen-orthogonality.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * i as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..300 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let grow = gram.row(i);
            w[i] = grow.iter().zip(&v).map(|(&g, &x)| g * x).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in &mut w {
            *x /= norm;
        }
        lambda = norm;
        v = w;
    }
    trace / lambda
}
