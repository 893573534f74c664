//! Dense real and integer tensor kernels.
//!
//! Real arithmetic is `f64` throughout. Matrices are row-major. Quantized
//! tensors keep one scale per row ("channel") and are bit-packed only for
//! storage; kernels work on the unpacked `i8` values.

mod bitpack;
mod quant;
mod svd;

pub use bitpack::{pack_bits, unpack_bits, BitPackedBuffer};
pub use quant::{
    candidate_scale, check_bitwidth, qmax, quantize_row_mse, quantize_with_scale,
    reconstruction_mse, QuantizedTensor, SCALE_CANDIDATES,
};
pub use svd::{truncated_svd, truncated_svd_with, Svd};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng::SeededRng;

/// Column tile used by the batched product; 512 doubles keep one row of the
/// right operand in L1 while the output tile stays in L2.
const COL_TILE: usize = 512;
/// Rows of the left operand handled per worker.
const ROW_BLOCK: usize = 32;

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Build without the finiteness scan; callers guarantee finite values.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Keep the first `keep` columns.
    pub fn leading_cols(&self, keep: usize) -> Self {
        let keep = keep.min(self.cols);
        let mut data = Vec::with_capacity(self.rows * keep);
        for row in self.row_iter() {
            data.extend_from_slice(&row[..keep]);
        }
        Self::from_raw(self.rows, keep, data)
    }

    /// Keep the first `keep` rows.
    pub fn leading_rows(&self, keep: usize) -> Self {
        let keep = keep.min(self.rows);
        Self::from_raw(keep, self.cols, self.data[..keep * self.cols].to_vec())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(idx.len(), self.cols, data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn scale_rows(&mut self, factors: &[f64]) {
        for (i, &f) in factors.iter().enumerate() {
            self.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
    }

    /// `self · other`, with the inner loop over contiguous rows of `other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(Exec::default(), self, other))
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("shape mismatch in subtraction"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data)?;
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Standard normal matrix from the documented [`SeededRng`] stream, filled row-major.
pub fn gen_gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim(format!(
            "gaussian matrix needs nonzero dimensions, got {rows}x{cols}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Ok(DenseMatrix::from_raw(rows, cols, data))
}

/// `M · v`.
pub fn matvec(m: &DenseMatrix, v: &DenseVector) -> Result<DenseVector> {
    if m.cols != v.dim() {
        return Err(Error::dim(format!(
            "matvec: matrix has {} columns, vector has {} entries",
            m.cols,
            v.dim()
        )));
    }
    Ok(DenseVector(
        m.row_iter().map(|row| dot(row, v.as_slice())).collect(),
    ))
}

/// `vᵀ · M` (equivalently `Mᵀ · v`), accumulated row by row of `M`.
pub fn vecmat(v: &[f64], m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows != v.len() {
        return Err(Error::dim(format!(
            "vecmat: vector has {} entries, matrix has {} rows",
            v.len(),
            m.rows
        )));
    }
    let mut out = vec![0.0; m.cols];
    for (i, &x) in v.iter().enumerate() {
        axpy(x, m.row(i), &mut out);
    }
    Ok(out)
}

/// Cosine similarity; errors when either input has zero norm.
pub fn cosine(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "cosine: dims {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Batched `A · B`, blocked over rows of `A` and columns of `B`.
///
/// Each output entry accumulates `a[i,k] * b[k,j]` in increasing `k`, the same
/// order as [`vecmat`], so row `i` of the result is bit-identical to
/// `vecmat(a.row(i), b)` regardless of blocking or scheduling.
pub fn gemm(exec: Exec, a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return DenseMatrix::from_raw(m, n, out);
    }
    par::for_each_chunk_mut(exec, &mut out, ROW_BLOCK * n, |blk, out_blk| {
        let r0 = blk * ROW_BLOCK;
        let nrows = out_blk.len() / n;
        for j0 in (0..n).step_by(COL_TILE) {
            let j1 = (j0 + COL_TILE).min(n);
            for kk in 0..k {
                let brow = &b.data[kk * n + j0..kk * n + j1];
                for r in 0..nrows {
                    let alpha = a.data[(r0 + r) * k + kk];
                    axpy(alpha, brow, &mut out_blk[r * n + j0..r * n + j1]);
                }
            }
        }
    });
    DenseMatrix::from_raw(m, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[allow(clippy::needless_range_loop)]
    fn naive_matvec(m: &DenseMatrix, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out[i] += m.get(i, j) * v[j];
            }
        }
        out
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gen_gaussian_matrix(2, 2, 7).unwrap();
        let b = gen_gaussian_matrix(2, 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let m = gen_gaussian_matrix(1000, 1000, 1).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.05, "var {var}");
    }

    #[test]
    fn gaussian_mnist_projection_size() {
        let m = gen_gaussian_matrix(784, 10_000, 3).unwrap();
        assert_eq!(m.as_slice().len(), 7_840_000);
    }

    #[test]
    fn gaussian_rejects_zero_dims() {
        assert!(matches!(
            gen_gaussian_matrix(0, 3, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn matvec_identity_and_diagonal() {
        let v = DenseVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            matvec(&DenseMatrix::identity(3), &v).unwrap().as_slice(),
            &[1.0, 2.0, 3.0]
        );
        let d = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let v = DenseVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(matvec(&d, &v).unwrap().as_slice(), &[3.0, 8.0]);
    }

    #[test]
    fn matvec_matches_naive_loop() {
        let m = gen_gaussian_matrix(5, 4, 11).unwrap();
        let v = DenseVector::new(vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let got = matvec(&m, &v).unwrap();
        for (g, e) in got.as_slice().iter().zip(naive_matvec(&m, v.as_slice())) {
            assert!((g - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = DenseMatrix::zeros(2, 3);
        let v = DenseVector::zeros(2);
        assert!(matches!(matvec(&m, &v), Err(Error::Dimension(_))));
    }

    #[test]
    fn cosine_cases() {
        let v = DenseVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(cosine(&v, &v).unwrap(), 1.0, epsilon = 1e-15);
        let e1 = DenseVector::new(vec![1.0, 0.0]).unwrap();
        let e2 = DenseVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let w = DenseVector::new(vec![4.0, 5.0, 6.0]).unwrap();
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert_relative_eq!(cosine(&v, &w).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn cosine_zero_norm_is_degenerate() {
        let z = DenseVector::zeros(2);
        let v = DenseVector::new(vec![1.0, 1.0]).unwrap();
        assert!(matches!(cosine(&z, &v), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn gemm_rows_equal_vecmat_bitwise() {
        let a = gen_gaussian_matrix(70, 33, 1).unwrap();
        let b = gen_gaussian_matrix(33, 1100, 2).unwrap();
        for exec in [Exec::Sequential, Exec::default()] {
            let c = gemm(exec, &a, &b);
            for i in [0, 31, 32, 69] {
                let v = vecmat(a.row(i), &b).unwrap();
                assert_eq!(c.row(i), v.as_slice());
            }
        }
    }
}
