//! Minimal dense f64 tensors (1-D and 2-D, row-major).
//!
//! Every public operation validates shapes strictly (no broadcasting) and
//! rejects non-finite results, so NaN/Inf never propagate silently. Reductions
//! run in a fixed left-to-right order, which makes runs bit-reproducible.

use crate::error::{Error, Result};

/// Dense row-major array of f64 values with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(data: &[f64], context: &str) -> Result<()> {
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{context}: element {idx} is {}",
            data[idx]
        )));
    }
    Ok(())
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::Dimension(format!(
                "tensor rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} elements, data has {}",
                data.len()
            )));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Self { shape, data })
    }

    /// 1-D tensor from a slice.
    pub fn vector(data: &[f64]) -> Result<Self> {
        Self::from_vec(vec![data.len()], data.to_vec())
    }

    /// 2-D tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    /// Identity matrix of side `n`.
    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Rows of a matrix, or 1 for a vector.
    pub fn rows(&self) -> usize {
        if self.is_matrix() {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(self.is_matrix());
        self.data[row * self.cols() + col]
    }

    /// Matrix product; inner dimensions must agree.
    ///
    /// The sum over the inner index runs left to right, so the result is
    /// deterministic down to the bit.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if !self.is_matrix() || !other.is_matrix() {
            return Err(Error::Dimension(format!(
                "matmul needs two matrices, got {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.data[i * k + p] * other.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        check_finite(&out, "matmul")?;
        Tensor::from_vec(vec![m, n], out)
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if !self.is_matrix() || !v.is_vector() {
            return Err(Error::Dimension(format!(
                "matvec needs matrix x vector, got {:?} x {:?}",
                self.shape, v.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        if k != v.len() {
            return Err(Error::Dimension(format!(
                "matvec inner dimensions disagree: {:?} x {:?}",
                self.shape, v.shape
            )));
        }
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut acc = 0.0;
            for p in 0..k {
                acc += self.data[i * k + p] * v.data[p];
            }
            out[i] = acc;
        }
        check_finite(&out, "matvec")?;
        Tensor::from_vec(vec![m], out)
    }

    /// Transposed matrix-vector product `self^T * v`.
    pub fn matvec_t(&self, v: &Tensor) -> Result<Tensor> {
        if !self.is_matrix() || !v.is_vector() {
            return Err(Error::Dimension(format!(
                "matvec_t needs matrix x vector, got {:?} x {:?}",
                self.shape, v.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        if m != v.len() {
            return Err(Error::Dimension(format!(
                "matvec_t outer dimensions disagree: {:?} x {:?}",
                self.shape, v.shape
            )));
        }
        let mut out = vec![0.0; k];
        for j in 0..k {
            let mut acc = 0.0;
            for i in 0..m {
                acc += self.data[i * k + j] * v.data[i];
            }
            out[j] = acc;
        }
        check_finite(&out, "matvec_t")?;
        Tensor::from_vec(vec![k], out)
    }

    /// Elementwise (Hadamard) product; shapes must be identical.
    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "hadamard shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        check_finite(&data, "hadamard")?;
        Tensor::from_vec(self.shape.clone(), data)
    }

    /// Elementwise sum; shapes must be identical.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        check_finite(&data, "add")?;
        Tensor::from_vec(self.shape.clone(), data)
    }

    /// Elementwise difference; shapes must be identical.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "sub shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        check_finite(&data, "sub")?;
        Tensor::from_vec(self.shape.clone(), data)
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|a| a * factor).collect();
        check_finite(&data, "scale")?;
        Tensor::from_vec(self.shape.clone(), data)
    }

    /// Outer product of two vectors: `out[i][j] = u[i] * v[j]`.
    pub fn outer(&self, other: &Tensor) -> Result<Tensor> {
        if !self.is_vector() || !other.is_vector() {
            return Err(Error::Dimension(format!(
                "outer needs two vectors, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, n) = (self.len(), other.len());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = self.data[i] * other.data[j];
            }
        }
        check_finite(&out, "outer")?;
        Tensor::from_vec(vec![m, n], out)
    }

    /// Frobenius norm: sqrt of the sum of squared entries (0 for empty).
    pub fn frobenius_norm(&self) -> f64 {
        self.sq_sum().sqrt()
    }

    /// Sum of squared entries, accumulated in storage order.
    pub fn sq_sum(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        acc
    }

    /// Frobenius inner product of two same-shape tensors.
    pub fn frobenius_inner(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "frobenius_inner shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// In-place `self += factor * other`. Used by the optimizer hot path;
    /// shapes must agree.
    pub(crate) fn axpy_inplace(&mut self, factor: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "axpy shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        check_finite(&self.data, "axpy")
    }

    /// In-place `self = factor * self`.
    pub(crate) fn scale_inplace(&mut self, factor: f64) -> Result<()> {
        for a in self.data.iter_mut() {
            *a *= factor;
        }
        check_finite(&self.data, "scale_inplace")
    }

    /// In-place single-coordinate bump (finite-difference probes, tests).
    pub(crate) fn nudge(&mut self, flat_idx: usize, delta: f64) {
        self.data[flat_idx] += delta;
    }

    /// Index of the maximum element; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }
}
