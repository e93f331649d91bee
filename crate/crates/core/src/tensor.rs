//! Dense row-major tensor of f64 values.
//!
//! All quantizer and layout math in this crate operates on plain `f64`
//! buffers; the innermost (last) axis is always the blocking/contraction
//! axis. This type carries just enough structure for that: a shape, a flat
//! buffer, and a handful of 2-D helpers used by the GEMM and LoRA paths.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let inner = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * inner);
        for r in rows {
            assert_eq!(r.len(), inner, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            dims: vec![rows.len(), inner],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Length of the innermost axis (1 for 0-d tensors).
    pub fn inner_len(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    /// Product of all axes except the innermost.
    pub fn outer_len(&self) -> usize {
        if self.dims.is_empty() {
            1
        } else {
            self.dims[..self.dims.len() - 1].iter().product()
        }
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Reinterpret as a matrix with the same data and a new 2-D shape.
    pub fn reshaped(&self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data.clone())
    }

    // --- 2-D helpers -----------------------------------------------------

    pub fn rows(&self) -> usize {
        assert_eq!(self.dims.len(), 2, "rows() requires a 2-D tensor");
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.dims.len(), 2, "cols() requires a 2-D tensor");
        self.dims[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn transposed(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self {
            dims: vec![n, m],
            data: out,
        }
    }

    /// Plain dense matmul, used by the LoRA branch and by test oracles.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                m, k, k2, n
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for u in 0..k {
                    acc += self.data[i * k + u] * other.data[u * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(self.dims.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "sub {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor::new(self.dims.clone(), data)
    }
}

/// Mean squared error between two equal-length buffers.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
