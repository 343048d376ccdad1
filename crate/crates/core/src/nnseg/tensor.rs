//! A minimal dense tensor: shape plus row-major `f64` storage.
//!
//! Activations in this crate are rank-3 `[channels, rows, length]` (rows are
//! the 12 leads before the collapse layer, 1 after), and parameters are
//! rank-1 through rank-3. Nothing here is clever — the layer kernels in
//! [`super::layers`] index raw slices for speed and use these helpers only at
//! the edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Mismatch(format!(
                "tensor data length {} does not match shape {:?} (= {numel})",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Dimension `i` of the shape.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// For a rank-3 tensor `[A, B, C]`, the contiguous slice `[a, b, ..]`.
    pub fn row(&self, a: usize, b: usize) -> &[f64] {
        let c = self.shape[2];
        let off = (a * self.shape[1] + b) * c;
        &self.data[off..off + c]
    }

    /// Mutable variant of [`Tensor::row`].
    pub fn row_mut(&mut self, a: usize, b: usize) -> &mut [f64] {
        let c = self.shape[2];
        let off = (a * self.shape[1] + b) * c;
        &mut self.data[off..off + c]
    }

    /// Element accessor for rank-3 tensors (test/diagnostic use).
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_rows() {
        let t = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.numel(), 24);
        assert_eq!(t.dim(2), 4);
        assert_eq!(t.row(0, 0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.row(1, 2), &[20.0, 21.0, 22.0, 23.0]);
        assert_eq!(t.at3(1, 0, 1), 13.0);
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }
}
