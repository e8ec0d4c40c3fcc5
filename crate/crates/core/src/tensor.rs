//! Dense row-major `f64` tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};

/// A dense N-dimensional array of `f64` stored row-major (last axis fastest).
///
/// Image-like tensors use `H x W x C` layout. Zero-sized axes are allowed so a
/// pruned layer that lost every channel still has a well-formed shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SorError::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis, the channel axis for `H x W x C` tensors.
    pub fn channels(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(SorError::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(SorError::dim(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Keeps only the listed indices along `axis`, in order.
    pub fn select(&self, axis: usize, keep: &[usize]) -> Tensor {
        let outer: usize = self.shape[..axis].iter().product();
        let dim = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * keep.len() * inner);
        for o in 0..outer {
            for &k in keep {
                let start = (o * dim + k) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = keep.len();
        Tensor { shape, data }
    }

    /// Applies `f` to every element whose index along `axis` equals `index`.
    pub fn for_each_in_slice(&mut self, axis: usize, index: usize, mut f: impl FnMut(&mut f64)) {
        let outer: usize = self.shape[..axis].iter().product();
        let dim = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        for o in 0..outer {
            let start = (o * dim + index) * inner;
            self.data[start..start + inner].iter_mut().for_each(&mut f);
        }
    }

    /// Collects the elements whose index along `axis` equals `index`.
    pub fn slice_values(&self, axis: usize, index: usize) -> Vec<f64> {
        let outer: usize = self.shape[..axis].iter().product();
        let dim = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * dim + index) * inner;
            out.extend_from_slice(&self.data[start..start + inner]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_ok());
    }

    #[test]
    fn select_and_slice_along_axes() {
        // 2 x 3 matrix [[0,1,2],[3,4,5]]
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let cols = t.select(1, &[0, 2]);
        assert_eq!(cols.shape(), &[2, 2]);
        assert_eq!(cols.data(), &[0.0, 2.0, 3.0, 5.0]);
        assert_eq!(t.slice_values(0, 1), vec![3.0, 4.0, 5.0]);
        assert_eq!(t.slice_values(1, 1), vec![1.0, 4.0]);

        let mut z = t.clone();
        z.for_each_in_slice(1, 2, |x| *x = 0.0);
        assert_eq!(z.data(), &[0.0, 1.0, 0.0, 3.0, 4.0, 0.0]);
    }
}
