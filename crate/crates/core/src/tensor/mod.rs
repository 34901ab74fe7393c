//! Dense tensors and a define-by-run reverse-mode autodiff tape.
//!
//! [`Tensor`] is a plain value: a shape of up to four extents (NCHW for
//! feature maps) and a contiguous buffer. Differentiation happens on a
//! [`Graph`], which records every op applied to [`Var`] handles and replays
//! them in reverse in [`Graph::backward`].
//!
//! All code is generic over [`Float`] so the same networks can run in `f32`
//! for training and `f64` for finite-difference gradient checks.

mod conv;
mod graph;
mod scalar;
mod warp;

pub use conv::{conv2d, transposed_conv2d, ConvGeom};
pub use graph::{Graph, Gradients, ReduceKind, Unary, Var};
pub use scalar::Float;
pub use warp::WarpMap;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Float = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::geometry(
                "tensor",
                format!("rank {} exceeds {MAX_RANK}", shape.len()),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::geometry(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.len() <= MAX_RANK, "rank {} > {MAX_RANK}", shape.len());
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shape left-padded with ones to rank four.
    pub fn dims4(&self) -> [usize; 4] {
        dims4(&self.shape)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() > MAX_RANK {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Elementwise `self + scale * other`, in place.
    pub fn axpy(&mut self, scale: T, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("axpy", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Copy of sample `n` along the leading axis, keeping rank.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let [bn, c, h, w] = self.dims4();
        if n >= bn {
            return Err(Error::geometry("sample", format!("index {n} >= batch {bn}")));
        }
        let per = c * h * w;
        let mut shape = self.shape.clone();
        if let Some(first) = shape.first_mut() {
            *first = 1;
        }
        Ok(Self {
            shape,
            data: self.data[n * per..(n + 1) * per].to_vec(),
        })
    }

    /// Concatenate tensors along the leading (batch) axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty { op: "stack" })?;
        let [_, c, h, w] = first.dims4();
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            let [tn, tc, th, tw] = t.dims4();
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape("stack", first.shape(), t.shape()));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Self::new(&[n, c, h, w], data)
    }
}

pub(crate) fn dims4(shape: &[usize]) -> [usize; 4] {
    let mut d = [1usize; 4];
    let off = MAX_RANK - shape.len();
    d[off..].copy_from_slice(shape);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn dims4_pads_leading_ones() {
        let t = Tensor::<f32>::zeros(&[3, 5]);
        assert_eq!(t.dims4(), [1, 1, 3, 5]);
    }

    #[test]
    fn sample_and_stack_invert() {
        let t = Tensor::<f32>::new(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = t.sample(0).unwrap();
        let b = t.sample(1).unwrap();
        assert_eq!(b.data(), &[3.0, 4.0]);
        assert_eq!(Tensor::stack(&[a, b]).unwrap(), t);
    }
}
