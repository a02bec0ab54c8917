//! Dense row-major tensors.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Owned, contiguous, row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (channels for channel-last tensors).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).expect("finite cast"))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Reverses the leading (frame) axis.
    pub fn flip_leading(&self) -> Self {
        let n0 = self.shape.first().copied().unwrap_or(1);
        let inner = if n0 == 0 { 0 } else { self.numel() / n0 };
        let mut data = Vec::with_capacity(self.numel());
        for f in (0..n0).rev() {
            data.extend_from_slice(&self.data[f * inner..(f + 1) * inner]);
        }
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Moves axis 1 to the end: `[a, c, rest..] -> [a, rest.., c]`.
    pub fn channels_to_last(&self) -> Self {
        assert!(self.ndim() >= 2);
        let a = self.shape[0];
        let c = self.shape[1];
        let rest: usize = self.shape[2..].iter().product();
        let mut data = vec![T::zero(); self.numel()];
        for i in 0..a {
            for ch in 0..c {
                for r in 0..rest {
                    data[(i * rest + r) * c + ch] = self.data[(i * c + ch) * rest + r];
                }
            }
        }
        let mut shape = vec![a];
        shape.extend_from_slice(&self.shape[2..]);
        shape.push(c);
        Self { shape, data }
    }

    /// Inverse of [`Tensor::channels_to_last`].
    pub fn channels_to_second(&self) -> Self {
        assert!(self.ndim() >= 2);
        let a = self.shape[0];
        let c = *self.shape.last().unwrap();
        let mid = &self.shape[1..self.ndim() - 1];
        let rest: usize = mid.iter().product();
        let mut data = vec![T::zero(); self.numel()];
        for i in 0..a {
            for r in 0..rest {
                for ch in 0..c {
                    data[(i * c + ch) * rest + r] = self.data[(i * rest + r) * c + ch];
                }
            }
        }
        let mut shape = vec![a, c];
        shape.extend_from_slice(mid);
        Self { shape, data }
    }
}
