//! Dense rank-5 tensors in (batch, channel, depth, height, width) layout.
//!
//! Depth is the spectral axis. Storage is contiguous row-major over
//! (N, C, D, H, W); tensors of lower rank are carried with trailing
//! extents of 1.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("element count overflow for shape {0:?}")]
    Overflow([usize; 5]),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 5], [usize; 5]),
    #[error("invalid axis {0}")]
    InvalidAxis(usize),
}

/// Kernel size or padding triple, ordered (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

/// Stride triple, ordered (depth, height, width). Components are >= 1.
pub type Stride3 = Extent3;

impl Extent3 {
    pub const fn new(d: usize, h: usize, w: usize) -> Self {
        Extent3 { d, h, w }
    }
    pub const fn cube(k: usize) -> Self {
        Extent3 { d: k, h: k, w: k }
    }
    pub fn volume(&self) -> usize {
        self.d * self.h * self.w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    shape: [usize; 5],
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(shape: [usize; 5]) -> Result<Self, TensorError> {
        Self::fill(shape, T::zero())
    }

    pub fn ones(shape: [usize; 5]) -> Result<Self, TensorError> {
        Self::fill(shape, T::one())
    }

    pub fn fill(shape: [usize; 5], value: T) -> Result<Self, TensorError> {
        let len = checked_len(shape)?;
        Ok(Tensor5 { shape, data: vec![value; len] })
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self, TensorError> {
        let len = checked_len(shape)?;
        if len != data.len() {
            return Err(TensorError::ShapeMismatch(shape, [data.len(), 1, 1, 1, 1]));
        }
        Ok(Tensor5 { shape, data })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        let [_, cc, dd, hh, ww] = self.shape;
        ((((n * cc) + c) * dd + d) * hh + h) * ww + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, d, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, d: usize, h: usize, w: usize) -> &mut T {
        let off = self.offset(n, c, d, h, w);
        &mut self.data[off]
    }

    /// Inverse of `offset`.
    pub fn unravel(&self, mut off: usize) -> [usize; 5] {
        let [_, c, d, h, w] = self.shape;
        let iw = off % w;
        off /= w;
        let ih = off % h;
        off /= h;
        let id = off % d;
        off /= d;
        let ic = off % c;
        off /= c;
        [off, ic, id, ih, iw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor5 { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch(self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor5 { shape: self.shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Reduce the given axes (0..5) with `op`; reduced extents become 1.
    pub fn reduce(&self, axes: &[usize], op: Reduce) -> Result<Self, TensorError> {
        let mut reduced = [false; 5];
        for &a in axes {
            if a >= 5 {
                return Err(TensorError::InvalidAxis(a));
            }
            reduced[a] = true;
        }
        let mut out_shape = self.shape;
        for (a, r) in reduced.iter().enumerate() {
            if *r {
                out_shape[a] = 1;
            }
        }
        let init = match op {
            Reduce::Sum | Reduce::Mean => T::zero(),
            Reduce::Max => T::neg_infinity(),
        };
        let mut out = Tensor5::fill(out_shape, init)?;
        let mut count = 1usize;
        for (a, r) in reduced.iter().enumerate() {
            if *r {
                count *= self.shape[a];
            }
        }
        for off in 0..self.data.len() {
            let mut idx = self.unravel(off);
            for (a, r) in reduced.iter().enumerate() {
                if *r {
                    idx[a] = 0;
                }
            }
            let o = out.offset(idx[0], idx[1], idx[2], idx[3], idx[4]);
            match op {
                Reduce::Sum | Reduce::Mean => out.data[o] += self.data[off],
                Reduce::Max => {
                    if self.data[off] > out.data[o] {
                        out.data[o] = self.data[off];
                    }
                }
            }
        }
        if let Reduce::Mean = op {
            let c = T::of_f64(count as f64);
            for v in &mut out.data {
                *v /= c;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

fn checked_len(shape: [usize; 5]) -> Result<usize, TensorError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or(TensorError::Overflow(shape))
}
