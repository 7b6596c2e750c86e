//! Dense row-major tensors.
//!
//! A [`Tensor`] is a plain value: a shape and a flat buffer. Gradient state
//! lives on the [`Tape`](crate::tape::Tape) that a tensor is registered with,
//! so tensors themselves are immutable data that can be shared freely.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type of a tensor buffer (`f32` or `f64`).
pub trait Element:
    Float + Sum + Default + Debug + Send + Sync + std::ops::AddAssign + std::ops::SubAssign + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(buf: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(buf: &[Self]) -> Vec<u8> {
        buf.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(buf: &[Self]) -> Vec<u8> {
        buf.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
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

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Converts element type, rounding when narrowing.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Dimensions of a `(batch, channels, width)` tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, w] => Ok((b, c, w)),
            other => Err(Error::InvalidShape {
                op,
                detail: format!("expected (batch, channels, width), got {other:?}"),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[b, n] => Ok((b, n)),
            other => Err(Error::InvalidShape {
                op,
                detail: format!("expected (batch, features), got {other:?}"),
            }),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Channel slice `[start, end)` of a `(b, c, w)` tensor.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<Self> {
        let (b, c, w) = self.dims3("channel_slice")?;
        if start > end || end > c {
            return Err(Error::InvalidShape {
                op: "channel_slice",
                detail: format!("range {start}..{end} outside {c} channels"),
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(b * width * w);
        for i in 0..b {
            let base = i * c * w;
            data.extend_from_slice(&self.data[base + start * w..base + end * w]);
        }
        Ok(Self {
            shape: vec![b, width, w],
            data,
        })
    }

    /// Rows `indices` of the leading axis.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let row: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Concatenates `(b, c_i, w)` tensors along the channel axis.
pub fn cat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::InvalidShape {
        op: "concat_channels",
        detail: "empty tensor list".into(),
    })?;
    let (b, _, w) = first.dims3("concat_channels")?;
    let mut total = 0;
    for p in parts {
        let (pb, pc, pw) = p.dims3("concat_channels")?;
        if pb != b || pw != w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        total += pc;
    }
    let mut data = Vec::with_capacity(b * total * w);
    for i in 0..b {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[i * pc * w..(i + 1) * pc * w]);
        }
    }
    Tensor::new(vec![b, total, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_numel() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn channel_slice_and_cat_roundtrip() {
        let t = Tensor::<f64>::from_fn(&[2, 5, 3], |i| i as f64);
        let a = t.channel_slice(0, 2).unwrap();
        let b = t.channel_slice(2, 5).unwrap();
        assert_eq!(cat_channels(&[&a, &b]).unwrap(), t);
    }

    #[test]
    fn le_bytes_roundtrip() {
        let v = vec![1.5f32, -0.25, 3.0e-7];
        assert_eq!(f32::from_le_bytes_slice(&f32::to_le_bytes_vec(&v)), v);
    }
}
