//! Dense row-major `f64` tensors.
//!
//! Fields are `[C, H, W]`, batches are `[B, C, H, W]`, point sets are
//! `[B, N, F]`. The type is deliberately plain: shape plus contiguous data.

use alloc::vec;
use alloc::vec::Vec;

use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::ShapeMismatch {
                context: "tensor construction".into(),
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(CoreError::shape("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn ensure_shape(&self, context: &str, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(CoreError::shape(context, expected, &self.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(CoreError::shape(
                "elementwise op",
                &self.shape,
                &other.shape,
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Sub-tensor `index` along the leading axis.
    pub fn index_first(&self, index: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| CoreError::InvalidConfig("cannot stack zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            t.ensure_shape("stack", &first.shape)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenates along axis 1, the channel axis of `[B, C, ...]`.
    pub fn concat_channels(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| CoreError::InvalidConfig("cannot concatenate zero tensors".into()))?;
        let b = first.shape[0];
        let spatial: usize = first.shape[2..].iter().product();
        let mut channels = 0;
        for t in items {
            if t.ndim() != first.ndim() || t.shape[0] != b || t.shape[2..] != first.shape[2..] {
                return Err(CoreError::shape("channel concat", &first.shape, &t.shape));
            }
            channels += t.shape[1];
        }
        let mut data = Vec::with_capacity(b * channels * spatial);
        for bi in 0..b {
            for t in items {
                let block = t.shape[1] * spatial;
                data.extend_from_slice(&t.data[bi * block..(bi + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = channels;
        Ok(Tensor { shape, data })
    }

    /// Channels `[start, start + len)` of a `[B, C, ...]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Tensor {
        let b = self.shape[0];
        let c = self.shape[1];
        let spatial: usize = self.shape[2..].iter().product();
        let mut data = Vec::with_capacity(b * len * spatial);
        for bi in 0..b {
            let off = (bi * c + start) * spatial;
            data.extend_from_slice(&self.data[off..off + len * spatial]);
        }
        let mut shape = self.shape.clone();
        shape[1] = len;
        Tensor { shape, data }
    }

    /// Cyclic shift of the last axis by `s` (positive moves values right).
    pub fn roll_last(&self, s: isize) -> Tensor {
        let w = *self.shape.last().unwrap_or(&1);
        let mut out = self.clone();
        if w == 0 {
            return out;
        }
        let s = s.rem_euclid(w as isize) as usize;
        for (src, dst) in self.data.chunks(w).zip(out.data.chunks_mut(w)) {
            for j in 0..w {
                dst[(j + s) % w] = src[j];
            }
        }
        out
    }
}
