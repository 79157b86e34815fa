//! Dense NCHW tensors and the handful of kernels the detector needs.

mod conv;
mod ops;
mod params;

pub use conv::{conv2d, deconv2d, ConvParams};
pub use ops::{
    batch_norm_inference, elementwise_add, global_avg_pool, l2_normalize_channels, max_pool,
    max_pool_padded, relu, scale_channels, sigmoid, BatchNorm,
};
pub use params::{param_count, LayerDesc};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A 4-D `(batch, channels, height, width)` array stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::shape("tensor", "data length", expected, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: [usize; 4], value: S) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` for every cell.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.offset(n, c, y, x)]
    }

    /// Contiguous `h * w` plane of one channel of one image.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channels `[start, start + count)` of every image.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.channels() {
            return Err(Error::shape(
                "slice_channels",
                "channel range end",
                self.channels(),
                start + count,
            ));
        }
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let mut data = Vec::with_capacity(n * count * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + count * hw]);
        }
        Ok(Self {
            shape: [n, count, h, w],
            data,
        })
    }

    /// Concatenates along the channel axis. All parts must agree on batch and
    /// spatial size.
    pub fn concat_channels(parts: &[&Tensor<S>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no tensors to concatenate"))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            check_dim("concat_channels", "batch", n, p.batch())?;
            check_dim("concat_channels", "height", h, p.height())?;
            check_dim("concat_channels", "width", w, p.width())?;
        }
        let c_total: usize = parts.iter().map(|p| p.channels()).sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for b in 0..n {
            for p in parts {
                let len = p.channels() * hw;
                data.extend_from_slice(&p.data[b * len..(b + 1) * len]);
            }
        }
        Ok(Self {
            shape: [n, c_total, h, w],
            data,
        })
    }

    /// Single image `index` as a batch-1 tensor.
    pub fn image(&self, index: usize) -> Result<Self> {
        if index >= self.batch() {
            return Err(Error::shape("image", "batch index", self.batch(), index));
        }
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        Ok(Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[index * len..(index + 1) * len].to_vec(),
        })
    }

    pub fn concat_batch(parts: &[Tensor<S>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_batch", "no tensors to concatenate"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            check_dim("concat_batch", "channels", c, p.channels())?;
            check_dim("concat_batch", "height", h, p.height())?;
            check_dim("concat_batch", "width", w, p.width())?;
            n += p.batch();
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }
}

pub(crate) fn check_dim(op: &'static str, dim: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::shape(op, dim, expected, got))
    } else {
        Ok(())
    }
}
