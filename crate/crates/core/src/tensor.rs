//! Dense rank-4 tensors in (batch, channel, height, width) row-major layout.
//!
//! Every activation and gradient in the engine is a [`Tensor4`]. Keeping the
//! channel axis outside the spatial axes makes a run of consecutive channels
//! (one channel window of a channel-local convolution) a contiguous slice of
//! each image.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "every dimension must be >= 1, got {batch}x{channels}x{height}x{width}"
            )));
        }
        Ok(Shape4 {
            batch,
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one image (C·H·W).
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Elements in one channel plane (H·W).
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn with_batch(self, batch: usize) -> Self {
        Shape4 { batch, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data` after checking its length and that every element is finite.
    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        let t = Tensor4 { shape, data };
        t.ensure_finite("tensor data")?;
        Ok(t)
    }

    /// Internal constructor for results whose length is correct by construction.
    pub(crate) fn from_parts(shape: Shape4, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        let s = &self.shape;
        ((b * s.channels + c) * s.height + h) * s.width + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.offset(b, c, h, w);
        self.data[i] = value;
    }

    /// The C·H·W slice of image `b`.
    pub fn image(&self, b: usize) -> &[f64] {
        let n = self.shape.image_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn image_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.shape.image_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Pads the two spatial axes with `value`. The channel axis is never padded.
    pub fn pad_spatial(&self, top: usize, bottom: usize, left: usize, right: usize, value: f64) -> Tensor4 {
        let s = self.shape;
        let out_shape = Shape4 {
            height: s.height + top + bottom,
            width: s.width + left + right,
            ..s
        };
        let mut out = Tensor4::full(out_shape, value);
        for b in 0..s.batch {
            for c in 0..s.channels {
                for h in 0..s.height {
                    let src = self.offset(b, c, h, 0);
                    let dst = out.offset(b, c, h + top, left);
                    out.data[dst..dst + s.width].copy_from_slice(&self.data[src..src + s.width]);
                }
            }
        }
        out
    }

    /// Extracts the `height`×`width` window whose top-left corner is (`top`, `left`).
    pub fn crop_spatial(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor4> {
        let s = self.shape;
        if top + height > s.height || left + width > s.width || height == 0 || width == 0 {
            return Err(Error::Range(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                s.height, s.width
            )));
        }
        let out_shape = Shape4 { height, width, ..s };
        let mut data = Vec::with_capacity(out_shape.len());
        for b in 0..s.batch {
            for c in 0..s.channels {
                for h in top..top + height {
                    let src = self.offset(b, c, h, left);
                    data.extend_from_slice(&self.data[src..src + width]);
                }
            }
        }
        Ok(Tensor4::from_parts(out_shape, data))
    }

    /// Copies channels `start..start+len` of every image.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor4> {
        let s = self.shape;
        if len == 0 || start + len > s.channels {
            return Err(Error::Range(format!(
                "channel window [{start}, {}) outside 0..{}",
                start + len,
                s.channels
            )));
        }
        let plane = s.plane_len();
        let out_shape = Shape4 { channels: len, ..s };
        let mut data = Vec::with_capacity(out_shape.len());
        for b in 0..s.batch {
            let from = self.offset(b, start, 0, 0);
            data.extend_from_slice(&self.data[from..from + len * plane]);
        }
        Ok(Tensor4::from_parts(out_shape, data))
    }

    /// Gathers the listed images into a new batch.
    pub fn select_images(&self, indices: &[usize]) -> Result<Tensor4> {
        if indices.is_empty() {
            return Err(Error::Shape("cannot select an empty batch".into()));
        }
        let s = self.shape;
        let mut data = Vec::with_capacity(indices.len() * s.image_len());
        for &i in indices {
            if i >= s.batch {
                return Err(Error::Range(format!("image {i} outside batch of {}", s.batch)));
            }
            data.extend_from_slice(self.image(i));
        }
        Ok(Tensor4::from_parts(s.with_batch(indices.len()), data))
    }

    /// Seeded i.i.d. Gaussian tensor.
    pub fn fill_random_gaussian(shape: Shape4, mean: f64, std: f64, seed: u64) -> Result<Tensor4> {
        if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::Param(format!(
                "gaussian needs finite mean and std >= 0, got {mean}, {std}"
            )));
        }
        let normal = Normal::new(mean, std)
            .map_err(|e| Error::Param(format!("gaussian(mean={mean}, std={std}): {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len()).map(|_| normal.sample(&mut rng)).collect();
        Ok(Tensor4::from_parts(shape, data))
    }
}
