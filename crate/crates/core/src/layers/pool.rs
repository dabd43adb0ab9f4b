//! Max pooling with argmax routing.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    /// (top, bottom, left, right). Padded cells never win the max.
    pub pad: [usize; 4],
}

impl PoolSpec {
    pub fn new(window: (usize, usize), stride: (usize, usize), pad: [usize; 4]) -> Self {
        PoolSpec { window, stride, pad }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let (kh, kw) = self.window;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::Shape(format!(
                "pool window {kh}x{kw} and stride {sh}x{sw} must be positive"
            )));
        }
        let [t, b, l, r] = self.pad;
        let ph = input.height + t + b;
        let pw = input.width + l + r;
        if ph < kh || pw < kw {
            return Err(Error::Shape(format!(
                "pool window {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        let out = Shape4 {
            height: (ph - kh) / sh + 1,
            width: (pw - kw) / sw + 1,
            ..input
        };
        // every window must overlap at least one real cell
        let last_h = (out.height - 1) * sh;
        let last_w = (out.width - 1) * sw;
        if kh <= t || kw <= l || last_h >= t + input.height || last_w >= l + input.width {
            return Err(Error::Shape(format!(
                "pool {kh}x{kw} with padding {:?} has windows made only of padding on {}x{}",
                self.pad, input.height, input.width
            )));
        }
        Ok(out)
    }
}

/// Flat input index of the winner of every output cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    input_shape: Shape4,
    output_shape: Shape4,
    argmax: Vec<usize>,
}

impl PoolRecord {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn maxpool_forward(x: &Tensor4, spec: &PoolSpec) -> Result<(Tensor4, PoolRecord)> {
    let s = x.shape();
    let out_shape = spec.output_shape(s)?;
    let (kh, kw) = spec.window;
    let (sh, sw) = spec.stride;
    let [top, _, left, _] = spec.pad;
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = x.offset(b, c, 0, 0);
            for oh in 0..out_shape.height {
                let h0 = (oh * sh).saturating_sub(top);
                let h1 = (oh * sh + kh).saturating_sub(top).min(s.height);
                for ow in 0..out_shape.width {
                    let w0 = (ow * sw).saturating_sub(left);
                    let w1 = (ow * sw + kw).saturating_sub(left).min(s.width);
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for h in h0..h1 {
                        for w in w0..w1 {
                            let i = base + h * s.width + w;
                            // strict `>` keeps the first maximum in row-major order
                            if x.data()[i] > best || best_i == usize::MAX {
                                best = x.data()[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((
        Tensor4::from_parts(out_shape, out),
        PoolRecord {
            input_shape: s,
            output_shape: out_shape,
            argmax,
        },
    ))
}

/// Smallest gap between the largest and second-largest real cell over all
/// windows. Values are clamped from below at `floor`, and windows whose
/// maximum does not exceed `floor` are skipped; pass `f64::NEG_INFINITY` to
/// consider every window. A window with a single real cell has no rival
/// and contributes nothing.
pub fn pool_margin(x: &Tensor4, spec: &PoolSpec, floor: f64) -> Result<f64> {
    let s = x.shape();
    let out_shape = spec.output_shape(s)?;
    let (kh, kw) = spec.window;
    let (sh, sw) = spec.stride;
    let [top, _, left, _] = spec.pad;
    let mut margin = f64::INFINITY;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = x.offset(b, c, 0, 0);
            for oh in 0..out_shape.height {
                let h0 = (oh * sh).saturating_sub(top);
                let h1 = (oh * sh + kh).saturating_sub(top).min(s.height);
                for ow in 0..out_shape.width {
                    let w0 = (ow * sw).saturating_sub(left);
                    let w1 = (ow * sw + kw).saturating_sub(left).min(s.width);
                    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                    for h in h0..h1 {
                        for w in w0..w1 {
                            let v = x.data()[base + h * s.width + w].max(floor);
                            if v > first {
                                second = first;
                                first = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    if first > floor && second > f64::NEG_INFINITY {
                        margin = margin.min(first - second);
                    }
                }
            }
        }
    }
    Ok(margin)
}

pub fn maxpool_backward(record: &PoolRecord, dy: &Tensor4) -> Result<Tensor4> {
    if dy.shape() != record.output_shape {
        return Err(Error::Shape(format!(
            "pool gradient {} does not match pool output {}",
            dy.shape(),
            record.output_shape
        )));
    }
    let mut dx = Tensor4::zeros(record.input_shape);
    let d = dx.data_mut();
    for (&i, &g) in record.argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    Ok(dx)
}
