//! Training-time augmentation: horizontal flips and padded random crops.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tensor::Tensor4;

/// Zero padding on each side before a random crop.
pub const CROP_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AugmentPolicy {
    #[default]
    None,
    /// Mirror each image with probability 1/2.
    Flip,
    /// Zero-pad by [`CROP_PAD`], take a uniformly placed crop of the
    /// original size, then flip with probability 1/2.
    PadCropFlip,
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentPolicy::None => "none",
            AugmentPolicy::Flip => "flip",
            AugmentPolicy::PadCropFlip => "padcrop",
        })
    }
}

impl FromStr for AugmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "none" => Ok(AugmentPolicy::None),
            "flip" => Ok(AugmentPolicy::Flip),
            "padcrop" | "padcropflip" => Ok(AugmentPolicy::PadCropFlip),
            other => Err(Error::Config(format!(
                "unknown augmentation '{other}' (expected none, flip or padcrop)"
            ))),
        }
    }
}

/// Mirrors image `b` left to right in place.
pub fn flip_horizontal(x: &mut Tensor4, b: usize) {
    let w = x.shape().width;
    for row in x.image_mut(b).chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Replaces image `b` by the crop at offset (`dy`, `dx`) of its zero-padded
/// version, so `(CROP_PAD, CROP_PAD)` is the identity.
pub fn pad_crop(x: &mut Tensor4, b: usize, dy: usize, dx: usize) {
    let s = x.shape();
    let (h, w) = (s.height, s.width);
    let src = x.image(b).to_vec();
    let out = x.image_mut(b);
    for c in 0..s.channels {
        for y in 0..h {
            let sy = (y + dy).checked_sub(CROP_PAD).filter(|&v| v < h);
            for xx in 0..w {
                let sx = (xx + dx).checked_sub(CROP_PAD).filter(|&v| v < w);
                out[(c * h + y) * w + xx] = match (sy, sx) {
                    (Some(sy), Some(sx)) => src[(c * h + sy) * w + sx],
                    _ => 0.0,
                };
            }
        }
    }
}

/// Applies `policy` to every image of `batch`, deterministically in `seed`.
pub fn augment(batch: &Tensor4, policy: AugmentPolicy, seed: u64) -> Tensor4 {
    let mut out = batch.clone();
    if policy == AugmentPolicy::None {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in 0..out.shape().batch {
        if policy == AugmentPolicy::PadCropFlip {
            let dy = rng.random_range(0..=2 * CROP_PAD);
            let dx = rng.random_range(0..=2 * CROP_PAD);
            pad_crop(&mut out, b, dy, dx);
        }
        if rng.random_bool(0.5) {
            flip_horizontal(&mut out, b);
        }
    }
    out
}
