//! Datasets: CIFAR binary ingestion, per-channel normalisation,
//! augmentation, mini-batching and a synthetic stand-in set.

mod augment;
mod cifar;

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub use augment::{augment, flip_horizontal, pad_crop, AugmentPolicy, CROP_PAD};
pub use cifar::{
    encode_record, load_cifar, load_cifar10, load_cifar100, verify_cifar, write_cifar, CifarKind, FileReport,
    VerifyReport, IMAGE_BYTES, TEST_RECORDS, TRAIN_RECORDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor4,
    /// Class of every image (the fine label for CIFAR-100).
    pub labels: Vec<usize>,
    /// CIFAR-100 superclass of every image.
    pub coarse_labels: Option<Vec<usize>>,
    pub split: Split,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if labels.len() != images.shape().batch {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                images.shape().batch
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Label {
                label,
                classes: class_count,
            });
        }
        Ok(Dataset {
            images,
            labels,
            coarse_labels: None,
            split,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The listed images, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.select_images(indices)?;
        Ok(Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            coarse_labels: self
                .coarse_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            split: self.split,
            class_count: self.class_count,
        })
    }

    /// The first `n` images (all of them if there are fewer).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Per-channel mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn compute(images: &Tensor4) -> ChannelStats {
        let s = images.shape();
        let plane = s.plane_len();
        let count = (s.batch * plane) as f64;
        let mut mean = vec![0.0; s.channels];
        let mut sq = vec![0.0; s.channels];
        for b in 0..s.batch {
            let img = images.image(b);
            for c in 0..s.channels {
                mean[c] += img[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        for b in 0..s.batch {
            let img = images.image(b);
            for c in 0..s.channels {
                sq[c] += img[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|v| (v - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = sq.iter().map(|v| (v / count).sqrt()).collect();
        ChannelStats { mean, std }
    }
}

/// `(x - mean) / std` per channel. Statistics come from the training split
/// and are applied unchanged to the test split.
pub fn normalize(mut ds: Dataset, stats: &ChannelStats) -> Result<Dataset> {
    let s = ds.images.shape();
    if stats.mean.len() != s.channels || stats.std.len() != s.channels {
        return Err(Error::Shape(format!(
            "statistics for {} channels applied to {} channels",
            stats.mean.len(),
            s.channels
        )));
    }
    if let Some(c) = stats.std.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Numeric(format!(
            "channel {c} has standard deviation {}; cannot normalize",
            stats.std[c]
        )));
    }
    let plane = s.plane_len();
    for b in 0..s.batch {
        let img = ds.images.image_mut(b);
        for c in 0..s.channels {
            let (m, sd) = (stats.mean[c], stats.std[c]);
            for v in &mut img[c * plane..(c + 1) * plane] {
                *v = (*v - m) / sd;
            }
        }
    }
    Ok(ds)
}

/// Visiting order of one epoch: identity, or a seeded permutation.
pub fn epoch_order(n: usize, shuffle: bool, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Mini-batches of one epoch; the last batch may be smaller.
#[derive(Debug)]
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor4, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        let images = self
            .ds
            .images
            .select_images(idx)
            .expect("indices come from the dataset");
        Some((images, idx.iter().map(|&i| self.ds.labels[i]).collect()))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

pub fn batches(ds: &Dataset, batch_size: usize, shuffle: bool, seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Param("batch size must be at least 1".into()));
    }
    Ok(Batches {
        ds,
        order: epoch_order(ds.len(), shuffle, seed),
        batch_size,
        next: 0,
    })
}

/// A learnable stand-in for CIFAR: `n` RGB `size`×`size` images whose class
/// determines a smooth colour pattern, plus pixel noise. Pixels are
/// quantised to the 256 levels of the binary format and labels are
/// balanced, then shuffled.
pub fn synthetic(n: usize, class_count: usize, size: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || class_count == 0 || size == 0 {
        return Err(Error::Param(
            "synthetic set needs images, classes and a size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per class and channel: two plane waves (amplitude, fx, fy, phase)
    let patterns: Vec<[[f64; 4]; 6]> = (0..class_count)
        .map(|_| {
            std::array::from_fn(|_| {
                [
                    rng.random_range(0.1..0.25),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.0..TAU),
                ]
            })
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    labels.shuffle(&mut rng);
    let shape = Shape4::new(n, 3, size, size)?;
    let mut data = Vec::with_capacity(shape.len());
    for &label in &labels {
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
                    let mut p = 0.5;
                    for wave in &patterns[label][2 * c..2 * c + 2] {
                        p += wave[0] * (TAU * (wave[1] * u + wave[2] * v) + wave[3]).sin();
                    }
                    p += rng.random_range(-0.08..0.08);
                    data.push((p.clamp(0.0, 1.0) * 255.0).round() / 255.0);
                }
            }
        }
    }
    Dataset::new(Tensor4::from_vec(shape, data)?, labels, class_count, Split::Train)
}
