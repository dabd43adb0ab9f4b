//! Learning-rate schedule and the SGD update.

use crate::error::{Error, Result};

/// Epochs `start..=end` use `lr_start - (epoch - start) * lr_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub lr_start: f64,
    pub lr_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub segments: Vec<Segment>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
}

/// Peak learning rate of the default desk-scale schedule.
pub const DESK_PEAK_LR: f64 = 0.1;

impl TrainSchedule {
    /// 0.5 for epochs 1-80, then down by 0.005 per epoch to 0.005 at
    /// epoch 180, then down by 0.0001 per epoch until epoch 230.
    pub fn full() -> Self {
        TrainSchedule {
            segments: vec![
                Segment {
                    start: 1,
                    end: 80,
                    lr_start: 0.5,
                    lr_step: 0.0,
                },
                Segment {
                    start: 81,
                    end: 180,
                    lr_start: 0.5,
                    lr_step: 0.005,
                },
                Segment {
                    start: 181,
                    end: 230,
                    lr_start: 0.005,
                    lr_step: 0.0001,
                },
            ],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            total_epochs: 230,
        }
    }

    /// The full schedule with every rate scaled so the peak is [`DESK_PEAK_LR`].
    pub fn desk() -> Self {
        Self::full().scaled(DESK_PEAK_LR / 0.5)
    }

    /// Multiplies every learning rate by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for s in &mut self.segments {
            s.lr_start *= factor;
            s.lr_step *= factor;
        }
        self
    }

    /// Segments contiguous from epoch 1 to `total_epochs`, rates positive,
    /// momentum in [0, 1), decay and batch size sensible.
    pub fn validate(&self) -> Result<()> {
        let mut next = 1;
        for s in &self.segments {
            if s.start != next || s.end < s.start {
                return Err(Error::Config(format!(
                    "schedule segment {}..{} does not continue at epoch {next}",
                    s.start, s.end
                )));
            }
            let last = s.lr_start - (s.end - s.start) as f64 * s.lr_step;
            if !(s.lr_start > 0.0 && last > 0.0 && s.lr_step.is_finite()) {
                return Err(Error::Config(format!(
                    "segment {}..{} has non-positive learning rates",
                    s.start, s.end
                )));
            }
            next = s.end + 1;
        }
        if next != self.total_epochs + 1 {
            return Err(Error::Config(format!(
                "schedule covers epochs 1..{} but training lasts {}",
                next - 1,
                self.total_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
            || self.batch_size == 0
        {
            return Err(Error::Config(
                "momentum, weight decay or batch size out of range".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        lr_at_epoch(self, epoch)
    }
}

/// Learning rate of `epoch` (1-based). Rates are rounded to 1e-12 so that
/// the decimal anchors come out exact despite binary step arithmetic.
pub fn lr_at_epoch(s: &TrainSchedule, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > s.total_epochs {
        return Err(Error::Range(format!(
            "epoch {epoch} outside 1..={}",
            s.total_epochs
        )));
    }
    let seg = s
        .segments
        .iter()
        .find(|seg| (seg.start..=seg.end).contains(&epoch))
        .ok_or_else(|| Error::Range(format!("no schedule segment covers epoch {epoch}")))?;
    let lr = seg.lr_start - (epoch - seg.start) as f64 * seg.lr_step;
    Ok((lr * 1e12).round() / 1e12)
}

/// One momentum step: `v = momentum * v - lr * (g + decay * p)`, `p += v`.
/// Returns the offending index if an updated value is not finite; the
/// parameters are left partially updated in that case.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> std::result::Result<(), usize> {
    assert_eq!(params.len(), grads.len(), "gradient length");
    assert_eq!(params.len(), velocity.len(), "velocity length");
    for (i, ((p, &g), v)) in params.iter_mut().zip(grads).zip(velocity.iter_mut()).enumerate() {
        *v = momentum * *v - lr * (g + weight_decay * *p);
        *p += *v;
        if !p.is_finite() || !v.is_finite() {
            return Err(i);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchors() {
        let s = TrainSchedule::full();
        s.validate().unwrap();
        for e in 1..=80 {
            assert_eq!(s.lr_at_epoch(e).unwrap(), 0.5);
        }
        assert_eq!(s.lr_at_epoch(81).unwrap(), 0.5);
        assert_eq!(s.lr_at_epoch(180).unwrap(), 0.005);
        assert_eq!(s.lr_at_epoch(181).unwrap(), 0.005);
        assert_eq!(s.lr_at_epoch(200).unwrap(), 0.0031);
        assert_eq!(s.lr_at_epoch(230).unwrap(), 0.0001);
        assert!(matches!(s.lr_at_epoch(0), Err(Error::Range(_))));
        assert!(matches!(s.lr_at_epoch(231), Err(Error::Range(_))));
    }

    #[test]
    fn non_increasing_and_positive() {
        for s in [TrainSchedule::full(), TrainSchedule::desk()] {
            let lrs: Vec<f64> = (1..=230).map(|e| s.lr_at_epoch(e).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
            assert!(lrs.iter().all(|&l| l > 0.0));
        }
        assert_eq!(TrainSchedule::desk().lr_at_epoch(1).unwrap(), 0.1);
    }

    #[test]
    fn broken_schedules_are_rejected() {
        let mut s = TrainSchedule::full();
        s.segments[1].start = 82;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::full();
        s.total_epochs = 240;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::full();
        s.segments[2].lr_step = 0.001;
        assert!(s.validate().is_err());
    }

    #[test]
    fn vanilla_and_zero_gradient() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![0.95, -2.1]);
        let mut q = vec![3.0, 4.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut q, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(q, vec![3.0, 4.0]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v[0] + 0.19).abs() < 1e-15);
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn overflow_is_reported() {
        let mut p = vec![1.0, 1e308];
        let mut v = vec![0.0; 2];
        assert_eq!(sgd_step(&mut p, &[0.0, -1e308], &mut v, 10.0, 0.0, 0.0), Err(1));
    }

    proptest! {
        #[test]
        fn small_step_decreases_a_convex_quadratic(
            a in proptest::collection::vec(0.1f64..10.0, 1..8),
            seed in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let mut p: Vec<f64> = seed[..a.len()].to_vec();
            prop_assume!(p.iter().any(|v| v.abs() > 1e-3));
            let f = |p: &[f64]| p.iter().zip(&a).map(|(x, k)| k * x * x).sum::<f64>();
            let g: Vec<f64> = p.iter().zip(&a).map(|(x, k)| 2.0 * k * x).collect();
            let before = f(&p);
            let mut v = vec![0.0; p.len()];
            sgd_step(&mut p, &g, &mut v, 0.01, 0.9, 0.0).unwrap();
            prop_assert!(f(&p) < before);
        }

        #[test]
        fn group_order_does_not_matter(
            groups in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 1..5), 1..5),
        ) {
            let grads: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|x| x * 0.5 - 0.1).collect()).collect();
            let run = |order: Vec<usize>| {
                let mut p = groups.clone();
                let mut v: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
                for i in order {
                    sgd_step(&mut p[i], &grads[i], &mut v[i], 0.05, 0.0, 0.0).unwrap();
                }
                p
            };
            let forward: Vec<usize> = (0..groups.len()).collect();
            let backward: Vec<usize> = forward.iter().rev().copied().collect();
            prop_assert_eq!(run(forward), run(backward));
        }
    }
}
