//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time so
//! inference is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Per-element multipliers applied in the forward pass; `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }

    pub fn factors(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

pub fn dropout_forward(x: &Tensor4, rate: f64, training: bool, seed: u64) -> Result<(Tensor4, DropoutMask)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<f64> = (0..x.data().len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&factors).for_each(|(v, f)| *v *= f);
    Ok((y, DropoutMask(Some(factors))))
}

pub fn dropout_backward(mask: &DropoutMask, dy: &Tensor4) -> Result<Tensor4> {
    match &mask.0 {
        None => Ok(dy.clone()),
        Some(f) if f.len() != dy.data().len() => Err(Error::Shape(format!(
            "dropout mask of {} elements applied to {}",
            f.len(),
            dy.shape()
        ))),
        Some(f) => {
            let mut dx = dy.clone();
            dx.data_mut().iter_mut().zip(f).for_each(|(v, k)| *v *= k);
            Ok(dx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let x = Tensor4::fill_random_gaussian(Shape4::new(2, 3, 4, 4).unwrap(), 0.0, 1.0, 0).unwrap();
        let (y, m) = dropout_forward(&x, 0.0, true, 1).unwrap();
        assert_eq!(y, x);
        assert!(m.is_identity());
        let (y, _) = dropout_forward(&x, 0.5, false, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn half_rate_preserves_expectation() {
        let x = Tensor4::full(Shape4::new(1, 1, 1000, 1000).unwrap(), 1.0);
        let (y, _) = dropout_forward(&x, 0.5, true, 3).unwrap();
        let mean = y.sum() / 1e6;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn backward_reuses_mask() {
        let x = Tensor4::full(Shape4::new(1, 2, 3, 3).unwrap(), 1.0);
        let (y, m) = dropout_forward(&x, 0.3, true, 9).unwrap();
        let dx = dropout_backward(&m, &x).unwrap();
        assert_eq!(dx, y);
        let (y2, _) = dropout_forward(&x, 0.3, true, 9).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn rate_outside_unit_interval_is_rejected() {
        let x = Tensor4::zeros(Shape4::new(1, 1, 1, 1).unwrap());
        assert!(matches!(dropout_forward(&x, 1.0, true, 0), Err(Error::Param(_))));
        assert!(matches!(
            dropout_forward(&x, -0.1, false, 0),
            Err(Error::Param(_))
        ));
    }
}
