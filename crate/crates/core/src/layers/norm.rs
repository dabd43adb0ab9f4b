//! Per-channel batch normalisation.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the newest batch in the running averages.
    pub momentum: f64,
    pub eps: f64,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's mean and biased variance over `count` values into
    /// the running averages.
    pub fn absorb(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let n = count as f64;
        let k = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - k) * self.running_mean[c] + k * mean[c];
            self.running_var[c] = (1.0 - k) * self.running_var[c] + k * var[c] * n / (n - 1.0);
        }
    }

    pub(crate) fn check(&self, x: &Tensor4) -> Result<()> {
        let c = self.channels();
        if x.shape().channels != c
            || self.beta.len() != c
            || self.running_mean.len() != c
            || self.running_var.len() != c
        {
            return Err(Error::Shape(format!(
                "batch norm over {c} channels applied to {}",
                x.shape()
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Param(format!(
                "batch norm needs eps > 0 and momentum in (0,1), got {} and {}",
                self.eps, self.momentum
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and biased variance over (batch, height, width).
pub(crate) fn batch_stats(x: &Tensor4) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = x.shape();
    let count = s.batch * s.plane_len();
    if count < 2 {
        return Err(Error::DegenerateStats(format!(
            "training-mode batch norm needs at least 2 values per channel, input is {s}"
        )));
    }
    let plane = s.plane_len();
    let mut mean = vec![0.0; s.channels];
    let mut var = vec![0.0; s.channels];
    for c in 0..s.channels {
        let planes = || (0..s.batch).map(move |b| &x.image(b)[c * plane..(c + 1) * plane]);
        let mu = planes().map(|p| p.iter().sum::<f64>()).sum::<f64>() / count as f64;
        let v = planes()
            .map(|p| p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
            .sum::<f64>()
            / count as f64;
        mean[c] = mu;
        var[c] = v;
    }
    Ok((mean, var))
}

pub(crate) fn normalize(x: &Tensor4, s: &BnState, mean: &[f64], var: &[f64]) -> Tensor4 {
    let shape = x.shape();
    let plane = shape.plane_len();
    let mut out = x.clone();
    for b in 0..shape.batch {
        let img = out.image_mut(b);
        for c in 0..shape.channels {
            let scale = s.gamma[c] / (var[c] + s.eps).sqrt();
            let shift = s.beta[c] - mean[c] * scale;
            img[c * plane..(c + 1) * plane]
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

/// Batch normalisation. In training mode the batch statistics are used and
/// folded into the running averages (variance with Bessel's correction);
/// otherwise the running statistics are used and `s` is left untouched.
pub fn bn_forward(x: &Tensor4, s: &mut BnState, training: bool) -> Result<Tensor4> {
    s.check(x)?;
    if !training {
        return Ok(normalize(x, s, &s.running_mean, &s.running_var));
    }
    let (mean, var) = batch_stats(x)?;
    let out = normalize(x, s, &mean, &var);
    s.absorb(&mean, &var, x.shape().batch * x.shape().plane_len());
    Ok(out)
}

/// Training-mode forward that leaves the running statistics alone.
pub fn bn_forward_frozen(x: &Tensor4, s: &BnState) -> Result<Tensor4> {
    s.check(x)?;
    let (mean, var) = batch_stats(x)?;
    Ok(normalize(x, s, &mean, &var))
}

/// Gradients of `sum(dy ⊙ bn_forward(x, s, true))` with respect to `x`,
/// `gamma` and `beta`.
pub fn bn_backward(x: &Tensor4, s: &BnState, dy: &Tensor4) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    s.check(x)?;
    if dy.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "batch norm gradient {} does not match input {}",
            dy.shape(),
            x.shape()
        )));
    }
    let (mean, var) = batch_stats(x)?;
    let shape = x.shape();
    let plane = shape.plane_len();
    let n = (shape.batch * plane) as f64;
    let mut dx = Tensor4::zeros(shape);
    let mut dgamma = vec![0.0; shape.channels];
    let mut dbeta = vec![0.0; shape.channels];

    for c in 0..shape.channels {
        let inv_std = 1.0 / (var[c] + s.eps).sqrt();
        let range = c * plane..(c + 1) * plane;
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for b in 0..shape.batch {
            for (xv, g) in x.image(b)[range.clone()].iter().zip(&dy.image(b)[range.clone()]) {
                sum_dy += g;
                sum_dy_xhat += g * (xv - mean[c]) * inv_std;
            }
        }
        dbeta[c] = sum_dy;
        dgamma[c] = sum_dy_xhat;
        let k = s.gamma[c] * inv_std / n;
        for b in 0..shape.batch {
            let xs = &x.image(b)[range.clone()];
            let gs = &dy.image(b)[range.clone()];
            let out = &mut dx.image_mut(b)[range.clone()];
            for ((o, xv), g) in out.iter_mut().zip(xs).zip(gs) {
                let xhat = (xv - mean[c]) * inv_std;
                *o = k * (n * g - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Gradients of `sum(dy ⊙ bn_forward(x, s, false))`: the running statistics
/// are constants, so the layer is a per-channel affine map.
pub fn bn_backward_inference(
    x: &Tensor4,
    s: &BnState,
    dy: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    s.check(x)?;
    if dy.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "batch norm gradient {} does not match input {}",
            dy.shape(),
            x.shape()
        )));
    }
    let shape = x.shape();
    let plane = shape.plane_len();
    let mut dx = dy.clone();
    let mut dgamma = vec![0.0; shape.channels];
    let mut dbeta = vec![0.0; shape.channels];
    for b in 0..shape.batch {
        let xs = x.image(b);
        let gs = dy.image(b);
        let out = dx.image_mut(b);
        for c in 0..shape.channels {
            let inv_std = 1.0 / (s.running_var[c] + s.eps).sqrt();
            for i in c * plane..(c + 1) * plane {
                dbeta[c] += gs[i];
                dgamma[c] += gs[i] * (xs[i] - s.running_mean[c]) * inv_std;
                out[i] = gs[i] * s.gamma[c] * inv_std;
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn shape(b: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(b, c, h, w).unwrap()
    }

    #[test]
    fn constant_channel_normalises_to_zero() {
        let x = Tensor4::full(shape(2, 1, 3, 3), 4.5);
        let mut s = BnState::new(1);
        let y = bn_forward(&x, &mut s, true).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor4::fill_random_gaussian(shape(3, 2, 2, 2), 1.0, 2.0, 0).unwrap();
        let mut s = BnState::new(2);
        s.gamma = vec![0.0, 0.0];
        s.beta = vec![0.5, -1.5];
        let y = bn_forward(&x, &mut s, true).unwrap();
        for b in 0..3 {
            assert!(y.image(b)[..4].iter().all(|&v| v == 0.5));
            assert!(y.image(b)[4..].iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn two_values_map_to_minus_one_and_one() {
        let x = Tensor4::from_vec(shape(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let mut s = BnState::new(1);
        s.eps = 1e-14;
        let y = bn_forward(&x, &mut s, true).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        // running stats moved 10% toward mean 2 and unbiased variance 2
        assert!((s.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((s.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn inference_uses_running_stats() {
        let x = Tensor4::from_vec(shape(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let mut s = BnState::new(1);
        s.running_mean = vec![1.0];
        s.running_var = vec![4.0 - s.eps];
        let before = s.clone();
        let y = bn_forward(&x, &mut s, false).unwrap();
        assert_eq!(s, before);
        assert!((y.data()[0]).abs() < 1e-15);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_value_per_channel_is_degenerate_in_training() {
        let x = Tensor4::zeros(shape(1, 3, 1, 1));
        let mut s = BnState::new(3);
        assert!(matches!(
            bn_forward(&x, &mut s, true),
            Err(Error::DegenerateStats(_))
        ));
        assert!(bn_forward(&x, &mut s, false).is_ok());
    }

    #[test]
    fn zero_cotangent_and_beta_gradient() {
        let x = Tensor4::fill_random_gaussian(shape(2, 3, 2, 2), 0.0, 1.0, 1).unwrap();
        let s = BnState::new(3);
        let (dx, dg, db) = bn_backward(&x, &s, &Tensor4::zeros(x.shape())).unwrap();
        assert!(dx.data().iter().chain(&dg).chain(&db).all(|&v| v == 0.0));

        let dy = Tensor4::fill_random_gaussian(x.shape(), 0.0, 1.0, 2).unwrap();
        let (_, _, db) = bn_backward(&x, &s, &dy).unwrap();
        for (c, got) in db.iter().enumerate() {
            let want: f64 = (0..2)
                .map(|b| dy.image(b)[c * 4..(c + 1) * 4].iter().sum::<f64>())
                .sum();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_forward_matches_training_forward() {
        let x = Tensor4::fill_random_gaussian(shape(2, 3, 2, 2), 0.0, 1.0, 4).unwrap();
        let mut s = BnState::new(3);
        let frozen = bn_forward_frozen(&x, &s).unwrap();
        assert_eq!(frozen, bn_forward(&x, &mut s, true).unwrap());
    }
}
