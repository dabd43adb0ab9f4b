//! Independent oracles for the layer implementations: central finite
//! differences and an explicit banded-matrix forward for 1×1 channel-local
//! convolutions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    bn_backward, bn_backward_inference, bn_forward, bn_forward_frozen, clc_backward, clc_forward,
    dropout_backward, dropout_forward, maxpool_backward, maxpool_forward, pool_margin, relu_backward,
    relu_forward, softmax_xent, BnState, ClcSpec, ClcWeights, PoolSpec,
};
use crate::netbuilder::{Network, Pass};
use crate::seed;
use crate::tensor::{Shape4, Tensor4};

/// Finite-difference step used by the checks.
pub const STEP: f64 = 1e-5;
/// Relative-error tolerance used by the checks.
pub const TOLERANCE: f64 = 1e-4;
/// Minimum distance from a ReLU or max-pool kink for per-layer draws.
pub const KINK_MARGIN: f64 = 1e-3;

/// `|a - g| / max(|a|, |g|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of `f` at every coordinate of `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Param(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "function is not finite near coordinate {i} ({up}, {down})"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference gradient of a scalar function of a tensor.
pub fn finite_diff(mut f: impl FnMut(&Tensor4) -> Result<f64>, x: &Tensor4, h: f64) -> Result<Tensor4> {
    let shape = x.shape();
    let grad = numeric_gradient(|v| f(&Tensor4::from_parts(shape, v.to_vec())), x.data(), h)?;
    Ok(Tensor4::from_parts(shape, grad))
}

/// Comparison of one gradient group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub count: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn compare(name: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> GroupCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut consistent = analytic.len() == numeric.len();
    for (&a, &g) in analytic.iter().zip(numeric) {
        let r = rel_err(a, g);
        if r.is_nan() {
            consistent = false;
        }
        max_rel = max_rel.max(r);
        max_abs = max_abs.max((a - g).abs());
    }
    GroupCheck {
        name: name.to_string(),
        count: analytic.len(),
        max_rel,
        max_abs,
        tol,
        passed: consistent && max_rel <= tol,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub groups: Vec<GroupCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel).fold(0.0, f64::max)
    }

    pub fn push(&mut self, check: GroupCheck) {
        self.groups.push(check);
    }

    /// Folds `check` into the group of the same name, keeping the worst errors.
    pub fn merge(&mut self, check: GroupCheck) {
        match self.groups.iter_mut().find(|g| g.name == check.name) {
            Some(g) => {
                g.count += check.count;
                g.max_rel = g.max_rel.max(check.max_rel);
                g.max_abs = g.max_abs.max(check.max_abs);
                g.tol = g.tol.min(check.tol);
                g.passed &= check.passed;
            }
            None => self.groups.push(check),
        }
    }

    pub fn extend(&mut self, other: GradReport) {
        for g in other.groups {
            self.merge(g);
        }
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>10}  {:>10}  {:>8}  result",
            "group", "count", "max_rel", "max_abs", "tol"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<width$}  {:>8}  {:>10.3e}  {:>10.3e}  {:>8.1e}  {}",
                g.name,
                g.count,
                g.max_rel,
                g.max_abs,
                g.tol,
                if g.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// The explicit `(C - L + 1)·M × C` matrix of a 1×1 channel-local layer.
/// Row `j·M + m` is zero outside the band `[j, j + L)`.
pub fn banded_matrix(spec: &ClcSpec, w: &ClcWeights, c_in: usize) -> Result<Vec<Vec<f64>>> {
    if spec.kernel != (1, 1) {
        return Err(Error::Shape(format!(
            "banded oracle needs a 1x1 kernel, got {}x{}",
            spec.kernel.0, spec.kernel.1
        )));
    }
    let windows = spec.windows(c_in)?;
    if w.dims() != spec.weight_dims(c_in)? {
        return Err(Error::Shape("weights do not match the layer".into()));
    }
    let m_count = spec.filters_per_window;
    let mut rows = Vec::with_capacity(windows * m_count);
    for j in 0..windows {
        let set = if spec.shared { 0 } else { j };
        for m in 0..m_count {
            let mut row = vec![0.0; c_in];
            for l in 0..spec.window_len {
                row[j + l] = w.get(set, m, 0, 0, l);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Output of a 1×1 channel-local layer at one pixel via the banded matrix.
pub fn banded_oracle(x_pixel: &[f64], spec: &ClcSpec, w: &ClcWeights) -> Result<Vec<f64>> {
    let rows = banded_matrix(spec, w, x_pixel.len())?;
    Ok(rows
        .iter()
        .zip(&w.bias)
        .map(|(row, b)| row.iter().zip(x_pixel).map(|(a, x)| a * x).sum::<f64>() + b)
        .collect())
}

/// A loss evaluation of a network frozen at one input, one label set and one pass.
#[derive(Debug, Clone)]
pub struct NetworkProbe {
    pub net: Network,
    pub input: Tensor4,
    pub labels: Vec<usize>,
    pub pass: Pass,
}

impl NetworkProbe {
    pub fn loss(&self) -> Result<f64> {
        self.net.loss(&self.input, &self.labels, self.pass)
    }

    /// Backprop gradients, input first, then the parameter groups in order.
    pub fn analytic(&self) -> Result<Vec<(String, Vec<f64>)>> {
        let out = self
            .net
            .loss_and_gradients(&self.input, &self.labels, self.pass)?;
        let mut groups = vec![("input".to_string(), out.input_grad.into_vec())];
        groups.extend(out.grads.groups);
        Ok(groups)
    }

    /// Finite-difference gradients in the same order as [`Self::analytic`].
    pub fn numeric(&self, h: f64) -> Result<Vec<(String, Vec<f64>)>> {
        let shape = self.input.shape();
        let input = numeric_gradient(
            |v| {
                let x = Tensor4::from_parts(shape, v.to_vec());
                self.net.loss(&x, &self.labels, self.pass)
            },
            self.input.data(),
            h,
        )?;
        let mut groups = vec![("input".to_string(), input)];
        let mut net = self.net.clone();
        let names: Vec<(String, Vec<f64>)> = self
            .net
            .params()
            .into_iter()
            .map(|p| (p.name, p.values.to_vec()))
            .collect();
        for (gi, (name, values)) in names.into_iter().enumerate() {
            let mut grad = Vec::with_capacity(values.len());
            for (k, &v) in values.iter().enumerate() {
                let mut eval = |value: f64| -> Result<f64> {
                    net.params_mut()[gi].values[k] = value;
                    net.loss(&self.input, &self.labels, self.pass)
                };
                let up = eval(v + h)?;
                let down = eval(v - h)?;
                net.params_mut()[gi].values[k] = v;
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::Numeric(format!("loss is not finite near {name}[{k}]")));
                }
                grad.push((up - down) / (2.0 * h));
            }
            groups.push((name, grad));
        }
        Ok(groups)
    }
}

pub fn compare_groups(
    analytic: &[(String, Vec<f64>)],
    numeric: &[(String, Vec<f64>)],
    tol: f64,
) -> GradReport {
    let mut report = GradReport::default();
    for ((name, a), (other, g)) in analytic.iter().zip(numeric) {
        let mut check = compare(name, a, g, tol);
        if name != other {
            check.passed = false;
        }
        report.push(check);
    }
    if analytic.len() != numeric.len() {
        report.push(GroupCheck {
            name: "group count".into(),
            count: 0,
            max_rel: f64::INFINITY,
            max_abs: f64::INFINITY,
            tol,
            passed: false,
        });
    }
    report
}

/// Draws the probe input for [`check_network`]: Gaussian images, resampled
/// up to `tries` times until every ReLU input and max-pool top-two gap is at
/// least `margin` away from its kink. Returns the best draw and its margin.
pub fn draw_network_probe(
    net: &Network,
    input_shape: Shape4,
    pass: Pass,
    seed: u64,
    margin: f64,
    tries: usize,
) -> Result<(NetworkProbe, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0]));
    let labels: Vec<usize> = (0..input_shape.batch)
        .map(|_| rng.random_range(0..net.class_count()))
        .collect();
    let mut best: Option<(NetworkProbe, f64)> = None;
    for t in 0..tries.max(1) {
        let x = Tensor4::fill_random_gaussian(input_shape, 0.0, 1.0, seed::derive(seed, &[1, t as u64]))?;
        let (_, trace) = net.forward(&x, pass)?;
        let m = net.kink_margin(&trace)?;
        let probe = NetworkProbe {
            net: net.clone(),
            input: x,
            labels: labels.clone(),
            pass,
        };
        if best.as_ref().is_none_or(|(_, b)| m > *b) {
            best = Some((probe, m));
        }
        if m >= margin {
            break;
        }
    }
    Ok(best.expect("at least one draw"))
}

/// Checks backprop gradients of the loss with respect to the input and every
/// parameter group against central differences with step [`STEP`], in a
/// training-mode pass (batch statistics, fixed dropout masks).
pub fn check_network(net: &Network, input_shape: Shape4, tol: f64, seed: u64) -> Result<GradReport> {
    check_network_with(
        net,
        input_shape,
        tol,
        seed,
        Pass::Probe {
            seed: seed::derive(seed, &[2]),
        },
    )
}

pub fn check_network_with(
    net: &Network,
    input_shape: Shape4,
    tol: f64,
    seed: u64,
    pass: Pass,
) -> Result<GradReport> {
    let (probe, _) = draw_network_probe(net, input_shape, pass, seed, KINK_MARGIN, 64)?;
    let analytic = probe.analytic()?;
    let numeric = probe.numeric(STEP)?;
    Ok(compare_groups(&analytic, &numeric, tol))
}

/// Layer kinds covered by [`check_layer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerProbe {
    Clc,
    BatchNorm,
    Relu,
    MaxPool,
    Dropout,
    SoftmaxXent,
}

impl LayerProbe {
    pub const ALL: [LayerProbe; 6] = [
        LayerProbe::Clc,
        LayerProbe::BatchNorm,
        LayerProbe::Relu,
        LayerProbe::MaxPool,
        LayerProbe::Dropout,
        LayerProbe::SoftmaxXent,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerProbe::Clc => "clc",
            LayerProbe::BatchNorm => "bn",
            LayerProbe::Relu => "relu",
            LayerProbe::MaxPool => "maxpool",
            LayerProbe::Dropout => "dropout",
            LayerProbe::SoftmaxXent => "softmax_xent",
        }
    }
}

fn gaussian(shape: Shape4, rng: &mut ChaCha8Rng) -> Result<Tensor4> {
    Tensor4::fill_random_gaussian(shape, 0.0, 1.0, rng.random())
}

fn small_shape(rng: &mut ChaCha8Rng, c_max: usize, hw_max: usize) -> Shape4 {
    Shape4 {
        batch: rng.random_range(1..=2),
        channels: rng.random_range(1..=c_max),
        height: rng.random_range(1..=hw_max),
        width: rng.random_range(1..=hw_max),
    }
}

/// Projection `sum(r ⊙ y)` of a layer output onto a fixed random tensor.
fn project(r: &Tensor4, y: &Tensor4) -> Result<f64> {
    if r.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "projection {} vs output {}",
            r.shape(),
            y.shape()
        )));
    }
    Ok(r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum())
}

/// `draws` random shapes and parameters of one layer kind, each checked
/// against central differences. Inputs of ReLU and max pooling are
/// resampled until they sit at least [`KINK_MARGIN`] from a kink.
pub fn check_layer(kind: LayerProbe, draws: usize, tol: f64, seed: u64) -> Result<GradReport> {
    let mut report = GradReport::default();
    let h = STEP;
    for d in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[kind as u64, d as u64]));
        let prefix = kind.name();
        match kind {
            LayerProbe::Clc => {
                let (spec, shape) = loop {
                    let c_in = rng.random_range(1..=6);
                    let kernel = (rng.random_range(1..=3), rng.random_range(1..=3));
                    let spec = ClcSpec {
                        kernel,
                        window_len: rng.random_range(1..=c_in),
                        filters_per_window: rng.random_range(1..=3),
                        shared: rng.random_bool(0.5),
                        stride: (rng.random_range(1..=2), rng.random_range(1..=2)),
                        pad: (rng.random_range(0..kernel.0), rng.random_range(0..kernel.1)),
                    };
                    let shape = Shape4 {
                        channels: c_in,
                        ..small_shape(&mut rng, 1, 5)
                    };
                    if spec.output_shape(shape).is_ok() {
                        break (spec, shape);
                    }
                };
                let c_in = shape.channels;
                let mut w = ClcWeights::he_init(&spec, c_in, rng.random())?;
                for b in &mut w.bias {
                    *b = rng.random_range(-1.0..1.0);
                }
                let x = gaussian(shape, &mut rng)?;
                let r = gaussian(spec.output_shape(shape)?, &mut rng)?;
                let (dx, dw) = clc_backward(&x, &spec, &w, &r)?;
                let nx = finite_diff(|x| project(&r, &clc_forward(x, &spec, &w)?), &x, h)?;
                report.merge(compare(&format!("{prefix}.input"), dx.data(), nx.data(), tol));
                let nw = numeric_gradient(
                    |v| {
                        let w = ClcWeights::from_parts(&spec, c_in, v.to_vec(), w.bias.clone())?;
                        project(&r, &clc_forward(&x, &spec, &w)?)
                    },
                    &w.weights,
                    h,
                )?;
                report.merge(compare(&format!("{prefix}.weight"), &dw.weights, &nw, tol));
                let nb = numeric_gradient(
                    |v| {
                        let w = ClcWeights::from_parts(&spec, c_in, w.weights.clone(), v.to_vec())?;
                        project(&r, &clc_forward(&x, &spec, &w)?)
                    },
                    &w.bias,
                    h,
                )?;
                report.merge(compare(&format!("{prefix}.bias"), &dw.bias, &nb, tol));
            }
            LayerProbe::BatchNorm => {
                // With two values per channel the normalised output is ±1 up to
                // eps, so the input gradient is O(eps) and differences see only roundoff.
                let shape = loop {
                    let s = small_shape(&mut rng, 4, 4);
                    if s.batch * s.plane_len() >= 3 {
                        break s;
                    }
                };
                let c = shape.channels;
                let mut state = BnState::new(c);
                for i in 0..c {
                    state.gamma[i] = rng.random_range(0.5..1.5);
                    state.beta[i] = rng.random_range(-1.0..1.0);
                    state.running_mean[i] = rng.random_range(-1.0..1.0);
                    state.running_var[i] = rng.random_range(0.5..2.0);
                }
                let x = Tensor4::fill_random_gaussian(shape, 0.5, 2.0, rng.random())?;
                let r = gaussian(shape, &mut rng)?;
                for training in [true, false] {
                    let mode = if training { "train" } else { "eval" };
                    let forward = |x: &Tensor4, s: &BnState| -> Result<Tensor4> {
                        if training {
                            bn_forward_frozen(x, s)
                        } else {
                            bn_forward(x, &mut s.clone(), false)
                        }
                    };
                    let (dx, dgamma, dbeta) = if training {
                        bn_backward(&x, &state, &r)?
                    } else {
                        bn_backward_inference(&x, &state, &r)?
                    };
                    let nx = finite_diff(|x| project(&r, &forward(x, &state)?), &x, h)?;
                    report.merge(compare(
                        &format!("{prefix}.{mode}.input"),
                        dx.data(),
                        nx.data(),
                        tol,
                    ));
                    let ng = numeric_gradient(
                        |v| {
                            let mut s = state.clone();
                            s.gamma = v.to_vec();
                            project(&r, &forward(&x, &s)?)
                        },
                        &state.gamma,
                        h,
                    )?;
                    report.merge(compare(&format!("{prefix}.{mode}.gamma"), &dgamma, &ng, tol));
                    let nb = numeric_gradient(
                        |v| {
                            let mut s = state.clone();
                            s.beta = v.to_vec();
                            project(&r, &forward(&x, &s)?)
                        },
                        &state.beta,
                        h,
                    )?;
                    report.merge(compare(&format!("{prefix}.{mode}.beta"), &dbeta, &nb, tol));
                }
            }
            LayerProbe::Relu => {
                let shape = small_shape(&mut rng, 4, 4);
                let mut x = gaussian(shape, &mut rng)?;
                for v in x.data_mut() {
                    while v.abs() < KINK_MARGIN {
                        *v = rng.random_range(-3.0..3.0);
                    }
                }
                let r = gaussian(shape, &mut rng)?;
                let dx = relu_backward(&x, &r)?;
                let nx = finite_diff(|x| project(&r, &relu_forward(x)), &x, h)?;
                report.merge(compare(&format!("{prefix}.input"), dx.data(), nx.data(), tol));
            }
            LayerProbe::MaxPool => {
                let (spec, shape) = loop {
                    let window = (rng.random_range(1..=3), rng.random_range(1..=3));
                    let spec = PoolSpec::new(
                        window,
                        (rng.random_range(1..=3), rng.random_range(1..=3)),
                        [
                            rng.random_range(0..window.0),
                            rng.random_range(0..window.0),
                            rng.random_range(0..window.1),
                            rng.random_range(0..window.1),
                        ],
                    );
                    let shape = small_shape(&mut rng, 3, 6);
                    if spec.output_shape(shape).is_ok() {
                        break (spec, shape);
                    }
                };
                let x = loop {
                    let x = gaussian(shape, &mut rng)?;
                    if pool_margin(&x, &spec, f64::NEG_INFINITY)? >= KINK_MARGIN {
                        break x;
                    }
                };
                let (y, record) = maxpool_forward(&x, &spec)?;
                let r = gaussian(y.shape(), &mut rng)?;
                let dx = maxpool_backward(&record, &r)?;
                let nx = finite_diff(|x| project(&r, &maxpool_forward(x, &spec)?.0), &x, h)?;
                report.merge(compare(&format!("{prefix}.input"), dx.data(), nx.data(), tol));
            }
            LayerProbe::Dropout => {
                let shape = small_shape(&mut rng, 4, 4);
                let rate = rng.random_range(0.0..0.9);
                let mask_seed: u64 = rng.random();
                let x = gaussian(shape, &mut rng)?;
                let r = gaussian(shape, &mut rng)?;
                let (_, mask) = dropout_forward(&x, rate, true, mask_seed)?;
                let dx = dropout_backward(&mask, &r)?;
                let nx = finite_diff(
                    |x| project(&r, &dropout_forward(x, rate, true, mask_seed)?.0),
                    &x,
                    h,
                )?;
                report.merge(compare(&format!("{prefix}.input"), dx.data(), nx.data(), tol));
            }
            LayerProbe::SoftmaxXent => {
                let classes = rng.random_range(2..=10);
                let shape = Shape4 {
                    batch: rng.random_range(1..=4),
                    channels: classes,
                    height: 1,
                    width: 1,
                };
                // Wider logits drive class probabilities below 1e-8, where the
                // gradient is smaller than the roundoff of the loss difference.
                let logits = Tensor4::fill_random_gaussian(shape, 0.0, 2.0, rng.random())?;
                let labels: Vec<usize> = (0..shape.batch).map(|_| rng.random_range(0..classes)).collect();
                let (_, dx) = softmax_xent(&logits, &labels)?;
                let nx = finite_diff(|x| Ok(softmax_xent(x, &labels)?.0), &logits, h)?;
                report.merge(compare(&format!("{prefix}.input"), dx.data(), nx.data(), tol));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuilder::{Layer, LayerKind, NetworkConfig};

    fn shape(b: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(b, c, h, w).unwrap()
    }

    #[test]
    fn quadratic_and_linear() {
        let x = Tensor4::from_vec(shape(1, 1, 1, 1), vec![3.0]).unwrap();
        let g = finite_diff(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-3).unwrap();
        assert!((g.data()[0] - 6.0).abs() <= 1e-6);
        let x = Tensor4::fill_random_gaussian(shape(2, 2, 2, 2), 0.0, 5.0, 1).unwrap();
        let g = finite_diff(|t| Ok(t.sum()), &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn non_finite_function_is_a_numeric_error() {
        let x = Tensor4::zeros(shape(1, 1, 1, 2));
        let r = finite_diff(|t| Ok(1.0 / t.data()[0].abs().min(0.0)), &x, 1e-3);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert!(matches!(finite_diff(|_| Ok(0.0), &x, 0.0), Err(Error::Param(_))));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert_eq!(rel_err(1e-10, 0.0), 1e-2);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn banded_oracle_examples() {
        let spec = ClcSpec::sparse(2, 1, false);
        let w = ClcWeights::from_parts(&spec, 4, vec![1.0; 6], vec![0.0; 3]).unwrap();
        assert_eq!(
            banded_oracle(&[1.0, 2.0, 3.0, 4.0], &spec, &w).unwrap(),
            vec![3.0, 5.0, 7.0]
        );

        let dense = ClcSpec::dense(3, 2, 1);
        let w =
            ClcWeights::from_parts(&dense, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5, -0.5]).unwrap();
        assert_eq!(
            banded_oracle(&[1.0, 1.0, 1.0], &dense, &w).unwrap(),
            vec![6.5, 14.5]
        );

        let shared = ClcSpec::sparse(3, 1, true);
        let w = ClcWeights::from_parts(&shared, 6, vec![1.0, -2.0, 3.0], vec![0.0; 4]).unwrap();
        let rows = banded_matrix(&shared, &w, 6).unwrap();
        for j in 1..rows.len() {
            assert_eq!(rows[j][j..j + 3], rows[0][..3]);
            let mut shifted = rows[j - 1].clone();
            shifted.rotate_right(1);
            assert_eq!(rows[j], shifted);
        }
    }

    #[test]
    fn banded_oracle_rejects_spatial_kernels() {
        let spec = ClcSpec::sparse(2, 3, false);
        let w = ClcWeights::zeros(&spec, 4).unwrap();
        assert!(matches!(
            banded_oracle(&[0.0; 4], &spec, &w),
            Err(Error::Shape(_))
        ));
    }

    fn bare_config(input: Shape4, classes: usize) -> NetworkConfig {
        NetworkConfig {
            name: "probe".into(),
            input,
            class_count: classes,
            batch_norm: false,
            blocks: vec![],
            transitions: vec![],
        }
    }

    #[test]
    fn single_relu_network_passes() {
        let input = shape(2, 5, 1, 1);
        let net = Network::from_layers(
            bare_config(input, 5),
            vec![
                Layer {
                    name: "relu".into(),
                    kind: LayerKind::Relu,
                },
                Layer {
                    name: "head".into(),
                    kind: LayerKind::Head,
                },
            ],
        );
        let report = check_network(&net, input, TOLERANCE, 3).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn two_layer_clc_network_matches_to_1e_6() {
        let input = shape(1, 4, 3, 3);
        let first = ClcSpec::sparse(2, 3, false);
        let second = ClcSpec {
            pad: (0, 0),
            ..ClcSpec::dense(3, 5, 3)
        };
        let mut w1 = ClcWeights::he_init(&first, 4, 1).unwrap();
        w1.bias = vec![0.1, -0.2, 0.3];
        let w2 = ClcWeights::he_init(&second, 3, 2).unwrap();
        let net = Network::from_layers(
            bare_config(input, 5),
            vec![
                Layer {
                    name: "c1".into(),
                    kind: LayerKind::Clc {
                        spec: first,
                        weights: w1,
                        bias: true,
                    },
                },
                Layer {
                    name: "c2".into(),
                    kind: LayerKind::Clc {
                        spec: second,
                        weights: w2,
                        bias: true,
                    },
                },
                Layer {
                    name: "head".into(),
                    kind: LayerKind::Head,
                },
            ],
        );
        let report = check_network(&net, input, 1e-6, 9).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.groups.len(), 5);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let input = shape(1, 4, 3, 3);
        let spec = ClcSpec {
            pad: (0, 0),
            ..ClcSpec::dense(4, 3, 3)
        };
        let net = Network::from_layers(
            bare_config(input, 3),
            vec![
                Layer {
                    name: "c".into(),
                    kind: LayerKind::Clc {
                        spec,
                        weights: ClcWeights::he_init(&spec, 4, 4).unwrap(),
                        bias: true,
                    },
                },
                Layer {
                    name: "head".into(),
                    kind: LayerKind::Head,
                },
            ],
        );
        let (probe, _) = draw_network_probe(&net, input, Pass::Eval, 1, KINK_MARGIN, 1).unwrap();
        let mut analytic = probe.analytic().unwrap();
        let numeric = probe.numeric(STEP).unwrap();
        assert!(compare_groups(&analytic, &numeric, TOLERANCE).passed());
        analytic[1].1[7] += 1e-3;
        let report = compare_groups(&analytic, &numeric, TOLERANCE);
        assert!(!report.passed());
        assert!(!report.groups[1].passed);
    }

    #[test]
    fn every_layer_kind_passes_a_few_draws() {
        for kind in LayerProbe::ALL {
            let report = check_layer(kind, 8, TOLERANCE, 11).unwrap();
            assert!(report.passed(), "{}\n{report}", kind.name());
        }
    }

    #[test]
    fn report_table_lists_every_group() {
        let mut r = GradReport::default();
        r.merge(compare("a", &[1.0], &[1.0], 1e-4));
        r.merge(compare("a", &[1.0], &[2.0], 1e-4));
        r.merge(compare("bb", &[0.0], &[0.0], 1e-4));
        assert_eq!(r.groups.len(), 2);
        assert_eq!(r.groups[0].count, 2);
        assert!(!r.passed());
        let text = r.to_string();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("FAIL"));
    }
}
