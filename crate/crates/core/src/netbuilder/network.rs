//! Runnable networks built from a [`NetworkConfig`].

use crate::error::{Error, Result};
use crate::layers::{
    self, argmax_classes, bn_backward, bn_backward_inference, clc_backward, clc_forward, dropout_backward,
    dropout_forward, maxpool_backward, maxpool_forward, pool_margin, relu_backward, relu_forward,
    softmax_xent, BnState, ClcSpec, ClcWeights, DropoutMask, PoolRecord, PoolSpec,
};
use crate::seed;
use crate::tensor::Tensor4;

use super::config::{LayerSpec, NetworkConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// `bias` is false when a batch norm follows: the norm cancels any
    /// per-channel shift, so the bias is held at zero and not trained.
    Clc {
        spec: ClcSpec,
        weights: ClcWeights,
        bias: bool,
    },
    BatchNorm(BnState),
    Relu,
    MaxPool(PoolSpec),
    Dropout(f64),
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

/// How a forward pass treats batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Batch statistics and dropout; running statistics are meant to be
    /// absorbed afterwards with [`Network::absorb_batch_stats`].
    Train { seed: u64 },
    /// Same arithmetic as `Train`, used when the running statistics must not move.
    Probe { seed: u64 },
    /// Running statistics, dropout off.
    Eval,
}

impl Pass {
    fn training(&self) -> bool {
        !matches!(self, Pass::Eval)
    }

    fn seed(&self) -> u64 {
        match *self {
            Pass::Train { seed } | Pass::Probe { seed } => seed,
            Pass::Eval => 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Saved {
    Input(Tensor4),
    Bn {
        input: Tensor4,
        batch: Option<(Vec<f64>, Vec<f64>)>,
    },
    Pool {
        input: Tensor4,
        record: PoolRecord,
    },
    Dropout(DropoutMask),
    Nothing,
}

/// Values a forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    saved: Vec<Saved>,
    pass: Pass,
}

/// A named parameter tensor. `decay` marks convolution weights, the only
/// parameters subject to weight decay.
#[derive(Debug)]
pub struct Param<'a> {
    pub name: String,
    pub values: &'a [f64],
    pub decay: bool,
}

#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub decay: bool,
}

/// Gradients in the same order as [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub groups: Vec<(String, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub logits: Tensor4,
    pub grads: Gradients,
    pub input_grad: Tensor4,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
}

/// Builds a network with He-initialised convolutions, deterministic in `seed`.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    let resolved = config.resolve(1)?;
    let mut layers = Vec::with_capacity(resolved.len());
    let next_is_bn: Vec<bool> = (0..resolved.len())
        .map(|i| matches!(resolved.get(i + 1).map(|r| &r.spec), Some(LayerSpec::BatchNorm)))
        .collect();
    for (i, r) in resolved.into_iter().enumerate() {
        let kind = match r.spec {
            LayerSpec::Clc(spec) => LayerKind::Clc {
                spec,
                weights: ClcWeights::he_init(&spec, r.input.channels, seed::derive(seed, &[i as u64]))?,
                bias: !next_is_bn[i],
            },
            LayerSpec::BatchNorm => LayerKind::BatchNorm(BnState::new(r.input.channels)),
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::MaxPool(p) => LayerKind::MaxPool(p),
            LayerSpec::Dropout(rate) => LayerKind::Dropout(rate),
            LayerSpec::SoftmaxHead => LayerKind::Head,
        };
        layers.push(Layer { name: r.name, kind });
    }
    Ok(Network {
        config: config.clone(),
        layers,
    })
}

impl Network {
    /// Wraps explicit layers. Used by tests and tools that assemble
    /// networks outside the block grammar.
    pub fn from_layers(config: NetworkConfig, layers: Vec<Layer>) -> Self {
        Network { config, layers }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub fn forward(&self, x: &Tensor4, pass: Pass) -> Result<(Tensor4, Trace)> {
        self.run(x, pass, true)
    }

    /// Forward pass; when `keep_all` is false nothing is saved for backward.
    fn run(&self, x: &Tensor4, pass: Pass, keep_all: bool) -> Result<(Tensor4, Trace)> {
        let want = self.config.input;
        let got = x.shape();
        if (got.channels, got.height, got.width) != (want.channels, want.height, want.width) {
            return Err(Error::Shape(format!(
                "network expects {}x{}x{} images, got {got}",
                want.channels, want.height, want.width
            )));
        }
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, keep) = match &layer.kind {
                LayerKind::Clc { spec, weights, .. } => (clc_forward(&h, spec, weights)?, Saved::Input(h)),
                LayerKind::BatchNorm(state) => {
                    if pass.training() {
                        let (mean, var) = layers::batch_stats(&h)?;
                        state.check(&h)?;
                        let y = layers::normalize(&h, state, &mean, &var);
                        (
                            y,
                            Saved::Bn {
                                input: h,
                                batch: Some((mean, var)),
                            },
                        )
                    } else {
                        state.check(&h)?;
                        let y = layers::normalize(&h, state, &state.running_mean, &state.running_var);
                        (
                            y,
                            Saved::Bn {
                                input: h,
                                batch: None,
                            },
                        )
                    }
                }
                LayerKind::Relu => (relu_forward(&h), Saved::Input(h)),
                LayerKind::MaxPool(spec) => {
                    let (y, rec) = maxpool_forward(&h, spec)?;
                    (
                        y,
                        Saved::Pool {
                            input: h,
                            record: rec,
                        },
                    )
                }
                LayerKind::Dropout(rate) => {
                    let seed = seed::derive(pass.seed(), &[i as u64]);
                    let (y, mask) = dropout_forward(&h, *rate, pass.training(), seed)?;
                    (y, Saved::Dropout(mask))
                }
                LayerKind::Head => (h, Saved::Nothing),
            };
            saved.push(if keep_all { keep } else { Saved::Nothing });
            h = next;
        }
        h.ensure_finite("network output")?;
        Ok((h, Trace { saved, pass }))
    }

    /// Inference-mode logits.
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.run(x, Pass::Eval, false)?.0)
    }

    pub fn classify(&self, x: &Tensor4) -> Result<Vec<usize>> {
        Ok(argmax_classes(&self.predict(x)?))
    }

    /// Folds the batch statistics recorded by a `Train` pass into the running averages.
    pub fn absorb_batch_stats(&mut self, trace: &Trace) {
        if !matches!(trace.pass, Pass::Train { .. }) {
            return;
        }
        for (layer, saved) in self.layers.iter_mut().zip(&trace.saved) {
            if let (
                LayerKind::BatchNorm(state),
                Saved::Bn {
                    input,
                    batch: Some((mean, var)),
                },
            ) = (&mut layer.kind, saved)
            {
                let s = input.shape();
                state.absorb(mean, var, s.batch * s.plane_len());
            }
        }
    }

    /// Gradients of `sum(dout ⊙ output)` with respect to the input and every parameter.
    pub fn backward(&self, trace: &Trace, dout: &Tensor4) -> Result<(Tensor4, Gradients)> {
        if trace.saved.len() != self.layers.len() {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        let mut per_layer: Vec<Vec<(String, Vec<f64>)>> = vec![Vec::new(); self.layers.len()];
        let mut g = dout.clone();
        for (i, (layer, saved)) in self.layers.iter().zip(&trace.saved).enumerate().rev() {
            g = match (&layer.kind, saved) {
                (LayerKind::Clc { spec, weights, bias }, Saved::Input(x)) => {
                    let (dx, dw) = clc_backward(x, spec, weights, &g)?;
                    per_layer[i] = vec![(format!("{}.weight", layer.name), dw.weights)];
                    if *bias {
                        per_layer[i].push((format!("{}.bias", layer.name), dw.bias));
                    }
                    dx
                }
                (LayerKind::BatchNorm(state), Saved::Bn { input, batch }) => {
                    let (dx, dgamma, dbeta) = match batch {
                        Some(_) => bn_backward(input, state, &g)?,
                        None => bn_backward_inference(input, state, &g)?,
                    };
                    per_layer[i] = vec![
                        (format!("{}.gamma", layer.name), dgamma),
                        (format!("{}.beta", layer.name), dbeta),
                    ];
                    dx
                }
                (LayerKind::Relu, Saved::Input(x)) => relu_backward(x, &g)?,
                (LayerKind::MaxPool(_), Saved::Pool { record, .. }) => maxpool_backward(record, &g)?,
                (LayerKind::Dropout(_), Saved::Dropout(mask)) => dropout_backward(mask, &g)?,
                (LayerKind::Head, Saved::Nothing) => g,
                _ => return Err(Error::Shape(format!("trace mismatch at layer {}", layer.name))),
            };
        }
        Ok((
            g,
            Gradients {
                groups: per_layer.into_iter().flatten().collect(),
            },
        ))
    }

    /// Mean cross-entropy of the batch and its gradients.
    pub fn loss_and_gradients(&self, x: &Tensor4, labels: &[usize], pass: Pass) -> Result<LossOutput> {
        let (logits, trace) = self.forward(x, pass)?;
        let (loss, dlogits) = softmax_xent(&logits, labels)?;
        let (input_grad, grads) = self.backward(&trace, &dlogits)?;
        Ok(LossOutput {
            loss,
            logits,
            grads,
            input_grad,
            trace,
        })
    }

    pub fn loss(&self, x: &Tensor4, labels: &[usize], pass: Pass) -> Result<f64> {
        let (logits, _) = self.run(x, pass, false)?;
        Ok(softmax_xent(&logits, labels)?.0)
    }

    /// Distance of the traced pass from the nearest non-differentiable point:
    /// the smallest |z| at a ReLU input and the smallest top-two gap inside
    /// a max-pool window.
    pub fn kink_margin(&self, trace: &Trace) -> Result<f64> {
        let mut margin = f64::INFINITY;
        let mut after_relu = false;
        for (layer, saved) in self.layers.iter().zip(&trace.saved) {
            match (&layer.kind, saved) {
                (LayerKind::Relu, Saved::Input(z)) => {
                    margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
                }
                (LayerKind::MaxPool(spec), Saved::Pool { input, .. }) => {
                    let floor = if after_relu { 0.0 } else { f64::NEG_INFINITY };
                    margin = margin.min(pool_margin(input, spec, floor)?);
                }
                _ => {}
            }
            after_relu = matches!(layer.kind, LayerKind::Relu)
                || (after_relu && matches!(layer.kind, LayerKind::Dropout(_)));
        }
        Ok(margin)
    }

    pub fn params(&self) -> Vec<Param<'_>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Clc { weights, bias, .. } => {
                    out.push(Param {
                        name: format!("{}.weight", layer.name),
                        values: &weights.weights,
                        decay: true,
                    });
                    if !*bias {
                        continue;
                    }
                    out.push(Param {
                        name: format!("{}.bias", layer.name),
                        values: &weights.bias,
                        decay: false,
                    });
                }
                LayerKind::BatchNorm(s) => {
                    out.push(Param {
                        name: format!("{}.gamma", layer.name),
                        values: &s.gamma,
                        decay: false,
                    });
                    out.push(Param {
                        name: format!("{}.beta", layer.name),
                        values: &s.beta,
                        decay: false,
                    });
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            let name = &layer.name;
            match &mut layer.kind {
                LayerKind::Clc { weights, bias, .. } => {
                    out.push(ParamMut {
                        name: format!("{name}.weight"),
                        values: &mut weights.weights,
                        decay: true,
                    });
                    if !*bias {
                        continue;
                    }
                    out.push(ParamMut {
                        name: format!("{name}.bias"),
                        values: &mut weights.bias,
                        decay: false,
                    });
                }
                LayerKind::BatchNorm(s) => {
                    out.push(ParamMut {
                        name: format!("{name}.gamma"),
                        values: &mut s.gamma,
                        decay: false,
                    });
                    out.push(ParamMut {
                        name: format!("{name}.beta"),
                        values: &mut s.beta,
                        decay: false,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let LayerKind::BatchNorm(s) = &layer.kind {
                out.push((format!("{}.running_mean", layer.name), s.running_mean.as_slice()));
                out.push((format!("{}.running_var", layer.name), s.running_var.as_slice()));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let LayerKind::BatchNorm(s) = &mut layer.kind {
                out.push((
                    format!("{}.running_mean", layer.name),
                    s.running_mean.as_mut_slice(),
                ));
                out.push((
                    format!("{}.running_var", layer.name),
                    s.running_var.as_mut_slice(),
                ));
            }
        }
        out
    }

    pub fn weight_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.decay)
            .map(|p| p.values.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }
}
