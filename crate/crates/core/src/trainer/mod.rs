//! SGD training with a stepped learning-rate schedule, evaluation,
//! per-epoch history and checkpoints.

mod checkpoint;
mod schedule;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{augment, batches, AugmentPolicy, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::layers::argmax_classes;
use crate::netbuilder::{build_network, Gradients, Network, Pass};
use crate::seed;
use crate::tensor::Tensor4;

pub use checkpoint::{
    checkpoint_load, checkpoint_save, decode as decode_checkpoint, encode as encode_checkpoint, Checkpoint,
    NamedTensor, MAGIC, VERSION,
};
pub use schedule::{lr_at_epoch, sgd_step, Segment, TrainSchedule, DESK_PEAK_LR};

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,train_err,test_err";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Batch size used when evaluating.
const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's mini-batches, per sample.
    pub train_loss: f64,
    /// Misclassification rate of the training passes themselves.
    pub train_err: f64,
    /// Inference-mode error on the test split, if one was given.
    pub test_err: Option<f64>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let test = self.test_err.map_or_else(String::new, |e| format!("{e:.6}"));
        format!(
            "{},{},{:.6},{:.6},{}",
            self.epoch, self.lr, self.train_loss, self.train_err, test
        )
    }
}

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Fraction of predictions that differ from the labels.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    wrong as f64 / labels.len() as f64
}

/// Inference-mode error rate of `net` on `ds`.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<f64> {
    if net.class_count() != ds.class_count {
        return Err(Error::Shape(format!(
            "network predicts {} classes, dataset has {}",
            net.class_count(),
            ds.class_count
        )));
    }
    let mut predictions = Vec::with_capacity(ds.len());
    for (x, _) in batches(ds, EVAL_BATCH, false, 0)? {
        predictions.extend(net.classify(&x)?);
    }
    Ok(error_rate(&predictions, &ds.labels))
}

/// Momentum SGD state, one velocity buffer per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub velocity: Vec<Vec<f64>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            velocity: net.params().iter().map(|p| vec![0.0; p.values.len()]).collect(),
            momentum,
            weight_decay,
        }
    }

    /// Applies one update. Weight decay only touches groups flagged for it.
    /// On failure returns the name of the parameter that became non-finite.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> std::result::Result<(), String> {
        let params = net.params_mut();
        assert_eq!(params.len(), grads.groups.len(), "gradient groups");
        for ((p, (name, g)), v) in params.into_iter().zip(&grads.groups).zip(&mut self.velocity) {
            debug_assert_eq!(&p.name, name);
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            sgd_step(p.values, g, v, lr, self.momentum, decay).map_err(|i| format!("{}[{i}]", p.name))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub errors: usize,
    pub samples: usize,
}

/// Training state that can be checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Network,
    pub opt: Sgd,
    pub schedule: TrainSchedule,
    pub augment: AugmentPolicy,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub history: Vec<EpochRecord>,
    /// Per-channel statistics the inputs were normalized with, kept so that
    /// evaluation of a checkpoint applies the same transform.
    pub input_stats: Option<ChannelStats>,
}

impl Trainer {
    pub fn new(net: Network, schedule: TrainSchedule, augment: AugmentPolicy, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let opt = Sgd::new(&net, schedule.momentum, schedule.weight_decay);
        Ok(Trainer {
            net,
            opt,
            schedule,
            augment,
            seed,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            input_stats: None,
        })
    }

    fn diverged(&self, reason: impl Into<String>) -> Error {
        Error::Divergence {
            epoch: self.epoch + 1,
            step: self.step as usize,
            reason: reason.into(),
        }
    }

    /// One forward/backward/update on a batch with learning rate `lr`.
    pub fn train_step(&mut self, x: &Tensor4, labels: &[usize], lr: f64) -> Result<StepStats> {
        let pass = Pass::Train {
            seed: seed::derive(self.seed, &[3, self.step]),
        };
        let out = match self.net.loss_and_gradients(x, labels, pass) {
            Ok(out) => out,
            Err(Error::Numeric(reason)) => return Err(self.diverged(reason)),
            Err(e) => return Err(e),
        };
        if !out.loss.is_finite() {
            return Err(self.diverged(format!("loss is {}", out.loss)));
        }
        self.net.absorb_batch_stats(&out.trace);
        if let Err(name) = self.opt.step(&mut self.net, &out.grads, lr) {
            return Err(self.diverged(format!("update of {name} is not finite")));
        }
        self.step += 1;
        let predictions = argmax_classes(&out.logits);
        let errors = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
        Ok(StepStats {
            loss: out.loss,
            errors,
            samples: labels.len(),
        })
    }

    /// Trains one epoch over `train` and evaluates on `test`.
    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<EpochRecord> {
        if train.class_count != self.net.class_count() {
            return Err(Error::Shape(format!(
                "network predicts {} classes, training set has {}",
                self.net.class_count(),
                train.class_count
            )));
        }
        let epoch = self.epoch + 1;
        let lr = self.schedule.lr_at_epoch(epoch)?;
        let (mut loss, mut errors, mut samples) = (0.0, 0usize, 0usize);
        let order_seed = seed::derive(self.seed, &[1, epoch as u64]);
        for (i, (x, labels)) in batches(train, self.schedule.batch_size, true, order_seed)?.enumerate() {
            let x = augment(
                &x,
                self.augment,
                seed::derive(self.seed, &[2, epoch as u64, i as u64]),
            );
            let s = self.train_step(&x, &labels, lr)?;
            loss += s.loss * s.samples as f64;
            errors += s.errors;
            samples += s.samples;
        }
        let test_err = test.map(|t| evaluate(&self.net, t)).transpose()?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss / samples as f64,
            train_err: errors as f64 / samples as f64,
            test_err,
        };
        self.epoch = epoch;
        self.history.push(record);
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<NamedTensor> = self
            .net
            .params()
            .into_iter()
            .map(|p| NamedTensor {
                dims: vec![p.values.len()],
                name: p.name,
                values: p.values.to_vec(),
            })
            .collect();
        tensors.extend(self.net.buffers().into_iter().map(|(name, v)| NamedTensor {
            name,
            dims: vec![v.len()],
            values: v.to_vec(),
        }));
        for (p, v) in self.net.params().iter().zip(&self.opt.velocity) {
            tensors.push(NamedTensor {
                name: format!("velocity/{}", p.name),
                dims: vec![v.len()],
                values: v.clone(),
            });
        }
        let rows: Vec<f64> = self
            .history
            .iter()
            .flat_map(|r| {
                [
                    r.epoch as f64,
                    r.lr,
                    r.train_loss,
                    r.train_err,
                    r.test_err.unwrap_or(f64::NAN),
                ]
            })
            .collect();
        tensors.push(NamedTensor {
            name: "history".into(),
            dims: vec![self.history.len(), 5],
            values: rows,
        });
        if let Some(stats) = &self.input_stats {
            for (name, values) in [("input/mean", &stats.mean), ("input/std", &stats.std)] {
                tensors.push(NamedTensor {
                    name: name.into(),
                    dims: vec![values.len()],
                    values: values.clone(),
                });
            }
        }
        Checkpoint {
            config: self.net.config().clone(),
            epoch: self.epoch as u64,
            seed: self.seed,
            step: self.step,
            tensors,
        }
    }

    /// Rebuilds the training state saved in `ck`.
    pub fn resume(ck: &Checkpoint, schedule: TrainSchedule, augment: AugmentPolicy) -> Result<Self> {
        let mut net = build_network(&ck.config, ck.seed)?;
        ck.restore_network(&mut net)?;
        let mut trainer = Trainer::new(net, schedule, augment, ck.seed)?;
        let names: Vec<String> = trainer.net.params().into_iter().map(|p| p.name).collect();
        for (name, v) in names.iter().zip(&mut trainer.opt.velocity) {
            let stored = ck
                .tensor(&format!("velocity/{name}"))
                .filter(|t| t.values.len() == v.len())
                .ok_or_else(|| Error::Compat(format!("checkpoint lacks velocity for '{name}'")))?;
            v.copy_from_slice(&stored.values);
        }
        if let Some(h) = ck.tensor("history") {
            trainer.history = h
                .values
                .chunks_exact(5)
                .map(|r| EpochRecord {
                    epoch: r[0] as usize,
                    lr: r[1],
                    train_loss: r[2],
                    train_err: r[3],
                    test_err: (!r[4].is_nan()).then_some(r[4]),
                })
                .collect();
        }
        trainer.input_stats = ck.input_stats();
        trainer.epoch = ck.epoch as usize;
        trainer.step = ck.step;
        Ok(trainer)
    }

    /// Writes `history.csv` and the checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let history = dir.join(HISTORY_FILE);
        fs::write(&history, history_csv(&self.history)).map_err(|e| Error::io(&history, e))?;
        checkpoint_save(&dir.join(CHECKPOINT_FILE), &self.checkpoint())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    /// Epochs to run, at most `schedule.total_epochs`.
    pub epochs: usize,
    pub augment: AugmentPolicy,
    pub seed: u64,
    /// Where history and checkpoints go after every epoch.
    pub out_dir: Option<PathBuf>,
}

/// Trains `net` for `opts.epochs` epochs. Deterministic in `opts.seed`.
pub fn train(
    net: Network,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    opts: &TrainOptions,
) -> Result<(Network, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(net, opts.schedule.clone(), opts.augment, opts.seed)?;
    continue_training(
        &mut trainer,
        train_ds,
        test_ds,
        opts.epochs,
        opts.out_dir.as_deref(),
    )?;
    Ok((trainer.net, trainer.history))
}

/// Runs epochs until `trainer` has completed `epochs` of them.
pub fn continue_training(
    trainer: &mut Trainer,
    train_ds: &Dataset,
    test_ds: Option<&Dataset>,
    epochs: usize,
    out_dir: Option<&Path>,
) -> Result<()> {
    if epochs > trainer.schedule.total_epochs {
        return Err(Error::Range(format!(
            "{epochs} epochs requested, schedule has {}",
            trainer.schedule.total_epochs
        )));
    }
    while trainer.epoch < epochs {
        trainer.run_epoch(train_ds, test_ds)?;
        if let Some(dir) = out_dir {
            trainer.save(dir)?;
        }
    }
    Ok(())
}
