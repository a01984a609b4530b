use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{Batch, Layers, NetworkParams, NetworkShape};
use super::{argmax, select_action, ActionScores};
use crate::error::{Error, Result};
use crate::gridworld::{ActionSet, Plane};
use crate::oracle::LabeledSample;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Every `validation_stride`-th training sample is held back for early
    /// stopping inside [`cross_validate`]; 0 trains on everything.
    pub validation_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            validation_stride: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One momentum-SGD step on the mean cross-entropy of `batch`. Returns the
/// loss measured before the update.
pub fn train_step(params: &mut NetworkParams, batch: &[&LabeledSample], cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("training batch is empty".into()));
    }
    let (loss, grad) = params.gradients(&Batch::from_samples(batch))?;
    apply_momentum(params, &grad, cfg);
    if !params.weights.all_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(loss)
}

fn apply_momentum(params: &mut NetworkParams, grad: &Layers, cfg: &TrainConfig) {
    let grads: Vec<&[f64]> = grad.tensors().into_iter().map(|(_, _, g)| g).collect();
    let weights = params.weights.tensors_mut();
    let velocity = params.velocity.tensors_mut();
    for ((w, v), g) in weights.into_iter().zip(velocity).zip(grads) {
        for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *w += *v;
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.val_accuracy {
            Some(a) => write!(f, "{},{},{:.6},{:.6}", self.epoch, self.step, self.loss, a),
            None => write!(f, "{},{},{:.6},", self.epoch, self.step, self.loss),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub log: Vec<EpochLog>,
}

/// Trains for up to `cfg.max_epochs`, reshuffling each epoch with a stream
/// derived from `cfg.seed`. With a non-empty `val` set, stops after
/// `cfg.patience` epochs without improvement and restores the best weights.
pub fn fit(
    params: &mut NetworkParams,
    train: &[&LabeledSample],
    val: &[&LabeledSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut best: Option<(usize, f64, Layers)> = None;
    let mut stale = 0;
    let mut log = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, 0x7e00 + epoch as u64));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| train[i]).collect();
            total += train_step(params, &batch, cfg)?;
            batches += 1;
            step += 1;
        }
        let val_accuracy = (!val.is_empty()).then(|| accuracy(params, val));
        let entry = EpochLog {
            epoch,
            step,
            loss: total / batches as f64,
            val_accuracy,
        };
        on_epoch(&entry);
        log.push(entry);
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((epoch, acc, params.weights.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    let epochs_run = log.len();
    let (best_epoch, best_val_accuracy) = match best {
        Some((e, a, weights)) => {
            params.weights = weights;
            (Some(e), Some(a))
        }
        None => (None, None),
    };
    Ok(FitReport {
        epochs_run,
        best_epoch,
        best_val_accuracy,
        log,
    })
}

/// Legal moves for the agent cell recorded in the memory map.
fn legal_from_memory(sample: &LabeledSample) -> ActionSet {
    let m = &sample.memory;
    let Some(agent) = m.plane_cells(Plane::AgentCurrent).first().copied() else {
        return ActionSet::FULL;
    };
    crate::gridworld::Action::ALL
        .into_iter()
        .filter(|a| agent.step(*a, m.width(), m.height()).is_some())
        .collect()
}

/// Fraction of samples whose selected action equals the label.
pub fn accuracy(params: &NetworkParams, samples: &[&LabeledSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut hits = 0;
    for chunk in samples.chunks(256) {
        let probs = params.predict(&Batch::from_samples(chunk));
        for (row, s) in probs.rows().into_iter().zip(chunk) {
            let scores = ActionScores([row[0], row[1], row[2], row[3]]);
            let legal = legal_from_memory(s);
            let chosen = select_action(&scores, legal)
                .unwrap_or_else(|_| crate::gridworld::Action::ALL[argmax(&scores.0)]);
            if chosen == s.label {
                hits += 1;
            }
        }
    }
    hits as f64 / samples.len() as f64
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub fits: Vec<FitReport>,
    /// Trained model of each fold, for downstream evaluation.
    pub models: Vec<NetworkParams>,
}

/// k-fold cross-validation with folds assigned by sample index modulo k.
pub fn cross_validate(
    shape: &NetworkShape,
    samples: &[LabeledSample],
    k: usize,
    cfg: &TrainConfig,
) -> Result<CvReport> {
    cfg.validate()?;
    if k < 2 || samples.len() < k {
        return Err(Error::Config(format!(
            "{} samples cannot be split into {k} folds",
            samples.len()
        )));
    }
    let folds: Vec<(f64, FitReport, NetworkParams)> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let held: Vec<&LabeledSample> = samples.iter().skip(fold).step_by(k).collect();
            let rest: Vec<&LabeledSample> = samples
                .iter()
                .enumerate()
                .filter(|(i, _)| i % k != fold)
                .map(|(_, s)| s)
                .collect();
            let stride = cfg.validation_stride;
            let (train, val): (Vec<&LabeledSample>, Vec<&LabeledSample>) = if stride > 1 {
                let (v, t): (Vec<_>, Vec<_>) = rest.iter().enumerate().partition(|(j, _)| j % stride == stride - 1);
                (t.into_iter().map(|(_, s)| *s).collect(), v.into_iter().map(|(_, s)| *s).collect())
            } else {
                (rest, Vec::new())
            };
            let fold_cfg = TrainConfig {
                seed: rng::derive_seed(cfg.seed, fold as u64),
                ..cfg.clone()
            };
            let mut params = NetworkParams::new(shape.clone(), fold_cfg.seed)?;
            let report = fit(&mut params, &train, &val, &fold_cfg, |_| {})?;
            Ok((accuracy(&params, &held), report, params))
        })
        .collect::<Result<_>>()?;
    let fold_accuracy: Vec<f64> = folds.iter().map(|f| f.0).collect();
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k as f64;
    let (fits, models) = folds.into_iter().map(|(_, r, p)| (r, p)).unzip();
    Ok(CvReport {
        fold_accuracy,
        mean_accuracy,
        fits,
        models,
    })
}
