//! Per-sample training loop and evaluation in original units.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::split::shuffled;
use crate::data::transform::{EncodedDataset, Preprocessor};
use crate::error::{Error, Result};
use crate::model::MacModel;
use crate::train::adam::{Adam, AdamConfig};
use crate::train::loss::huber_loss;
use crate::train::metrics::MetricsReport;
use crate::train::schedule::lr_schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_rate: f64,
    /// Epochs per decay step.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            decay_rate: 0.96,
            decay_every: 10,
            epochs: 300,
            batch_size: 1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must be in (0, 1], got {}", self.decay_rate)));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Config("decay_every and batch_size must be >= 1".into()));
        }
        self.adam.validate()
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.lr0, self.decay_rate, self.decay_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Mean Huber loss on the validation set, standardised units.
    pub val_loss: Option<f64>,
    pub val_mae: Option<f64>,
    pub val_mape: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
}

/// Predictions in original units when `pre` is given, else standardised.
pub fn predictions(model: &MacModel, data: &EncodedDataset, pre: Option<&Preprocessor>) -> Result<Vec<Vec<f64>>> {
    data.samples
        .iter()
        .map(|s| {
            let z = model.predict(s)?;
            Ok(match pre {
                Some(p) => p.destandardize(&z),
                None => z,
            })
        })
        .collect()
}

/// Metrics against `raw_targets` when `pre` is given, else against the
/// standardised targets.
pub fn evaluate(model: &MacModel, data: &EncodedDataset, pre: Option<&Preprocessor>) -> Result<MetricsReport> {
    let pred = predictions(model, data, pre)?;
    let truth: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| if pre.is_some() { s.raw_targets.clone() } else { s.targets.clone() })
        .collect();
    MetricsReport::compute(&model.schema().outputs.columns, &truth, &pred)
}

fn val_loss(model: &MacModel, data: &EncodedDataset) -> Result<f64> {
    let mut target = Vec::new();
    let mut pred = Vec::new();
    for s in &data.samples {
        target.extend_from_slice(&s.targets);
        pred.extend(model.predict(s)?);
    }
    Ok(huber_loss(&target, &pred, model.config().huber_delta))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `model` in place. When `val` is non-empty, the parameters of the
/// epoch with the lowest validation MAE are restored at the end.
pub fn train(
    model: &mut MacModel,
    train_set: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    pre: Option<&Preprocessor>,
) -> Result<History> {
    cfg.validate()?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut adam = Adam::new(cfg.adam, model.store().tensors());
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let order = shuffled(train_set.len(), epoch_seed(cfg.seed, epoch));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| train_set.samples[i].clone()).collect();
            let (loss, grads) = model.loss_and_grads(&batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample: chunk[0],
                });
            }
            adam.step(model.store_mut().tensors_mut(), &grads, lr)?;
            total += loss;
            batches += 1;
        }
        let mut record = EpochRecord {
            epoch,
            lr,
            train_loss: total / batches as f64,
            val_loss: None,
            val_mae: None,
            val_mape: None,
        };
        if !val.is_empty() {
            let report = evaluate(model, val, pre)?;
            record.val_loss = Some(val_loss(model, val)?);
            record.val_mae = Some(report.aggregate.mae);
            record.val_mape = report.aggregate.mape;
            let mae = report.aggregate.mae;
            if best.as_ref().is_none_or(|(b, _)| mae < *b) {
                best = Some((mae, model.store().tensors().to_vec()));
                history.best_epoch = Some(epoch);
                history.best_val_mae = Some(mae);
            }
        }
        log::debug!(
            "epoch {epoch}: lr {lr:.3e} loss {:.6} val_mae {:?}",
            record.train_loss,
            record.val_mae
        );
        history.epochs.push(record);
    }
    if let Some((_, params)) = best {
        model.store_mut().tensors_mut().clone_from_slice(&params);
    }
    Ok(history)
}
