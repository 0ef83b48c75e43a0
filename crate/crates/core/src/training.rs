//! Mini-batch training and fine-tuning with mask-aware updates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::BeatSet;
use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::model::{GradAccum, Model};
use crate::optim::{OptimizerState, UpdateRule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
    pub seed: u64,
    pub rule: UpdateRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, lr: 1e-3, patience: 5, seed: 0, rule: UpdateRule::default() }
    }
}

impl TrainConfig {
    /// Defaults for a fine-tuning call: 10 epochs, otherwise as training.
    pub fn finetune_default() -> Self {
        Self { epochs: 10, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned, when early stopping is active.
    pub best_epoch: Option<usize>,
}

/// Labeled examples ready for the model.
pub type Examples = [(Tensor, usize)];

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &Model, examples: &Examples) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::EmptySet("evaluation"));
    }
    let prepared = model.prepare();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    for (x, label) in examples {
        let logits = prepared.logits(x)?;
        let (l, probs) = crate::ops::softmax_cross_entropy(&logits, *label)?;
        loss += l;
        predictions.push(probs.argmax());
    }
    let labels: Vec<usize> = examples.iter().map(|(_, l)| *l).collect();
    Ok(Evaluation {
        confusion: confusion(&predictions, &labels)?,
        mean_loss: loss / examples.len() as f64,
        predictions,
    })
}

pub fn evaluate_set(model: &Model, set: &BeatSet) -> Result<Evaluation> {
    evaluate(model, &set.examples())
}

/// Trains every trainable group of `model`.
pub fn train(model: &Model, train_set: &Examples, val_set: &Examples, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    train_observed(model, train_set, val_set, cfg, &mut |_, _| {})
}

/// Trains only the layers listed in `trainable` (0-based layer indices);
/// every other group is frozen. Masked positions stay frozen regardless.
pub fn finetune(
    model: &Model,
    trainable: &[usize],
    train_set: &Examples,
    val_set: &Examples,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    finetune_observed(model, trainable, train_set, val_set, cfg, &mut |_, _| {})
}

pub fn finetune_observed(
    model: &Model,
    trainable: &[usize],
    train_set: &Examples,
    val_set: &Examples,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &Model),
) -> Result<(Model, TrainLog)> {
    let mut model = model.clone();
    for i in model.param_layers() {
        model.set_trainable(i, trainable.contains(&i));
    }
    train_observed(&model, train_set, val_set, cfg, observer)
}

/// As [`train`], calling `observer(epoch, model)` after every completed epoch.
pub fn train_observed(
    model: &Model,
    train_set: &Examples,
    val_set: &Examples,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &Model),
) -> Result<(Model, TrainLog)> {
    if train_set.is_empty() {
        return Err(Error::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySet("validation"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > train_set.len() {
        return Err(Error::InvalidConfig(format!("batch size {} must be in 1..={}", cfg.batch_size, train_set.len())));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::InvalidConfig(format!("learning rate {} must be finite and >= 0", cfg.lr)));
    }
    if !model.has_trainable() {
        return Err(Error::NoTrainableParameters);
    }

    let mut model = model.clone();
    let mut opt = OptimizerState::new(cfg.rule, cfg.lr, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let prepared = model.prepare();
            let mut acc = GradAccum::new(&model);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, label) = &train_set[i];
                let trace = prepared.forward(x)?;
                batch_loss += prepared.backward_into(&trace, *label, &mut acc)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += batch_loss;
            let grads = acc.finish_scaled(&model, 1.0 / batch.len() as f64);
            opt.step(&mut model, &grads);
        }
        let val = evaluate(&model, val_set)?;
        if !val.mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss: val.mean_loss,
            val_accuracy: crate::metrics::multiclass_accuracy(&val.confusion),
        });
        observer(epoch, &model);

        if cfg.patience > 0 {
            let improved = best.as_ref().is_none_or(|(loss, _, _)| val.mean_loss < *loss);
            if improved {
                best = Some((val.mean_loss, epoch, model.clone()));
            } else if epoch - best.as_ref().expect("set on first epoch").1 >= cfg.patience {
                break;
            }
        }
    }

    if let Some((_, epoch, best_model)) = best {
        log.best_epoch = Some(epoch);
        model = best_model;
    }
    Ok((model, log))
}
