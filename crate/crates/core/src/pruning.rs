//! Magnitude-based weight pruning of the conv layers.
//!
//! Three strategies share one selection rule (per layer, smallest `|w|`
//! first, ties to the lower flat index, `floor(eta * N)` positions):
//!
//! * **simple**: mask all conv layers at once, no retraining.
//! * **finetune**: mask all conv layers, then retrain the dense layers with
//!   every conv parameter (weights and biases) frozen.
//! * **multistage**: for each conv layer in order, mask it and then retrain
//!   everything that is not already pruned, including later conv layers.

use std::fmt;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::flops_total;
use crate::mask::PruneMask;
use crate::metrics::overall_metrics;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::training::{evaluate, finetune_observed, Examples, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Simple,
    Finetune,
    Multistage,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Simple, Strategy::Finetune, Strategy::Multistage];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Simple => "simple",
            Strategy::Finetune => "finetune",
            Strategy::Multistage => "multistage",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?} (simple, finetune, multistage)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub sparsity: f64,
    /// Settings for each fine-tuning call (multistage makes three).
    pub finetune: TrainConfig,
}

pub fn check_sparsity(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("sparsity {eta} outside [0, 1]")));
    }
    Ok(())
}

/// `floor(eta * n)`, evaluated so that decimal sparsities like 0.3 are not
/// pushed below an exact integer product by binary rounding.
pub fn pruned_count(eta: f64, n: usize) -> usize {
    (((eta * n as f64) + 1e-9).floor() as usize).min(n)
}

/// Keep-mask zeroing the `floor(eta * N)` smallest-magnitude weights.
pub fn magnitude_select(layer: usize, weights: &Tensor, eta: f64) -> Result<PruneMask> {
    check_sparsity(eta)?;
    let w = weights.data();
    let count = pruned_count(eta, w.len());
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    let mut bits = vec![true; w.len()];
    for &i in &order[..count] {
        bits[i] = false;
    }
    Ok(PruneMask::from_bits(layer, weights.shape(), bits).expect("congruent by construction"))
}

fn mask_layer(model: &mut Model, layer: usize, eta: f64) -> Result<()> {
    let weights = &model.layer(layer).ok_or(Error::InvalidLayer(layer))?.weight;
    let mask = magnitude_select(layer, weights, eta)?;
    model.apply_mask(layer, &mask)
}

/// Hooks into a strategy run, for inspecting intermediate models.
pub trait PruneObserver {
    /// After each fine-tuning epoch of stage `stage` (0-based).
    fn epoch(&mut self, _stage: usize, _epoch: usize, _model: &Model) {}
    /// After masking layer(s) for `stage`, before any fine-tuning.
    fn masked(&mut self, _stage: usize, _model: &Model) {}
    /// After stage `stage` finished fine-tuning.
    fn stage(&mut self, _stage: usize, _model: &Model) {}
}

impl PruneObserver for () {}

pub fn simple_prune(model: &Model, eta: f64) -> Result<Model> {
    check_sparsity(eta)?;
    let mut out = model.clone();
    for layer in out.prunable_layers() {
        mask_layer(&mut out, layer, eta)?;
    }
    out.push_history(format!("simple eta={eta}"));
    Ok(out)
}

fn require_data(train: &Examples, val: &Examples) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(Error::EmptySet("validation"));
    }
    Ok(())
}

pub fn prune_with_finetune(
    model: &Model,
    eta: f64,
    train: &Examples,
    val: &Examples,
    cfg: &TrainConfig,
) -> Result<Model> {
    prune_with_finetune_observed(model, eta, train, val, cfg, &mut ())
}

pub fn prune_with_finetune_observed(
    model: &Model,
    eta: f64,
    train: &Examples,
    val: &Examples,
    cfg: &TrainConfig,
    observer: &mut dyn PruneObserver,
) -> Result<Model> {
    check_sparsity(eta)?;
    require_data(train, val)?;
    let mut masked = model.clone();
    let convs = masked.prunable_layers();
    for &layer in &convs {
        mask_layer(&mut masked, layer, eta)?;
    }
    observer.masked(0, &masked);
    let rest: Vec<usize> = masked.param_layers().into_iter().filter(|i| !convs.contains(i)).collect();
    let (mut out, _) = finetune_observed(&masked, &rest, train, val, cfg, &mut |e, m| observer.epoch(0, e, m))?;
    observer.stage(0, &out);
    out.set_all_trainable(true);
    out.push_history(format!("finetune eta={eta} epochs={}", cfg.epochs));
    Ok(out)
}

pub fn multistage_prune(model: &Model, eta: f64, train: &Examples, val: &Examples, cfg: &TrainConfig) -> Result<Model> {
    multistage_prune_observed(model, eta, train, val, cfg, &mut ())
}

pub fn multistage_prune_observed(
    model: &Model,
    eta: f64,
    train: &Examples,
    val: &Examples,
    cfg: &TrainConfig,
    observer: &mut dyn PruneObserver,
) -> Result<Model> {
    check_sparsity(eta)?;
    require_data(train, val)?;
    let mut current = model.clone();
    let all = current.param_layers();
    for (stage, layer) in current.prunable_layers().into_iter().enumerate() {
        mask_layer(&mut current, layer, eta)?;
        observer.masked(stage, &current);
        let stage_cfg = TrainConfig { seed: cfg.seed.wrapping_add(stage as u64), ..*cfg };
        let (next, _) =
            finetune_observed(&current, &all, train, val, &stage_cfg, &mut |e, m| observer.epoch(stage, e, m))?;
        current = next;
        observer.stage(stage, &current);
    }
    current.set_all_trainable(true);
    current.push_history(format!("multistage eta={eta} epochs_per_stage={}", cfg.epochs));
    Ok(current)
}

/// Runs one strategy on a copy of `model`. Zero sparsity prunes nothing
/// and is returned unchanged, without fine-tuning.
pub fn run_strategy(model: &Model, cfg: &StrategyConfig, train: &Examples, val: &Examples) -> Result<Model> {
    check_sparsity(cfg.sparsity)?;
    if cfg.sparsity == 0.0 {
        return Ok(model.clone());
    }
    match cfg.strategy {
        Strategy::Simple => simple_prune(model, cfg.sparsity),
        Strategy::Finetune => prune_with_finetune(model, cfg.sparsity, train, val, &cfg.finetune),
        Strategy::Multistage => multistage_prune(model, cfg.sparsity, train, val, &cfg.finetune),
    }
}

/// One cell of a sparsity sweep, metrics as fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub eta: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub accuracy: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub sensitivity: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub precision: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub f1: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub loss: f64,
    pub flops: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

// JSON writes the NaN metrics of failed cells as null.
fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Data partitions used by a sweep.
#[derive(Clone, Copy)]
pub struct SweepData<'a> {
    pub train: &'a Examples,
    pub val: &'a Examples,
    pub test: &'a Examples,
}

/// Seed for one sweep cell, mixed from the run seed, strategy and sparsity.
pub fn cell_seed(seed: u64, strategy: Strategy, eta: f64) -> u64 {
    let mut z = seed ^ (strategy as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ eta.to_bits().rotate_left(17);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Evaluates a model into a sweep row.
pub fn score(model: &Model, strategy: Strategy, eta: f64, test: &Examples) -> Result<SweepRow> {
    let ev = evaluate(model, test)?;
    let m = overall_metrics(&ev.confusion);
    Ok(SweepRow {
        strategy,
        eta,
        accuracy: m.accuracy,
        sensitivity: m.sensitivity,
        precision: m.precision,
        f1: m.f1,
        loss: ev.mean_loss,
        flops: flops_total(eta)?,
        error: None,
    })
}

/// Runs every (strategy, eta) cell from a fresh copy of `baseline`. Cells are
/// independent and run in parallel; rows come back sorted by (strategy, eta).
/// A failing cell yields a row with NaN metrics and its error message.
pub fn sweep(
    baseline: &Model,
    strategies: &[Strategy],
    etas: &[f64],
    data: SweepData<'_>,
    finetune: &TrainConfig,
    seed: u64,
) -> Vec<SweepRow> {
    let mut cells: Vec<(Strategy, f64)> = strategies.iter().flat_map(|&s| etas.iter().map(move |&e| (s, e))).collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    cells.dedup();
    let run_cell = |&(strategy, eta): &(Strategy, f64)| {
        let cfg = StrategyConfig {
            strategy,
            sparsity: eta,
            finetune: TrainConfig { seed: cell_seed(seed, strategy, eta), ..*finetune },
        };
        run_strategy(baseline, &cfg, data.train, data.val)
            .and_then(|m| score(&m, strategy, eta, data.test))
            .unwrap_or_else(|e| SweepRow {
                strategy,
                eta,
                accuracy: f64::NAN,
                sensitivity: f64::NAN,
                precision: f64::NAN,
                f1: f64::NAN,
                loss: f64::NAN,
                flops: flops_total(eta.clamp(0.0, 1.0)).unwrap_or(0),
                error: Some(e.to_string()),
            })
    };
    #[cfg(feature = "parallel")]
    return cells.par_iter().map(run_cell).collect();
    #[cfg(not(feature = "parallel"))]
    return cells.iter().map(run_cell).collect();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selects_two_smallest() {
        let w = Tensor::from_vec(vec![0.5, -0.1, 0.3, 0.05]);
        let m = magnitude_select(0, &w, 0.5).unwrap();
        assert_eq!(m.bits(), &[true, false, true, false]);
    }

    #[test]
    fn boundary_sparsities() {
        let w = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(magnitude_select(0, &w, 0.0).unwrap().zeros(), 0);
        assert_eq!(magnitude_select(0, &w, 1.0).unwrap().zeros(), 3);
        assert!(magnitude_select(0, &w, 1.1).is_err());
        assert!(magnitude_select(0, &w, -0.1).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let w = Tensor::from_vec(vec![0.2, -0.2, 0.2, 0.1]);
        let m = magnitude_select(0, &w, 0.5).unwrap();
        assert_eq!(m.bits(), &[false, true, true, false]);
    }

    #[test]
    fn conv1_at_sixty_percent() {
        let model = Model::build_baseline(5);
        let m = magnitude_select(0, &model.layer(0).unwrap().weight, 0.6).unwrap();
        assert_eq!(m.zeros(), 3840);
    }

    #[test]
    fn pruned_count_is_exact_floor_for_decimal_grid() {
        for n in [6400usize, 28672, 9216, 10, 7] {
            for k in 0..=10 {
                assert_eq!(pruned_count(k as f64 / 10.0, n), k * n / 10, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn simple_prune_leaves_dense_layers_alone() {
        let model = Model::build_baseline(6);
        let pruned = simple_prune(&model, 0.5).unwrap();
        for i in [8, 9] {
            assert_eq!(pruned.layer(i), model.layer(i));
        }
        for i in model.prunable_layers() {
            let n = model.layer(i).unwrap().weight.len();
            assert_eq!(pruned.masked_count(i), n / 2);
            assert_eq!(pruned.layer(i).unwrap().bias, model.layer(i).unwrap().bias);
        }
    }

    #[test]
    fn zero_sparsity_is_identity() {
        let model = Model::build_baseline(6);
        let pruned = simple_prune(&model, 0.0).unwrap();
        let x = Tensor::new(vec![1, 260], (0..260).map(|i| (i as f64).cos()).collect()).unwrap();
        assert_eq!(pruned.logits(&x).unwrap(), model.logits(&x).unwrap());
    }

    #[test]
    fn strategies_parse() {
        assert_eq!("multistage".parse::<Strategy>().unwrap(), Strategy::Multistage);
        assert!("global".parse::<Strategy>().is_err());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let model = Model::build_baseline(6);
        let val = vec![(Tensor::zeros(&[1, 260]), 0)];
        let cfg = TrainConfig::finetune_default();
        assert!(matches!(prune_with_finetune(&model, 0.5, &[], &val, &cfg), Err(Error::EmptySet(_))));
        assert!(matches!(multistage_prune(&model, 0.5, &[], &val, &cfg), Err(Error::EmptySet(_))));
    }
}
