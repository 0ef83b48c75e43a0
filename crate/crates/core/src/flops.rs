//! Run-time FLOPs accounting.
//!
//! The table mode reproduces the published per-layer expressions for the
//! baseline, where a pruned conv layer costs
//! `out_len * k * (1 - eta) * out_ch * 2` (input-channel factors of the
//! second and third conv are not part of those expressions). The
//! exact-MAC mode counts two FLOPs per multiply-accumulate of the realized
//! model, using its actual surviving weights.

use crate::error::{Error, Result};
use crate::model::{LayerKind, Model};

pub const NUM_LAYERS: usize = 10;

/// FLOPs of the three prunable rows at zero sparsity.
pub const PRUNABLE_FLOPS: u64 = 917_440;
/// FLOPs of the rows that pruning does not touch.
pub const FIXED_FLOPS: u64 = 19_136;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Pruned(u64),
    Fixed(u64),
}

/// The per-layer table, 1-based layer `i` at index `i - 1`.
const TABLE: [Row; NUM_LAYERS] = [
    Row::Pruned(71 * 50 * 128 * 2),
    Row::Fixed(71 * 128),
    Row::Fixed(0),
    Row::Pruned(18 * 7 * 32 * 2),
    Row::Fixed(18 * 32),
    Row::Fixed(0),
    Row::Pruned(9 * 32 * 2),
    Row::Fixed(0),
    Row::Fixed(32 * 128 * 2),
    Row::Fixed(128 * 5 * 2),
];

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("sparsity {eta} outside [0, 1]")));
    }
    Ok(())
}

fn scaled(count: u64, eta: f64) -> u64 {
    (count as f64 * (1.0 - eta)).round() as u64
}

/// FLOPs of layer `layer` (1-based) at sparsity `eta`.
pub fn flops_layer(layer: usize, eta: f64) -> Result<u64> {
    check_eta(eta)?;
    match layer.checked_sub(1).and_then(|i| TABLE.get(i)) {
        Some(Row::Pruned(n)) => Ok(scaled(*n, eta)),
        Some(Row::Fixed(n)) => Ok(*n),
        None => Err(Error::InvalidLayer(layer)),
    }
}

/// `917440 * (1 - eta) + 19136`, rounded to the nearest integer.
pub fn flops_total(eta: f64) -> Result<u64> {
    check_eta(eta)?;
    Ok(scaled(PRUNABLE_FLOPS, eta) + FIXED_FLOPS)
}

/// Table-mode FLOPs of a model using each prunable layer's realized sparsity.
pub fn model_table_flops(model: &Model) -> Vec<u64> {
    let prunable = model.prunable_layers();
    (0..NUM_LAYERS)
        .map(|i| match TABLE[i] {
            Row::Fixed(n) => n,
            Row::Pruned(n) => {
                let eta = prunable
                    .contains(&i)
                    .then(|| model.layer(i))
                    .flatten()
                    .and_then(|p| p.mask.as_ref())
                    .map_or(0.0, |m| m.sparsity());
                scaled(n, eta)
            }
        })
        .collect()
}

/// Two FLOPs per surviving multiply-accumulate, plus one per element for
/// stand-alone activation layers. Pooling, flatten and fused activations
/// are free, matching the table's treatment.
pub fn exact_mac_flops(model: &Model) -> Result<Vec<u64>> {
    let lengths = model.lengths()?;
    let mut channels = 1usize;
    let mut out = Vec::with_capacity(model.specs().len());
    for (i, spec) in model.specs().iter().enumerate() {
        let flops = match spec.kind {
            LayerKind::Conv { out_ch, .. } => {
                channels = out_ch;
                let nnz = model.layer(i).map_or(0, |p| p.weight.data().iter().filter(|&&w| w != 0.0).count());
                2 * (lengths[i] * nnz) as u64
            }
            LayerKind::Dense { .. } => {
                let nnz = model.layer(i).map_or(0, |p| p.weight.data().iter().filter(|&&w| w != 0.0).count());
                2 * nnz as u64
            }
            LayerKind::Relu => (lengths[i] * channels) as u64,
            LayerKind::Pool { .. } | LayerKind::Flatten => 0,
        };
        out.push(flops);
    }
    Ok(out)
}
