//! WebAssembly bindings for the demo page in `www/`.
//!
//! Everything returns plain numeric arrays so the page needs no glue beyond
//! what `wasm-bindgen` generates.

use ecgprune::dataset::{generate_synthetic, BeatClass};
use ecgprune::flops::{flops_layer, flops_total, NUM_LAYERS};
use ecgprune::pruning::magnitude_select;
use ecgprune::Model;
use wasm_bindgen::prelude::*;

fn js_err(e: ecgprune::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Total FLOPs at `points` evenly spaced sparsities from 0 to 1.
#[wasm_bindgen]
pub fn flops_curve(points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|i| flops_total(i as f64 / (n - 1) as f64).expect("sparsity in range") as f64).collect()
}

/// FLOPs of the ten layers at sparsity `eta`.
#[wasm_bindgen]
pub fn flops_rows(eta: f64) -> Result<Vec<f64>, JsError> {
    (1..=NUM_LAYERS).map(|i| flops_layer(i, eta).map(|f| f as f64).map_err(js_err)).collect()
}

/// A freshly initialized baseline whose conv layers can be pruned
/// interactively.
#[wasm_bindgen]
pub struct MaskExplorer {
    model: Model,
}

#[wasm_bindgen]
impl MaskExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> MaskExplorer {
        MaskExplorer { model: Model::build_baseline(seed) }
    }

    /// Number of prunable conv layers.
    pub fn layers(&self) -> usize {
        self.model.prunable_layers().len()
    }

    /// `[out_ch, in_ch, kernel]` of conv layer `pos` (0-based among convs).
    pub fn shape(&self, pos: usize) -> Result<Vec<usize>, JsError> {
        Ok(self.weights(pos)?.shape().to_vec())
    }

    /// Weights of one output filter after magnitude pruning the whole layer
    /// at `eta`, flattened `[in_ch, kernel]`; pruned taps are zero.
    pub fn filter(&self, pos: usize, filter: usize, eta: f64) -> Result<Vec<f64>, JsError> {
        let w = self.weights(pos)?;
        let mask = magnitude_select(0, w, eta).map_err(js_err)?;
        let per = w.shape()[1] * w.shape()[2];
        if filter >= w.shape()[0] {
            return Err(JsError::new(&format!("filter {filter} out of range")));
        }
        let range = filter * per..(filter + 1) * per;
        Ok(range.map(|i| if mask.keeps(i) { w.data()[i] } else { 0.0 }).collect())
    }

    /// Histogram of `|w|` over the layer in `bins` equal bins up to the
    /// largest magnitude, followed by three entries: the largest pruned
    /// magnitude (0 if none), the number of pruned weights and the largest
    /// magnitude overall.
    pub fn histogram(&self, pos: usize, bins: usize, eta: f64) -> Result<Vec<f64>, JsError> {
        let w = self.weights(pos)?;
        let mask = magnitude_select(0, w, eta).map_err(js_err)?;
        Ok(histogram(w.data(), mask.bits(), bins.max(1)))
    }
}

impl MaskExplorer {
    fn weights(&self, pos: usize) -> Result<&ecgprune::Tensor, JsError> {
        let layer = *self
            .model
            .prunable_layers()
            .get(pos)
            .ok_or_else(|| JsError::new(&format!("conv layer {pos} out of range")))?;
        Ok(&self.model.layer(layer).expect("prunable layers have parameters").weight)
    }
}

fn histogram(w: &[f64], keep: &[bool], bins: usize) -> Vec<f64> {
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = vec![0.0; bins + 3];
    for v in w {
        let b = if max == 0.0 { 0 } else { ((v.abs() / max) * bins as f64) as usize };
        out[b.min(bins - 1)] += 1.0;
    }
    let pruned = w.iter().zip(keep).filter(|(_, &k)| !k);
    out[bins] = pruned.clone().fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    out[bins + 1] = pruned.count() as f64;
    out[bins + 2] = max;
    out
}

/// One generated 260-sample beat of class `class` (0..5 for N, S, V, F, Q).
#[wasm_bindgen]
pub fn synthetic_beat(class: usize, sigma: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let c = BeatClass::from_index(class).ok_or_else(|| JsError::new(&format!("class {class} out of range")))?;
    let mut counts = [0; 5];
    counts[c.index()] = 1;
    let set = generate_synthetic(counts, sigma, seed).map_err(js_err)?;
    Ok(set.records()[0].samples().to_vec())
}
