//! The 10-layer baseline heartbeat classifier.
//!
//! Layer chain (sequence length in brackets):
//!
//! ```text
//!  1 conv  k50 s3 1->128   [260 -> 71]
//!  2 relu
//!  3 pool  k2  s3          [71 -> 24]
//!  4 conv  k7  s1 128->32  [24 -> 18]
//!  5 relu
//!  6 pool  k2  s2          [18 -> 9]
//!  7 conv  k9  s1 32->32   [9 -> 1]   (fused relu)
//!  8 flatten               [32]
//!  9 dense 32->128                    (fused relu)
//! 10 dense 128->5  -> softmax
//! ```
//!
//! The activations fused into layers 7 and 9 carry no separate layer slot,
//! which keeps the layer numbering aligned with the per-layer FLOPs table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::ops;
use crate::tensor::Tensor;

pub const BEAT_LEN: usize = 260;
pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, relu: bool },
    Relu,
    Pool { kernel: usize, stride: usize },
    Flatten,
    Dense { inputs: usize, units: usize, relu: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub prunable: bool,
}

impl LayerSpec {
    fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match self.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, .. } => Some((vec![out_ch, in_ch, kernel], out_ch)),
            LayerKind::Dense { inputs, units, .. } => Some((vec![units, inputs], units)),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { in_ch, kernel, .. } => in_ch * kernel,
            LayerKind::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

/// Weight, bias, optional prune mask and trainability flag of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub mask: Option<PruneMask>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    specs: Vec<LayerSpec>,
    params: Vec<Option<LayerParams>>,
    seed: u64,
    history: Vec<String>,
}

/// The baseline's layer table.
pub fn baseline_specs() -> Vec<LayerSpec> {
    use LayerKind::*;
    let plain = |kind| LayerSpec { kind, prunable: false };
    vec![
        LayerSpec { kind: Conv { in_ch: 1, out_ch: 128, kernel: 50, stride: 3, relu: false }, prunable: true },
        plain(Relu),
        plain(Pool { kernel: 2, stride: 3 }),
        LayerSpec { kind: Conv { in_ch: 128, out_ch: 32, kernel: 7, stride: 1, relu: false }, prunable: true },
        plain(Relu),
        plain(Pool { kernel: 2, stride: 2 }),
        LayerSpec { kind: Conv { in_ch: 32, out_ch: 32, kernel: 9, stride: 1, relu: true }, prunable: true },
        plain(Flatten),
        plain(Dense { inputs: 32, units: 128, relu: true }),
        plain(Dense { inputs: 128, units: NUM_CLASSES, relu: false }),
    ]
}

/// Recorded activations of one forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Tensor>,
    pool_idx: Vec<Option<Vec<usize>>>,
}

impl Trace {
    pub fn logits(&self) -> Option<&Tensor> {
        self.acts.last()
    }

    /// Output of layer `i` (0-based).
    pub fn layer_output(&self, i: usize) -> Option<&Tensor> {
        self.acts.get(i + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer gradients; `None` for parameter-free or frozen layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrads>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                        *x += y;
                    }
                    for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                        *x += y;
                    }
                }
                (a @ None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            g.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weight.data().iter().chain(g.bias.data()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl Model {
    /// Baseline with fan-in scaled uniform weights, zero biases, all-ones
    /// masks on the conv layers, and every group trainable.
    pub fn build_baseline(seed: u64) -> Self {
        Self::from_specs(baseline_specs(), seed).expect("baseline geometry is consistent")
    }

    pub fn from_specs(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            params.push(spec.param_shapes().map(|(wshape, units)| {
                let bound = (6.0 / spec.fan_in() as f64).sqrt();
                let n: usize = wshape.iter().product();
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                LayerParams {
                    mask: spec.prunable.then(|| PruneMask::ones(i, &wshape)),
                    weight: Tensor::new(wshape, w).expect("weight shape"),
                    bias: Tensor::zeros(&[units]),
                    trainable: true,
                }
            }));
        }
        let model = Self { specs, params, seed, history: Vec::new() };
        model.check_geometry()?;
        Ok(model)
    }

    pub(crate) fn from_parts(
        specs: Vec<LayerSpec>,
        params: Vec<Option<LayerParams>>,
        seed: u64,
        history: Vec<String>,
    ) -> Result<Self> {
        let model = Self { specs, params, seed, history };
        model.check_geometry()?;
        Ok(model)
    }

    /// Sequence lengths after each layer for a 260-sample input.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        let mut ch = 1;
        let mut len = BEAT_LEN;
        let mut out = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            match spec.kind {
                LayerKind::Conv { in_ch, out_ch, kernel, stride, .. } => {
                    if in_ch != ch {
                        return Err(Error::ModelShape(format!("conv expects {in_ch} channels, got {ch}")));
                    }
                    len = ops::window_out_len(len, kernel, stride)?;
                    ch = out_ch;
                }
                LayerKind::Pool { kernel, stride } => len = ops::window_out_len(len, kernel, stride)?,
                LayerKind::Flatten => {
                    len *= ch;
                    ch = 1;
                }
                LayerKind::Dense { inputs, units, .. } => {
                    if inputs != len * ch {
                        return Err(Error::ModelShape(format!("dense expects {inputs} inputs, got {}", len * ch)));
                    }
                    len = units;
                    ch = 1;
                }
                LayerKind::Relu => {}
            }
            out.push(len);
        }
        Ok(out)
    }

    fn check_geometry(&self) -> Result<()> {
        if self.params.len() != self.specs.len() {
            return Err(Error::ModelShape("parameter table length differs from layer table".into()));
        }
        for (spec, p) in self.specs.iter().zip(&self.params) {
            match (spec.param_shapes(), p) {
                (None, None) => {}
                (Some((wshape, units)), Some(p)) => {
                    if p.weight.shape() != wshape.as_slice() || p.bias.shape() != [units] {
                        return Err(Error::ModelShape(format!(
                            "expected weight {wshape:?}/bias [{units}], got {:?}/{:?}",
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                    if let Some(m) = &p.mask {
                        if m.shape() != wshape.as_slice() {
                            return Err(Error::ModelShape(format!("mask shape {:?} vs weight {wshape:?}", m.shape())));
                        }
                    }
                }
                _ => return Err(Error::ModelShape("parameters present on a parameter-free layer or missing".into())),
            }
        }
        let lengths = self.lengths()?;
        if lengths.last() != Some(&NUM_CLASSES) {
            return Err(Error::ModelShape(format!("network emits {:?} outputs", lengths.last())));
        }
        Ok(())
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn history(&self) -> &[String] {
        &self.history
    }

    pub fn push_history(&mut self, entry: impl Into<String>) {
        self.history.push(entry.into());
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams> {
        self.params.get(i).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut LayerParams> {
        self.params.get_mut(i).and_then(Option::as_mut)
    }

    pub(crate) fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    /// Indices (0-based) of the prunable conv layers, in network order.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.specs.iter().enumerate().filter(|(_, s)| s.prunable).map(|(i, _)| i).collect()
    }

    /// Indices of every layer that carries parameters.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].is_some()).collect()
    }

    pub fn set_trainable(&mut self, layer: usize, trainable: bool) {
        if let Some(p) = self.layer_mut(layer) {
            p.trainable = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.params.iter_mut().flatten() {
            p.trainable = trainable;
        }
    }

    pub fn has_trainable(&self) -> bool {
        self.params.iter().flatten().any(|p| p.trainable)
    }

    /// Number of exact zeros under the mask of layer `i`.
    pub fn masked_count(&self, i: usize) -> usize {
        self.layer(i).and_then(|p| p.mask.as_ref()).map_or(0, PruneMask::zeros)
    }

    /// Narrows the mask of layer `i` and zeroes the newly pruned weights.
    pub fn apply_mask(&mut self, i: usize, mask: &PruneMask) -> Result<()> {
        let p = self.layer_mut(i).ok_or(Error::InvalidLayer(i))?;
        if mask.shape() != p.weight.shape() {
            return Err(Error::ModelShape(format!("mask {:?} vs weight {:?}", mask.shape(), p.weight.shape())));
        }
        let m = p.mask.get_or_insert_with(|| PruneMask::ones(i, mask.shape()));
        m.intersect(mask);
        m.apply(&mut p.weight);
        Ok(())
    }

    fn check_input(x: &Tensor) -> Result<Tensor> {
        if x.len() != BEAT_LEN {
            return Err(Error::ShapeMismatch { op: "beat input", left: x.shape().to_vec(), right: vec![1, BEAT_LEN] });
        }
        x.clone().reshape(vec![1, BEAT_LEN])
    }

    /// Forward pass recording everything `backward` needs.
    pub fn forward(&self, x: &Tensor) -> Result<Trace> {
        self.prepare().forward(x)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.prepare().logits(x)
    }

    /// Class probabilities and arg-max class (first index on ties).
    pub fn predict(&self, x: &Tensor) -> Result<(usize, Tensor)> {
        self.prepare().predict(x)
    }

    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        ops::softmax_cross_entropy(&self.logits(x)?, label).map(|(l, _)| l)
    }

    /// Cross-entropy loss and gradients for every trainable layer. Frozen
    /// layers get `None`, and masked weight positions are exactly zero.
    pub fn backward(&self, trace: &Trace, label: usize) -> Result<(f64, Gradients)> {
        let prepared = self.prepare();
        let mut acc = GradAccum::new(self);
        let loss = prepared.backward_into(trace, label, &mut acc)?;
        Ok((loss, acc.finish(self)))
    }

    /// Loss and gradients for one labeled beat.
    pub fn loss_and_grads(&self, x: &Tensor, label: usize) -> Result<(f64, Gradients)> {
        let trace = self.forward(x)?;
        self.backward(&trace, label)
    }

    /// Snapshot of the conv weights in the tap-major layout the kernels use,
    /// for running many passes against unchanged parameters.
    pub fn prepare(&self) -> Prepared<'_> {
        let conv_t = self
            .specs
            .iter()
            .zip(&self.params)
            .map(|(spec, p)| match (spec.kind, p) {
                (LayerKind::Conv { .. }, Some(p)) => {
                    let s = p.weight.shape();
                    Some(ops::transpose(p.weight.data(), s[0], s[1] * s[2]))
                }
                _ => None,
            })
            .collect();
        Prepared { model: self, conv_t }
    }
}

pub struct Prepared<'a> {
    model: &'a Model,
    conv_t: Vec<Option<Vec<f64>>>,
}

impl Prepared<'_> {
    pub fn forward(&self, x: &Tensor) -> Result<Trace> {
        let model = self.model;
        let mut acts = Vec::with_capacity(model.specs.len() + 1);
        let mut pool_idx = Vec::with_capacity(model.specs.len());
        acts.push(Model::check_input(x)?);
        for (i, (spec, p)) in model.specs.iter().zip(&model.params).enumerate() {
            let input = acts.last().expect("seeded with input");
            let mut idx = None;
            let out = match (spec.kind, p) {
                (LayerKind::Conv { stride, relu, .. }, Some(p)) => {
                    let geom = ops::ConvGeom::new(input, p.weight.shape(), stride)?;
                    let w_t = self.conv_t[i].as_ref().expect("prepared conv");
                    let y = Tensor::new(
                        geom.out_shape(),
                        ops::conv_forward_prepared(input.data(), w_t, p.bias.data(), geom),
                    )?;
                    if relu {
                        ops::relu_forward(&y)
                    } else {
                        y
                    }
                }
                (LayerKind::Dense { relu, .. }, Some(p)) => {
                    let y = ops::dense_forward(input, &p.weight, &p.bias)?;
                    if relu {
                        ops::relu_forward(&y)
                    } else {
                        y
                    }
                }
                (LayerKind::Relu, _) => ops::relu_forward(input),
                (LayerKind::Pool { kernel, stride }, _) => {
                    let (y, i) = ops::maxpool1d_forward_indexed(input, kernel, stride)?;
                    idx = Some(i);
                    y
                }
                (LayerKind::Flatten, _) => input.clone().reshape(vec![input.len()])?,
                _ => return Err(Error::ModelShape("layer without its parameters".into())),
            };
            acts.push(out);
            pool_idx.push(idx);
        }
        Ok(Trace { acts, pool_idx })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.acts.pop().expect("non-empty trace"))
    }

    pub fn predict(&self, x: &Tensor) -> Result<(usize, Tensor)> {
        let (_, probs) = ops::softmax_cross_entropy(&self.logits(x)?, 0)?;
        Ok((probs.argmax(), probs))
    }

    /// Backpropagates one sample and adds its gradients into `acc`.
    /// Returns the sample's loss.
    pub fn backward_into(&self, trace: &Trace, label: usize, acc: &mut GradAccum) -> Result<f64> {
        let model = self.model;
        if trace.acts.len() != model.specs.len() + 1 {
            return Err(Error::NoForwardTrace);
        }
        let logits = trace.acts.last().expect("checked length");
        let (loss, probs) = ops::softmax_cross_entropy(logits, label)?;
        let mut grad = probs;
        grad.data_mut()[label] -= 1.0;

        let Some(first_trainable) = model.params.iter().position(|p| p.as_ref().is_some_and(|p| p.trainable)) else {
            return Ok(loss);
        };
        for i in (first_trainable..model.specs.len()).rev() {
            let input = &trace.acts[i];
            let output = &trace.acts[i + 1];
            let need_input = i > first_trainable;
            match (model.specs[i].kind, &model.params[i]) {
                (LayerKind::Conv { stride, relu, .. }, Some(p)) => {
                    if relu {
                        grad = ops::relu_backward(output, &grad);
                    }
                    let geom = ops::ConvGeom::new(input, p.weight.shape(), stride)?;
                    let w_t = self.conv_t[i].as_ref().expect("prepared conv");
                    let mut scratch;
                    let (gw_t, gb) = match acc.layers[i].as_mut() {
                        Some((w, b)) => (w.as_mut_slice(), b.as_mut_slice()),
                        None => {
                            scratch = (vec![0.0; w_t.len()], vec![0.0; p.bias.len()]);
                            (scratch.0.as_mut_slice(), scratch.1.as_mut_slice())
                        }
                    };
                    if let Some(gx) =
                        ops::conv_backward_prepared(input.data(), w_t, grad.data(), geom, need_input, gw_t, gb)
                    {
                        grad = Tensor::new(input.shape().to_vec(), gx)?;
                    }
                }
                (LayerKind::Dense { relu, .. }, Some(p)) => {
                    if relu {
                        grad = ops::relu_backward(output, &grad);
                    }
                    if let Some((gw, gb)) = acc.layers[i].as_mut() {
                        let n = input.len();
                        for (row, &gi) in gw.chunks_exact_mut(n).zip(grad.data()) {
                            for (a, &v) in row.iter_mut().zip(input.data()) {
                                *a += gi * v;
                            }
                        }
                        for (a, &gi) in gb.iter_mut().zip(grad.data()) {
                            *a += gi;
                        }
                    }
                    if need_input {
                        grad = ops::dense_backward(input, &p.weight, &grad, true).input.expect("requested");
                    }
                }
                (LayerKind::Relu, _) => grad = ops::relu_backward(output, &grad),
                (LayerKind::Pool { .. }, _) => {
                    let idx = trace.pool_idx[i].as_ref().ok_or(Error::NoForwardTrace)?;
                    grad = ops::maxpool1d_backward(input.shape(), idx, &grad);
                }
                (LayerKind::Flatten, _) => grad = grad.reshape(input.shape().to_vec())?,
                _ => return Err(Error::ModelShape("layer without its parameters".into())),
            }
        }
        Ok(loss)
    }
}

/// Running sum of per-sample gradients for the trainable layers. Conv
/// weight gradients are held tap-major until [`GradAccum::finish`].
pub struct GradAccum {
    layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl GradAccum {
    pub fn new(model: &Model) -> Self {
        let layers = model
            .params
            .iter()
            .map(|p| p.as_ref().filter(|p| p.trainable).map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()])))
            .collect();
        Self { layers }
    }

    /// Converts the running sum to model layout.
    pub fn finish(self, model: &Model) -> Gradients {
        self.finish_scaled(model, 1.0)
    }

    /// As [`GradAccum::finish`], multiplying every entry by `factor`.
    pub fn finish_scaled(self, model: &Model, factor: f64) -> Gradients {
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, acc)| {
                let (mut gw, mut gb) = acc?;
                let spec = model.specs[i];
                let p = model.params[i].as_ref().expect("accumulated layer has params");
                let shape = p.weight.shape();
                if let LayerKind::Conv { .. } = spec.kind {
                    gw = ops::transpose(&gw, shape[1] * shape[2], shape[0]);
                }
                if factor != 1.0 {
                    gw.iter_mut().for_each(|v| *v *= factor);
                    gb.iter_mut().for_each(|v| *v *= factor);
                }
                let mut weight = Tensor::new(shape.to_vec(), gw).expect("weight shape");
                if let Some(m) = &p.mask {
                    m.apply(&mut weight);
                }
                Some(ParamGrads { weight, bias: Tensor::from_vec(gb) })
            })
            .collect();
        Gradients { layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_geometry() {
        let m = Model::build_baseline(1);
        assert_eq!(m.specs().len(), 10);
        assert_eq!(m.prunable_layers(), vec![0, 3, 6]);
        let lens = m.lengths().unwrap();
        assert_eq!((lens[0], lens[3], lens[6]), (71, 18, 1));
        assert_eq!(lens[2], 24);
        assert_eq!(lens[5], 9);
        let counts: Vec<usize> = m.prunable_layers().iter().map(|&i| m.layer(i).unwrap().weight.len()).collect();
        assert_eq!(counts, vec![6400, 28672, 9216]);
        assert_eq!(counts.iter().sum::<usize>(), 44288);
        assert_eq!(m.layer(8).unwrap().weight.shape(), &[128, 32]);
        assert_eq!(m.layer(9).unwrap().weight.shape(), &[5, 128]);
    }

    #[test]
    fn same_seed_same_model() {
        assert_eq!(Model::build_baseline(9), Model::build_baseline(9));
        assert_ne!(Model::build_baseline(9), Model::build_baseline(10));
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let mut m = Model::build_baseline(3);
        let head = m.layer_mut(9).unwrap();
        head.weight.data_mut().fill(0.0);
        let (class, probs) = m.predict(&Tensor::zeros(&[1, BEAT_LEN])).unwrap();
        assert_eq!(class, 0);
        assert!(probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let m = Model::build_baseline(3);
        assert!(matches!(m.predict(&Tensor::zeros(&[1, 259])), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_requires_trace() {
        let m = Model::build_baseline(3);
        assert!(matches!(m.backward(&Trace::default(), 0), Err(Error::NoForwardTrace)));
    }

    #[test]
    fn masked_positions_get_zero_gradient() {
        let mut m = Model::build_baseline(4);
        let mut bits = vec![true; 6400];
        bits[17] = false;
        bits[4000] = false;
        let mask = PruneMask::from_bits(0, &[128, 1, 50], bits).unwrap();
        m.apply_mask(0, &mask).unwrap();
        let x = Tensor::new(vec![1, BEAT_LEN], (0..BEAT_LEN).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let (_, g) = m.loss_and_grads(&x, 2).unwrap();
        let gw = &g.layers[0].as_ref().unwrap().weight;
        assert_eq!(gw.data()[17], 0.0);
        assert_eq!(gw.data()[4000], 0.0);
    }
}
