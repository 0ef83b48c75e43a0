use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for UpdateRule {
    fn default() -> Self {
        UpdateRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Optimizer rule plus its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub rule: UpdateRule,
    pub lr: f64,
    step: u64,
    first: Vec<Option<Moments>>,
    second: Vec<Option<Moments>>,
}

impl OptimizerState {
    pub fn new(rule: UpdateRule, lr: f64, model: &Model) -> Self {
        let zeros = |m: &Model| -> Vec<Option<Moments>> {
            (0..m.specs().len())
                .map(|i| {
                    m.layer(i).map(|p| Moments { weight: vec![0.0; p.weight.len()], bias: vec![0.0; p.bias.len()] })
                })
                .collect()
        };
        let adaptive = matches!(rule, UpdateRule::Adam { .. });
        Self {
            rule,
            lr,
            step: 0,
            first: if adaptive { zeros(model) } else { Vec::new() },
            second: if adaptive { zeros(model) } else { Vec::new() },
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Frozen groups and masked weight positions are not
    /// touched at all (neither the parameter nor its moments).
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        for (i, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            let Some(p) = model.layer_mut(i) else { continue };
            if !p.trainable {
                continue;
            }
            let mask = p.mask.clone();
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m.keeps(j));
            match self.rule {
                UpdateRule::Sgd => {
                    for (j, (w, gv)) in p.weight.data_mut().iter_mut().zip(g.weight.data()).enumerate() {
                        if keep(j) {
                            *w -= self.lr * gv;
                        }
                    }
                    for (b, gv) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                        *b -= self.lr * gv;
                    }
                }
                UpdateRule::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let lr = self.lr;
                    let m = self.first[i].as_mut().expect("moments for parameter layer");
                    let v = self.second[i].as_mut().expect("moments for parameter layer");
                    let update = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
                        *m = beta1 * *m + (1.0 - beta1) * grad;
                        *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *param -= lr * m_hat / (v_hat.sqrt() + eps);
                    };
                    for (j, w) in p.weight.data_mut().iter_mut().enumerate() {
                        if keep(j) {
                            update(w, g.weight.data()[j], &mut m.weight[j], &mut v.weight[j]);
                        }
                    }
                    for (j, b) in p.bias.data_mut().iter_mut().enumerate() {
                        update(b, g.bias.data()[j], &mut m.bias[j], &mut v.bias[j]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PruneMask;
    use crate::model::ParamGrads;
    use crate::tensor::Tensor;

    fn const_grads(model: &Model, value: f64) -> Gradients {
        Gradients {
            layers: (0..model.specs().len())
                .map(|i| {
                    model.layer(i).map(|p| {
                        let mut weight = Tensor::zeros(p.weight.shape());
                        weight.data_mut().fill(value);
                        let mut bias = Tensor::zeros(p.bias.shape());
                        bias.data_mut().fill(value);
                        ParamGrads { weight, bias }
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn plain_rule_step() {
        let mut model = Model::build_baseline(0);
        model.layer_mut(9).unwrap().weight.data_mut()[0] = 1.0;
        let grads = const_grads(&model, 2.0);
        let mut opt = OptimizerState::new(UpdateRule::Sgd, 0.1, &model);
        opt.step(&mut model, &grads);
        assert!((model.layer(9).unwrap().weight.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn masked_and_frozen_positions_are_untouched() {
        let mut model = Model::build_baseline(0);
        let mut bits = vec![true; 6400];
        bits[5] = false;
        model.apply_mask(0, &PruneMask::from_bits(0, &[128, 1, 50], bits).unwrap()).unwrap();
        model.set_trainable(8, false);
        let before = model.clone();
        let grads = const_grads(&model, 3.0);
        for rule in [UpdateRule::Sgd, UpdateRule::default()] {
            let mut m = before.clone();
            let mut opt = OptimizerState::new(rule, 0.01, &m);
            opt.step(&mut m, &grads);
            assert_eq!(m.layer(0).unwrap().weight.data()[5].to_bits(), 0.0f64.to_bits());
            assert_eq!(m.layer(8), before.layer(8));
            assert_ne!(m.layer(9), before.layer(9));
        }
    }

    #[test]
    fn adam_first_step_is_uniform() {
        let mut model = Model::build_baseline(2);
        let before = model.clone();
        let grads = const_grads(&model, 1.0);
        let lr = 1e-3;
        let mut opt = OptimizerState::new(UpdateRule::default(), lr, &model);
        opt.step(&mut model, &grads);
        // m_hat = v_hat = 1 after one step, so every move is lr / (1 + eps).
        let expected = lr / (1.0 + 1e-8);
        for i in model.param_layers() {
            let (a, b) = (model.layer(i).unwrap(), before.layer(i).unwrap());
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                assert!(((y - x) - expected).abs() < 1e-15);
            }
        }
    }
}
