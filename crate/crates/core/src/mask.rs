use crate::tensor::Tensor;

/// Binary keep-mask congruent to one layer's weight tensor. `false` marks a
/// pruned position that is held at exactly zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    layer: usize,
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn ones(layer: usize, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { layer, shape: shape.to_vec(), bits: vec![true; n] }
    }

    pub fn from_bits(layer: usize, shape: &[usize], bits: Vec<bool>) -> Option<Self> {
        (shape.iter().product::<usize>() == bits.len()).then(|| Self { layer, shape: shape.to_vec(), bits })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn keeps(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }

    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.bits.len() as f64
    }

    /// Pruned positions accumulate: a position masked in either stays masked.
    pub fn intersect(&mut self, other: &PruneMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= b;
        }
    }

    /// Writes exact zeros into every pruned position.
    pub fn apply(&self, weight: &mut Tensor) {
        for (w, &keep) in weight.data_mut().iter_mut().zip(&self.bits) {
            if !keep {
                *w = 0.0;
            }
        }
    }
}
