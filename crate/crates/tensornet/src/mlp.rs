use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linear::Linear;
use crate::sigmoid;
use crate::tensor::Tensor;

/// Hidden widths of the MLP, input side first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![128, 128, 128, 128, 64] }
    }
}

/// Chain of linear layers: tanh between them, sigmoid after the last.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DenseStack {
    pub layers: Vec<Linear>,
}

/// Post-activation values of every layer; `acts[0]` is the input.
pub(crate) struct DenseCache {
    pub acts: Vec<Vec<f64>>,
}

impl DenseStack {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let layers = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        DenseStack { layers }
    }

    pub fn forward(&self, x: &[f64]) -> DenseCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.outputs()];
            layer.forward(&acts[l], &mut y);
            if l == last {
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        DenseCache { acts }
    }

    /// Backpropagates `dpred` (gradient w.r.t. the sigmoid outputs). Gradient
    /// tensors are laid out as `[w0, b0, w1, b1, …]`. Returns the gradient
    /// with respect to the stack input when `want_input` is set.
    pub fn backward(&self, cache: &DenseCache, dpred: &[f64], grads: &mut [Tensor], want_input: bool) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let out = &cache.acts[last + 1];
        let mut dz: Vec<f64> = dpred.iter().zip(out).map(|(d, p)| d * p * (1.0 - p)).collect();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let (gw, rest) = grads[2 * l..].split_at_mut(1);
            let need_dx = l > 0 || want_input;
            let mut dx = vec![0.0; if need_dx { layer.inputs() } else { 0 }];
            layer.backward(&cache.acts[l], &dz, &mut gw[0], &mut rest[0], need_dx.then_some(dx.as_mut_slice()));
            if l > 0 {
                let a = &cache.acts[l];
                dz = dx.iter().zip(a).map(|(d, a)| d * (1.0 - a * a)).collect();
            } else {
                return dx;
            }
        }
        Vec::new()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }
}

/// Fully connected classifier over the flattened window.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    pub(crate) stack: DenseStack,
}

impl MlpNetwork {
    pub fn new<R: Rng + ?Sized>(input: usize, cfg: &MlpConfig, outputs: usize, rng: &mut R) -> Self {
        MlpNetwork { stack: DenseStack::new(input, &cfg.hidden, outputs, rng) }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.stack.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.stack.layers
    }

    pub fn input_width(&self) -> usize {
        self.stack.layers[0].inputs()
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.stack.forward(x).acts.pop().expect("at least one layer")
    }

    pub(crate) fn loss_grad(&self, x: &[f64], dloss: impl FnOnce(&[f64], &mut [f64]) -> f64, grads: &mut [Tensor]) -> f64 {
        let cache = self.stack.forward(x);
        let pred = cache.acts.last().expect("at least one layer");
        let mut dpred = vec![0.0; pred.len()];
        let loss = dloss(pred, &mut dpred);
        if dpred.iter().any(|d| *d != 0.0) {
            self.stack.backward(&cache, &dpred, grads, false);
        }
        loss
    }

    pub(crate) fn param_names(&self) -> Vec<String> {
        (0..self.stack.layers.len()).flat_map(|l| [format!("mlp.{l}.w"), format!("mlp.{l}.b")]).collect()
    }
}
