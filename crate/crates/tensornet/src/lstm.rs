use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linear::dot;
use crate::mlp::DenseStack;
use crate::sigmoid;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden: usize,
    /// Widths of the tanh layers between the final hidden state and the output.
    pub head: Vec<usize>,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { hidden: 128, head: vec![128, 64] }
    }
}

/// Single-layer LSTM read out at the last step through a dense head.
///
/// Gate blocks in the stacked weights are ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmNetwork {
    /// `[4H, D]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub b: Tensor,
    pub(crate) head: DenseStack,
}

struct Cache {
    /// Activated gates per step, `[T, 4H]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmNetwork {
    pub fn new<R: Rng + ?Sized>(input: usize, cfg: &LstmConfig, outputs: usize, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let bound = 1.0 / ((input + h) as f64).sqrt();
        LstmNetwork {
            w_ih: Tensor::uniform(vec![4 * h, input], bound, rng),
            w_hh: Tensor::uniform(vec![4 * h, h], bound, rng),
            b: Tensor::uniform(vec![4 * h], bound, rng),
            head: DenseStack::new(h, &cfg.head, outputs, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_width(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn head_layers(&self) -> &[crate::Linear] {
        &self.head.layers
    }

    pub fn head_layers_mut(&mut self) -> &mut [crate::Linear] {
        &mut self.head.layers
    }

    fn run(&self, xs: &[f64]) -> Cache {
        let d = self.input_width();
        let hd = self.hidden();
        let steps = xs.len() / d;
        let (wi, wh, b) = (self.w_ih.data(), self.w_hh.data(), self.b.data());
        let mut cache = Cache {
            gates: vec![0.0; steps * 4 * hd],
            c: vec![0.0; steps * hd],
            tanh_c: vec![0.0; steps * hd],
            h: vec![0.0; steps * hd],
        };
        let zero = vec![0.0; hd];
        for t in 0..steps {
            let x = &xs[t * d..(t + 1) * d];
            let (h_prev, c_prev) = if t == 0 {
                (&zero[..], &zero[..])
            } else {
                (&cache.h[(t - 1) * hd..t * hd], &cache.c[(t - 1) * hd..t * hd])
            };
            let mut z = vec![0.0; 4 * hd];
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = b[r] + dot(&wi[r * d..(r + 1) * d], x) + if t == 0 { 0.0 } else { dot(&wh[r * hd..(r + 1) * hd], h_prev) };
            }
            let mut c = vec![0.0; hd];
            let mut tc = vec![0.0; hd];
            let mut h = vec![0.0; hd];
            let g = &mut cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
            for j in 0..hd {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[hd + j]);
                let gg = z[2 * hd + j].tanh();
                let o = sigmoid(z[3 * hd + j]);
                g[j] = i;
                g[hd + j] = f;
                g[2 * hd + j] = gg;
                g[3 * hd + j] = o;
                c[j] = f * c_prev[j] + i * gg;
                tc[j] = c[j].tanh();
                h[j] = o * tc[j];
            }
            cache.c[t * hd..(t + 1) * hd].copy_from_slice(&c);
            cache.tanh_c[t * hd..(t + 1) * hd].copy_from_slice(&tc);
            cache.h[t * hd..(t + 1) * hd].copy_from_slice(&h);
        }
        cache
    }

    pub(crate) fn forward(&self, xs: &[f64]) -> Vec<f64> {
        let hd = self.hidden();
        let cache = self.run(xs);
        let last = &cache.h[cache.h.len() - hd..];
        self.head.forward(last).acts.pop().expect("head has a layer")
    }

    /// Gradient layout: `[w_ih, w_hh, b, head…]`.
    pub(crate) fn loss_grad(&self, xs: &[f64], dloss: impl FnOnce(&[f64], &mut [f64]) -> f64, grads: &mut [Tensor]) -> f64 {
        let d = self.input_width();
        let hd = self.hidden();
        let steps = xs.len() / d;
        let cache = self.run(xs);
        let last = &cache.h[(steps - 1) * hd..];
        let head_cache = self.head.forward(last);
        let pred = head_cache.acts.last().expect("head has a layer");
        let mut dpred = vec![0.0; pred.len()];
        let loss = dloss(pred, &mut dpred);
        if dpred.iter().all(|v| *v == 0.0) {
            return loss;
        }
        let (core, head_grads) = grads.split_at_mut(3);
        let mut dh = self.head.backward(&head_cache, &dpred, head_grads, true);
        let [gwi, gwh, gb] = core else { unreachable!("three core tensors") };
        let (gwi, gwh, gb) = (gwi.data_mut(), gwh.data_mut(), gb.data_mut());
        let wh = self.w_hh.data();
        let mut dc = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        for t in (0..steps).rev() {
            let g = &cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let tc = &cache.tanh_c[t * hd..(t + 1) * hd];
            for j in 0..hd {
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let c_prev = if t == 0 { 0.0 } else { cache.c[(t - 1) * hd + j] };
                let d_o = dh[j] * tc[j];
                let dcj = dc[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dcj * gg * i * (1.0 - i);
                dz[hd + j] = dcj * c_prev * f * (1.0 - f);
                dz[2 * hd + j] = dcj * i * (1.0 - gg * gg);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let x = &xs[t * d..(t + 1) * d];
            for (r, dzr) in dz.iter().enumerate() {
                gb[r] += dzr;
                if *dzr == 0.0 {
                    continue;
                }
                for (gw, xi) in gwi[r * d..(r + 1) * d].iter_mut().zip(x) {
                    *gw += dzr * xi;
                }
                if t > 0 {
                    let h_prev = &cache.h[(t - 1) * hd..t * hd];
                    for (gw, hi) in gwh[r * hd..(r + 1) * hd].iter_mut().zip(h_prev) {
                        *gw += dzr * hi;
                    }
                }
            }
            if t > 0 {
                dh.iter_mut().for_each(|v| *v = 0.0);
                for (r, dzr) in dz.iter().enumerate() {
                    if *dzr != 0.0 {
                        for (v, w) in dh.iter_mut().zip(&wh[r * hd..(r + 1) * hd]) {
                            *v += dzr * w;
                        }
                    }
                }
            }
        }
        loss
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.w_ih, &self.w_hh, &self.b];
        v.extend(self.head.params());
        v
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.w_ih, &mut self.w_hh, &mut self.b];
        v.extend(self.head.params_mut());
        v
    }

    pub(crate) fn param_names(&self) -> Vec<String> {
        let mut v = vec!["lstm.w_ih".to_string(), "lstm.w_hh".into(), "lstm.b".into()];
        v.extend((0..self.head.layers.len()).flat_map(|l| [format!("head.{l}.w"), format!("head.{l}.b")]));
        v
    }
}
