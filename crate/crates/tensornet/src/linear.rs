use rand::Rng;

use crate::tensor::Tensor;

/// Affine layer `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            w: Tensor::uniform(vec![outputs, inputs], bound, rng),
            b: Tensor::uniform(vec![outputs], bound, rng),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear { w: Tensor::zeros(vec![outputs, inputs]), b: Tensor::zeros(vec![outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        let n = self.inputs();
        let w = self.w.data();
        for (o, (yo, bo)) in y.iter_mut().zip(self.b.data()).enumerate() {
            *yo = bo + dot(&w[o * n..(o + 1) * n], x);
        }
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` and, when requested, writes `dx = Wᵀ dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], gw: &mut Tensor, gb: &mut Tensor, dx: Option<&mut [f64]>) {
        let n = self.inputs();
        let gwd = gw.data_mut();
        for (o, d) in dy.iter().enumerate() {
            if *d != 0.0 {
                for (g, xi) in gwd[o * n..(o + 1) * n].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        for (g, d) in gb.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.w.data();
            for (o, d) in dy.iter().enumerate() {
                if *d != 0.0 {
                    for (v, wi) in dx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                        *v += d * wi;
                    }
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize without reassociating.
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            s[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}
