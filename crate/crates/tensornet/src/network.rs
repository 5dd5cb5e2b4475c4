use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureSpec, Normalizer};
use crate::loss::hinge_loss_grad;
use crate::lstm::{LstmConfig, LstmNetwork};
use crate::mlp::{MlpConfig, MlpNetwork};
use crate::tensor::Tensor;
use crate::{NetError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Mlp(MlpConfig),
    Lstm(LstmConfig),
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Mlp(MlpNetwork),
    Lstm(LstmNetwork),
}

/// A classifier together with its input layout and input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: FeatureSpec,
    arch: Architecture,
    outputs: usize,
    norm: Normalizer,
    body: Body,
}

/// Gradient tensors in the order of [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn fill_zero(&mut self) {
        self.0.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(NetError::Shape("gradient sets differ in length".into()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.axpy(1.0, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(Tensor::max_abs).fold(0.0, f64::max)
    }
}

impl Network {
    /// Fresh network with weights uniform in `±1/√fan_in` and identity normalization.
    pub fn new<R: Rng + ?Sized>(spec: FeatureSpec, arch: Architecture, outputs: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if outputs == 0 {
            return Err(NetError::Config("network needs at least one output".into()));
        }
        let body = match &arch {
            Architecture::Mlp(cfg) => Body::Mlp(MlpNetwork::new(spec.flat_width(), cfg, outputs, rng)),
            Architecture::Lstm(cfg) => {
                if cfg.hidden == 0 {
                    return Err(NetError::Config("LSTM hidden width must be positive".into()));
                }
                Body::Lstm(LstmNetwork::new(spec.per_step_width(), cfg, outputs, rng))
            }
        };
        let norm = Normalizer::identity(spec.per_step_width());
        Ok(Network { spec, arch, outputs, norm, body })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        norm.validate(self.spec.per_step_width())?;
        self.norm = norm;
        Ok(())
    }

    pub fn as_mlp(&self) -> Option<&MlpNetwork> {
        match &self.body {
            Body::Mlp(m) => Some(m),
            Body::Lstm(_) => None,
        }
    }

    pub fn as_lstm(&self) -> Option<&LstmNetwork> {
        match &self.body {
            Body::Lstm(l) => Some(l),
            Body::Mlp(_) => None,
        }
    }

    pub fn as_mlp_mut(&mut self) -> Option<&mut MlpNetwork> {
        match &mut self.body {
            Body::Mlp(m) => Some(m),
            Body::Lstm(_) => None,
        }
    }

    pub fn as_lstm_mut(&mut self) -> Option<&mut LstmNetwork> {
        match &mut self.body {
            Body::Lstm(l) => Some(l),
            Body::Mlp(_) => None,
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        let w = self.spec.per_step_width();
        let ok = match self.body {
            Body::Mlp(_) => window.len() == self.spec.flat_width(),
            Body::Lstm(_) => !window.is_empty() && window.len() % w == 0,
        };
        if !ok {
            return Err(NetError::Shape(format!(
                "window of {} values does not fit {:?} with {w} channels per step",
                window.len(),
                self.spec
            )));
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("input window".into()));
        }
        Ok(())
    }

    /// Predicted vector in `(0, 1)^outputs` for a raw row-major window.
    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let mut x = Vec::with_capacity(window.len());
        self.norm.apply(window, &mut x);
        let out = match &self.body {
            Body::Mlp(m) => m.forward(&x),
            Body::Lstm(l) => l.forward(&x),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("network output".into()));
        }
        Ok(out)
    }

    /// Hinge loss of one window; its gradient is added into `grads`.
    pub fn accumulate_gradient(&self, window: &[f64], label: &[f64], epsilon: f64, grads: &mut Gradients) -> Result<f64> {
        self.check_window(window)?;
        if label.len() != self.outputs {
            return Err(NetError::Shape(format!("label has {} entries, network {}", label.len(), self.outputs)));
        }
        let mut x = Vec::with_capacity(window.len());
        self.norm.apply(window, &mut x);
        let dloss = |pred: &[f64], d: &mut [f64]| hinge_loss_grad(pred, label, epsilon, d);
        let loss = match &self.body {
            Body::Mlp(m) => m.loss_grad(&x, dloss, &mut grads.0),
            Body::Lstm(l) => l.loss_grad(&x, dloss, &mut grads.0),
        };
        if !loss.is_finite() {
            return Err(NetError::NonFinite("loss".into()));
        }
        Ok(loss)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match &self.body {
            Body::Mlp(m) => m.stack.params(),
            Body::Lstm(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.body {
            Body::Mlp(m) => m.stack.params_mut(),
            Body::Lstm(l) => l.params_mut(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.body {
            Body::Mlp(m) => m.param_names(),
            Body::Lstm(l) => l.param_names(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(self.params().iter().map(|t| t.zeros_like()).collect())
    }

    /// Replaces every parameter, keeping shapes.
    pub fn load_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(NetError::Shape(format!("expected {} tensors, got {}", params.len(), values.len())));
        }
        for (p, v) in params.iter().zip(&values) {
            if p.shape() != v.shape() {
                return Err(NetError::Shape(format!("{:?} vs {:?}", p.shape(), v.shape())));
            }
        }
        for (p, v) in params.iter_mut().zip(values) {
            **p = v;
        }
        Ok(())
    }
}
