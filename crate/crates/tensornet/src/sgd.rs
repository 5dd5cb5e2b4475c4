use serde::{Deserialize, Serialize};

use crate::network::{Gradients, Network};
use crate::{NetError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 1e-3, batch_size: 512, seed: 0 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(NetError::Config(format!("invalid SGD settings {self:?}")));
        }
        Ok(())
    }
}

/// `w ← w − lr · g` for every parameter.
pub fn sgd_step(net: &mut Network, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(NetError::NonFinite("gradient".into()));
    }
    let mut params = net.params_mut();
    if params.len() != grads.0.len() {
        return Err(NetError::Shape(format!("{} parameters, {} gradients", params.len(), grads.0.len())));
    }
    for (p, g) in params.iter_mut().zip(&grads.0) {
        p.axpy(-learning_rate, g)?;
    }
    Ok(())
}
