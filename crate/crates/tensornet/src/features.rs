use serde::{Deserialize, Serialize};

use crate::{NetError, Result};

/// Which signals make up one time step of the network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Outputs and commanded inputs, `[y, u]`.
    ModelFree,
    /// Outputs, commanded inputs and residuals, `[y, u, ỹ]`.
    ModelBased,
    /// Residuals only, `[ỹ]`.
    ResidualOnly,
}

impl FeatureMode {
    pub fn uses_residuals(&self) -> bool {
        !matches!(self, FeatureMode::ModelFree)
    }
}

/// Input layout: `t` steps of `per_step_width()` channels, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mode: FeatureMode,
    /// Output dimension.
    pub p: usize,
    /// Input dimension.
    pub m: usize,
    /// Window length.
    pub t: usize,
}

impl FeatureSpec {
    pub fn new(mode: FeatureMode, p: usize, m: usize, t: usize) -> Result<Self> {
        let spec = FeatureSpec { mode, p, m, t };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.t == 0 || (self.m == 0 && self.mode != FeatureMode::ResidualOnly) {
            return Err(NetError::Config(format!("degenerate feature spec {self:?}")));
        }
        Ok(())
    }

    pub fn per_step_width(&self) -> usize {
        match self.mode {
            FeatureMode::ModelFree => self.p + self.m,
            FeatureMode::ModelBased => 2 * self.p + self.m,
            FeatureMode::ResidualOnly => self.p,
        }
    }

    pub fn flat_width(&self) -> usize {
        self.per_step_width() * self.t
    }
}

/// Per-channel affine map `(x − offset) · scale`, applied to every time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Normalizer { offset: vec![0.0; width], scale: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.offset.len()
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.offset.len() != width || self.scale.len() != width {
            return Err(NetError::Shape(format!(
                "normalizer has {}/{} channels, features have {width}",
                self.offset.len(),
                self.scale.len()
            )));
        }
        if !self.offset.iter().chain(self.scale.iter()).all(|v| v.is_finite()) {
            return Err(NetError::NonFinite("normalizer".into()));
        }
        Ok(())
    }

    /// Normalizes a row-major `[steps × width]` buffer into `out`.
    pub fn apply(&self, window: &[f64], out: &mut Vec<f64>) {
        let w = self.width();
        out.clear();
        out.extend(
            window
                .iter()
                .enumerate()
                .map(|(i, v)| (v - self.offset[i % w]) * self.scale[i % w]),
        );
    }
}
