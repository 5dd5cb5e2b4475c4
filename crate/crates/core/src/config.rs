//! Run configuration: `desk` and `paper` profiles with TOML overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tensornet::{Architecture, LstmConfig};

use crate::control::{ControllerKind, LqrWeights, SafetySpec};
use crate::eval::EvalConfig;
use crate::quadsim::{Convention, QuadParams, SimConfig};
use crate::train::{InitialStateSampler, Scenario, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale `{s}` (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

/// Everything a command needs besides its input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scale: Scale,
    pub seed: u64,
    /// Vehicle being simulated (and the controller design model).
    pub params: QuadParams,
    /// Reference model for residuals.
    pub reference: QuadParams,
    pub sim: SimConfig,
    pub controller: ControllerKind,
    pub lqr: LqrWeights,
    pub safety: SafetySpec,
    pub initial: InitialStateSampler,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn profile(scale: Scale) -> Self {
        let sim = SimConfig { convention: Convention::StandardZyx, ..SimConfig::default() };
        let base = RunConfig {
            scale,
            seed: 0,
            params: QuadParams::nominal(),
            reference: QuadParams::nominal(),
            sim,
            controller: ControllerKind::Lqr,
            lqr: LqrWeights::default(),
            safety: SafetySpec::default(),
            initial: InitialStateSampler::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        match scale {
            Scale::Desk => RunConfig {
                train: TrainConfig {
                    n1: 20,
                    buffer_capacity: 12_000,
                    batch_size: 32,
                    max_epochs: 100,
                    min_epochs: 10,
                    window_stride: 5,
                    learning_rate: 0.05,
                    architecture: Architecture::Lstm(LstmConfig { hidden: 32, head: vec![32, 32] }),
                    ..TrainConfig::default()
                },
                eval: EvalConfig { n_test_traj: 100, ..EvalConfig::default() },
                ..base
            },
            Scale::Paper => RunConfig {
                train: TrainConfig {
                    n1: 200,
                    buffer_capacity: 1_500_000,
                    batch_size: 50_000,
                    max_epochs: 200,
                    min_epochs: 10,
                    architecture: Architecture::Lstm(LstmConfig::default()),
                    ..TrainConfig::default()
                },
                eval: EvalConfig { n_test_traj: 2000, ..EvalConfig::default() },
                ..base
            },
        }
    }

    /// Profile defaults for the file's `scale` (or `scale_override`), with the
    /// file's keys merged on top. Unknown keys are rejected.
    pub fn from_toml(text: &str, scale_override: Option<Scale>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        let scale = match (scale_override, user.get("scale")) {
            (Some(s), _) => s,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(v)) => return Err(Error::Config(format!("config: scale must be a string, got {v}"))),
            (None, None) => Scale::Desk,
        };
        let mut merged = toml::Table::try_from(RunConfig::profile(scale))
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        merge(&mut merged, user, "")?;
        merged.insert("scale".into(), toml::Value::String(scale.to_string()));
        let cfg: RunConfig =
            toml::Value::Table(merged).try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, scale_override: Option<Scale>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, scale_override)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.reference.validate()?;
        self.sim.validate()?;
        self.train.validate(&self.sim)?;
        self.eval.validate()?;
        if self.eval.onset_step + 1 < self.train.window_len || self.eval.onset_step > self.sim.horizon {
            return Err(Error::Config(format!(
                "evaluation onset {} does not fit window length {} and horizon {}",
                self.eval.onset_step, self.train.window_len, self.sim.horizon
            )));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            params: self.params,
            reference: self.reference,
            sim: self.sim,
            controller: self.controller,
            lqr: self.lqr,
            safety: self.safety,
            initial: self.initial,
        }
    }
}

/// Recursively overlays `user` onto `base`. A single-key table replacing a
/// different single-key table switches an enum variant and is taken whole.
fn merge(base: &mut toml::Table, user: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let Some(slot) = base.get_mut(&key) else {
            return Err(Error::Config(format!("config: unknown key `{path}`")));
        };
        match (slot, value) {
            (toml::Value::Table(b), toml::Value::Table(u)) => {
                let variant_switch = b.len() == 1 && u.len() == 1 && b.keys().next() != u.keys().next();
                if variant_switch {
                    *b = u;
                } else {
                    merge(b, u, &path)?;
                }
            }
            (slot, value) => *slot = value,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensornet::{FeatureMode, MlpConfig};

    #[test]
    fn profiles_validate_and_round_trip() {
        for scale in [Scale::Desk, Scale::Paper] {
            let cfg = RunConfig::profile(scale);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml(&text, None).unwrap(), cfg);
        }
    }

    #[test]
    fn paper_profile_carries_reference_constants() {
        let p = RunConfig::profile(Scale::Paper);
        assert_eq!(p.eval.theta_tol, 0.2);
        assert_eq!(p.train.fault_levels.len(), 11);
        assert_eq!((p.train.window_len, p.train.onset_step), (100, 100));
        assert_eq!((p.train.batch_size, p.train.buffer_capacity), (50_000, 1_500_000));
    }

    #[test]
    fn overrides_merge_deeply() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n[train]\nn1 = 3\nmode = \"model-based\"\n[train.architecture.mlp]\nhidden = [8]\n[params]\nmass = 0.03\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.n1, 3);
        assert_eq!(cfg.train.mode, FeatureMode::ModelBased);
        assert_eq!(cfg.train.architecture, Architecture::Mlp(MlpConfig { hidden: vec![8] }));
        assert_eq!(cfg.params.mass, 0.03);
        assert_eq!(cfg.params.ixx, QuadParams::nominal().ixx);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn scale_override_wins() {
        let cfg = RunConfig::from_toml("scale = \"desk\"\n", Some(Scale::Paper)).unwrap();
        assert_eq!(cfg.scale, Scale::Paper);
        assert_eq!(cfg.train.n1, 200);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nn_one = 3\n", None).is_err());
        assert!(RunConfig::from_toml("scale = \"huge\"\n", None).is_err());
        assert!(RunConfig::from_toml("[eval]\ntheta_tol = 1.5\n", None).is_err());
        assert!(RunConfig::from_toml("[train]\nfault_levels = [0.0]\n", None).is_err());
        assert!(RunConfig::from_toml("seed = \"x\"\n", None).is_err());
    }
}
