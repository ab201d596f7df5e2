//! Run configuration: TOML file with one section per subsystem, overridable
//! from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_attention::FreqAttentionConfig;
use crate::image_pipeline::AugmentConfig;
use crate::smash::SmashConfig;

/// Which attention branches are disabled for an ablation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Both branches active.
    #[default]
    Full,
    /// Both recalibrations replaced by the identity.
    NoLfa,
    /// Poor-branch (low-frequency) gain bypassed.
    NoLow,
    /// Rich-branch (high-frequency) gain bypassed.
    NoHigh,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoLfa, Ablation::NoLow, Ablation::NoHigh];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoLfa => "no_lfa",
            Ablation::NoLow => "no_low",
            Ablation::NoHigh => "no_high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_lfa" => Ok(Ablation::NoLfa),
            "no_low" => Ok(Ablation::NoLow),
            "no_high" => Ok(Ablation::NoHigh),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected full|no_lfa|no_low|no_high)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-4, batch_size: 32 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Fraction of the manifest held out for validation, selected by a
    /// seeded hash of each path.
    pub val_fraction: f64,
    /// Optional convergence targets; when both reached, training stops early.
    pub stop_at_train_acc: Option<f64>,
    pub stop_at_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { val_fraction: 0.10, stop_at_train_acc: None, stop_at_val_acc: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub ablation: Ablation,
    pub smash: SmashConfig,
    pub attention: FreqAttentionConfig,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 1,
            ablation: Ablation::Full,
            smash: SmashConfig::default(),
            attention: FreqAttentionConfig::default(),
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.smash.validate()?;
        self.attention.validate(crate::model::FEATURE_CHANNELS)?;
        self.augment.validate()?;
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.train.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} outside [0,1)",
                self.train.val_fraction
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.optimizer.batch_size, 32);
        assert!((back.optimizer.lr - 1e-4).abs() < 1e-15);
        assert_eq!(back.smash.patch_count, 192);
        assert_eq!(back.attention.groups, 8);
        assert_eq!(back.ablation, Ablation::Full);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            epochs = 3
            ablation = "no_low"

            [smash]
            patch_size = 8
            patch_count = 48
            view_size = 16

            [attention]
            groups = 4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ablation, Ablation::NoLow);
        assert_eq!(cfg.smash.patch_size, 8);
        assert_eq!(cfg.smash.select_ratio_percent, 33);
        assert_eq!(cfg.attention.groups, 4);
        assert!((cfg.attention.alpha - 0.5).abs() < 1e-15);
        assert_eq!(cfg.optimizer.batch_size, 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_ablation_string_is_rejected() {
        assert!(Ablation::parse("none").is_err());
        assert_eq!(Ablation::parse("no_high").unwrap(), Ablation::NoHigh);
    }
}
