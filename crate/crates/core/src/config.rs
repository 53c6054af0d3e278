use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the projected query is combined with each frame feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Video only; the query is ignored.
    None,
    Sum,
    Concat,
    Mult,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::None,
        FusionMode::Sum,
        FusionMode::Concat,
        FusionMode::Mult,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
            FusionMode::Mult => "mult",
        }
    }

    /// Width of a fused row for frame features of width `d`.
    pub fn fused_width(self, d: usize) -> usize {
        match self {
            FusionMode::Concat => 2 * d,
            _ => d,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "sum" => Ok(FusionMode::Sum),
            "concat" => Ok(FusionMode::Concat),
            "mult" => Ok(FusionMode::Mult),
            other => Err(Error::config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// ResNet-34 feature trunk, 512-wide penultimate features.
    ReferenceCnn,
    /// Two conv blocks, 32-wide features. Fast enough for CPU tests.
    TinyCnn,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::ReferenceCnn => "reference",
            BackboneKind::TinyCnn => "tiny",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" | "reference_cnn" => Ok(BackboneKind::ReferenceCnn),
            "tiny" | "tiny_cnn" => Ok(BackboneKind::TinyCnn),
            other => Err(Error::config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub fusion_mode: FusionMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub backbone: BackboneKind,
    pub freeze_backbone: bool,
    pub seed: u64,
    /// Optional weight bundle for the backbone (e.g. converted ImageNet
    /// weights). Without it the backbone starts from a seeded random init.
    pub backbone_weights: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            fusion_mode: FusionMode::Mult,
            epochs: 25,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            backbone: BackboneKind::ReferenceCnn,
            freeze_backbone: false,
            seed: 0,
            backbone_weights: None,
        }
    }
}

impl TrainingConfig {
    /// CPU-scale preset: tiny backbone with frozen, cached features.
    pub fn desk() -> Self {
        Self {
            backbone: BackboneKind::TinyCnn,
            freeze_backbone: true,
            ..Self::default()
        }
    }

    /// Desk preset for the synthetic ablation corpora. 25 epochs at lr 1e-4
    /// (≈750 steps on 30 training videos) is not enough for the bilinear
    /// mult interaction to emerge from a zero head; 3e-3 is.
    pub fn synthetic_ablation() -> Self {
        Self {
            learning_rate: 3e-3,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1)")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_optimizer_settings() {
        let c = TrainingConfig::default();
        assert_eq!(c.epochs, 25);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.adam_beta1, 0.9);
        assert_eq!(c.adam_beta2, 0.999);
        assert_eq!(c.adam_eps, 1e-8);
        assert!(!c.freeze_backbone);
        assert!(TrainingConfig::desk().freeze_backbone);
        assert_eq!(TrainingConfig::synthetic_ablation().learning_rate, 3e-3);
        assert_eq!(TrainingConfig::synthetic_ablation().epochs, 25);
    }

    #[test]
    fn unknown_fusion_mode_is_config_error() {
        assert!(matches!(
            "bilinear".parse::<FusionMode>(),
            Err(Error::Config(_))
        ));
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainingConfig {
            fusion_mode: FusionMode::Concat,
            seed: 9,
            ..TrainingConfig::desk()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"fusion_mode\":\"concat\""));
        assert!(s.contains("\"backbone\":\"tiny_cnn\""));
        let back: TrainingConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
