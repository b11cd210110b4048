use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PpxConfig;

/// Cumulative strides of the four encoder stages.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    #[serde(default = "default_heads")]
    pub heads: [usize; 4],
    #[serde(default = "default_sr")]
    pub sr_ratios: [usize; 4],
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Ordered modality names; the first is the RGB branch.
    pub modalities: Vec<String>,
    pub num_classes: usize,
    #[serde(default)]
    pub ppx: PpxConfig,
    pub decoder_dim: usize,
    #[serde(default = "default_strides")]
    pub strides: [usize; 4],
}

fn default_heads() -> [usize; 4] {
    [1, 2, 2, 4]
}

fn default_sr() -> [usize; 4] {
    [8, 4, 2, 1]
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_strides() -> [usize; 4] {
    STAGE_STRIDES
}

pub const DELIVER_CLASSES: usize = 25;

pub fn quad_modalities() -> Vec<String> {
    ["rgb", "depth", "event", "lidar"].iter().map(|s| s.to_string()).collect()
}

impl ModelConfig {
    /// Desk-scale default: channels {16, 32, 48, 64}, one block per stage.
    pub fn desk(modalities: Vec<String>) -> Self {
        Self {
            stage_channels: [16, 32, 48, 64],
            stage_depths: [1, 1, 1, 1],
            heads: default_heads(),
            sr_ratios: default_sr(),
            mlp_ratio: 4,
            modalities,
            num_classes: DELIVER_CLASSES,
            ppx: PpxConfig::default(),
            decoder_dim: 64,
            strides: STAGE_STRIDES,
        }
    }

    /// Smallest trainable config: channels {8, 16, 24, 32}.
    pub fn tiny(modalities: Vec<String>) -> Self {
        Self {
            stage_channels: [8, 16, 24, 32],
            stage_depths: [1, 1, 1, 1],
            heads: [1, 1, 2, 2],
            decoder_dim: 32,
            ..Self::desk(modalities)
        }
    }

    /// Paper-scale widths {64, 128, 320, 512} with MiT-B2 depths.
    pub fn paper_b2(modalities: Vec<String>) -> Self {
        Self {
            stage_channels: [64, 128, 320, 512],
            stage_depths: [3, 4, 6, 3],
            heads: [1, 2, 5, 8],
            sr_ratios: default_sr(),
            mlp_ratio: 4,
            modalities,
            num_classes: DELIVER_CLASSES,
            ppx: PpxConfig::default(),
            decoder_dim: 768,
            strides: STAGE_STRIDES,
        }
    }

    /// Secondary (non-RGB) modality count.
    pub fn secondary_count(&self) -> usize {
        self.modalities.len().saturating_sub(1)
    }

    pub fn with_modalities(&self, modalities: Vec<String>) -> Self {
        Self {
            modalities,
            ..self.clone()
        }
    }

    /// Same config with one extra secondary modality appended.
    pub fn with_extra_modality(&self) -> Self {
        let mut m = self.modalities.clone();
        m.push(format!("extra{}", m.len()));
        self.with_modalities(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("modality list is empty".into()));
        }
        if self.modalities[0] != "rgb" {
            return Err(Error::Config(format!(
                "first modality must be `rgb`, got `{}`",
                self.modalities[0]
            )));
        }
        if self.strides != STAGE_STRIDES {
            return Err(Error::Config(format!("strides must be {STAGE_STRIDES:?}, got {:?}", self.strides)));
        }
        if self.num_classes == 0 || self.decoder_dim == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("num_classes, decoder_dim and mlp_ratio must be positive".into()));
        }
        for l in 0..4 {
            let (c, h) = (self.stage_channels[l], self.heads[l]);
            if c == 0 || self.stage_depths[l] == 0 {
                return Err(Error::Config(format!("stage {} needs positive channels and depth", l + 1)));
            }
            if h == 0 || c % h != 0 {
                return Err(Error::Config(format!("stage {}: {c} channels not divisible by {h} heads", l + 1)));
            }
            if self.sr_ratios[l] == 0 || (32 / STAGE_STRIDES[l]) % self.sr_ratios[l] != 0 {
                return Err(Error::Config(format!(
                    "stage {}: reduction ratio {} must divide {}",
                    l + 1,
                    self.sr_ratios[l],
                    32 / STAGE_STRIDES[l]
                )));
            }
        }
        self.ppx.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            ModelConfig::desk(quad_modalities()),
            ModelConfig::tiny(quad_modalities()),
            ModelConfig::paper_b2(quad_modalities()),
            ModelConfig::tiny(vec!["rgb".into()]),
        ] {
            cfg.validate().unwrap();
            assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::tiny(quad_modalities());
        c.modalities[0] = "depth".into();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(quad_modalities());
        c.strides = [4, 8, 16, 16];
        assert!(c.validate().is_err());
        let c = ModelConfig::tiny(vec![]);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(quad_modalities());
        c.heads[2] = 5;
        assert!(c.validate().is_err());
        assert!(ModelConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
