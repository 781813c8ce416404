//! Model hyperparameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Architecture configuration. Serialized as JSON with exactly these keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder channels N.
    pub n_channels: usize,
    /// Encoder kernel length in samples.
    pub enc_kernel: usize,
    /// Encoder stride in samples (half the kernel).
    pub enc_stride: usize,
    /// Chunk length K in encoder frames.
    pub chunk_k: usize,
    /// Triple-path repeats P per sub-network.
    pub repeats_p: usize,
    /// Recurrent hidden size H per direction.
    pub hidden_h: usize,
    /// Number of speakers C.
    pub num_speakers: usize,
    /// Number of sub-networks (1, 2 or 3).
    pub stages: usize,
    /// Channel-attention bottleneck ratio r.
    pub ca_reduction: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 8 kHz audio, small everything.
    pub fn desk_default() -> Self {
        ModelConfig {
            n_channels: 32,
            enc_kernel: 8,
            enc_stride: 4,
            chunk_k: 32,
            repeats_p: 2,
            hidden_h: 32,
            num_speakers: 2,
            stages: 3,
            ca_reduction: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.enc_kernel == 0 || self.enc_stride * 2 != self.enc_kernel {
            return fail(format!(
                "enc_stride must be enc_kernel/2 (got kernel {}, stride {})",
                self.enc_kernel, self.enc_stride
            ));
        }
        if self.chunk_k == 0 || self.chunk_k % 2 != 0 {
            return fail(format!("chunk_k must be even and positive, got {}", self.chunk_k));
        }
        if !(1..=3).contains(&self.stages) {
            return fail(format!("stages must be 1, 2 or 3, got {}", self.stages));
        }
        if self.ca_reduction == 0 || self.n_channels % self.ca_reduction != 0 {
            return fail(format!(
                "n_channels {} must be divisible by ca_reduction {}",
                self.n_channels, self.ca_reduction
            ));
        }
        if !(2..=6).contains(&self.num_speakers) {
            return fail(format!(
                "num_speakers must be in 2..=6, got {}",
                self.num_speakers
            ));
        }
        if self.repeats_p == 0 || self.hidden_h == 0 || self.n_channels == 0 {
            return fail("repeats_p, hidden_h, n_channels must be positive".into());
        }
        Ok(())
    }

    /// Parameter-matched single-stage counterpart: one sub-network carrying
    /// all `stages * P` repeats.
    pub fn single_stage_matched(&self) -> Self {
        ModelConfig {
            stages: 1,
            repeats_p: self.stages * self.repeats_p,
            ..self.clone()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_is_valid() {
        ModelConfig::desk_default().validate().unwrap();
    }

    #[test]
    fn json_keys_are_exact() {
        let cfg = ModelConfig::desk_default();
        let json = serde_json::to_value(&cfg).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec![
                "ca_reduction",
                "chunk_k",
                "enc_kernel",
                "enc_stride",
                "hidden_h",
                "n_channels",
                "num_speakers",
                "repeats_p",
                "stages"
            ]
        );
    }

    #[test]
    fn single_stage_matching_multiplies_repeats() {
        let cfg = ModelConfig::desk_default();
        let single = cfg.single_stage_matched();
        assert_eq!(single.stages, 1);
        assert_eq!(single.repeats_p, 6);
        let two = ModelConfig {
            stages: 2,
            ..cfg
        };
        assert_eq!(two.single_stage_matched().repeats_p, 4);
    }

    #[test]
    fn bad_stride_rejected() {
        let cfg = ModelConfig {
            enc_stride: 3,
            ..ModelConfig::desk_default()
        };
        assert!(cfg.validate().is_err());
    }
}
