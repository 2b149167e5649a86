use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults are the full-size values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    /// Layers of the cross-modality block (text queries, speech keys/values).
    pub n_cmam_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub n_conv_layers: usize,
    pub d_emb: usize,
    pub n_bins: usize,
    pub n_streams: usize,
    pub max_f0_len: usize,
    pub max_out_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_enc_layers: 4,
            n_cmam_layers: 4,
            n_dec_layers: 4,
            n_heads: 4,
            d_ff: 400,
            dropout: 0.1,
            conv_filters: 64,
            conv_kernel: 3,
            n_conv_layers: 3,
            d_emb: 768,
            n_bins: 256,
            n_streams: 9,
            max_f0_len: 100,
            max_out_len: 124,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks and quick experiments.
    pub fn toy() -> Self {
        Self {
            d_model: 8,
            n_enc_layers: 1,
            n_cmam_layers: 1,
            n_dec_layers: 1,
            n_heads: 1,
            d_ff: 16,
            dropout: 0.0,
            conv_filters: 8,
            conv_kernel: 3,
            n_conv_layers: 3,
            d_emb: 8,
            n_bins: 8,
            n_streams: 9,
            max_f0_len: 100,
            max_out_len: 124,
        }
    }

    /// Start-of-sequence token fed to every decoder at position 0.
    pub fn bos(&self) -> usize {
        self.n_bins
    }

    /// Decoder input token at padded frames.
    pub fn pad(&self) -> usize {
        self.n_bins + 1
    }

    /// Size of the decoder input vocabulary (bins plus BOS and PAD).
    pub fn vocab(&self) -> usize {
        self.n_bins + 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("n_conv_layers", self.n_conv_layers),
            ("d_emb", self.d_emb),
            ("n_bins", self.n_bins),
            ("max_f0_len", self.max_f0_len),
            ("max_out_len", self.max_out_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if self.n_streams != crate::features::Stream::ALL.len() {
            return Err(Error::Config(format!(
                "n_streams must be {} (one decoder per output stream)",
                crate::features::Stream::ALL.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Field-by-field differences, as `name: self vs other`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {v} vs {}", b[k]))
            .collect()
    }
}

/// Architectural ablations. Each removes or bypasses one part of the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// No F0 branch: the encoder runs on projected text embeddings.
    Speech,
    /// No text input: the cross-modality queries are positional encodings only.
    Text,
    /// No cross-modality block: decoders attend to the encoder output directly.
    Cmam,
    /// No convolution stack after the decoders: per-stream dense layers only.
    AurDecoder,
}

impl Ablation {
    pub const VARIANTS: [Ablation; 4] = [
        Ablation::Speech,
        Ablation::Text,
        Ablation::Cmam,
        Ablation::AurDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Speech => "speech",
            Ablation::Text => "text",
            Ablation::Cmam => "cmam",
            Ablation::AurDecoder => "aur-decoder",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" | "full" => Ok(Ablation::None),
            "speech" => Ok(Ablation::Speech),
            "text" => Ok(Ablation::Text),
            "cmam" => Ok(Ablation::Cmam),
            "aur-decoder" | "aur" => Ok(Ablation::AurDecoder),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        let bad = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn special_tokens_follow_bins() {
        let c = ModelConfig::default();
        assert_eq!((c.bos(), c.pad(), c.vocab()), (256, 257, 258));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"d_model": 8, "colour": 1}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"d_model": 32}"#).unwrap();
        assert_eq!(c.d_ff, 400);
    }

    #[test]
    fn diff_lists_fields() {
        let d = ModelConfig::default().diff(&ModelConfig::toy());
        assert!(d.iter().any(|l| l.starts_with("d_model: 64 vs 8")));
        assert!(ModelConfig::toy().diff(&ModelConfig::toy()).is_empty());
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::VARIANTS {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("mouth".parse::<Ablation>().is_err());
    }
}
