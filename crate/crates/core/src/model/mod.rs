//! The speech- and text-conditioned gesture network.

mod config;
mod input;
mod layers;
mod network;

use serde::{Deserialize, Serialize};

pub use config::{Ablation, ModelConfig};
pub use input::{ModelInput, WordInput};
pub(crate) use layers::mix_seed;
pub use layers::{causal_mask, key_padding_mask, AttentionRecord, Session};
pub use network::{positional_encoding, Decoding, EncoderMemory, GestureModel};

/// Parameter count reported for the full-size network by its authors.
pub const REFERENCE_PARAM_COUNT: usize = 2_051_133;

/// Sidecar describing a checkpoint: the architecture and its size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub param_count: usize,
    pub dtype: String,
}

impl ModelCard {
    pub fn of<T: crate::Scalar>(model: &GestureModel<T>) -> Self {
        Self {
            config: model.config().clone(),
            ablation: model.ablation(),
            param_count: model.param_count(),
            dtype: T::dtype().to_string(),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> crate::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
