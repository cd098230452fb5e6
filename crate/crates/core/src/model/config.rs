use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::data::schema::Group;
use crate::error::{Error, Result};
use crate::mamba::MambaConfig;

/// Stage toggles for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_mamba: bool,
    pub use_intra: bool,
    pub use_inter: bool,
    /// Removes every feature of this group from the model.
    pub drop_group: Option<Group>,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_mamba: true,
            use_intra: true,
            use_inter: true,
            drop_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width D.
    pub embed_dim: usize,
    /// Mamba expansion factor S.
    pub expand: usize,
    /// SSM state size N.
    pub state_dim: usize,
    /// Attention layers L per stack.
    pub attn_layers: usize,
    /// Attention heads H.
    pub attn_heads: usize,
    /// Causal convolution width W.
    pub conv_width: usize,
    /// Huber threshold δ, in standardised target units.
    pub huber_delta: f64,
    /// Mamba blocks per feature category.
    pub mamba_blocks: usize,
    pub rms_eps: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            expand: 2,
            state_dim: 8,
            attn_layers: 3,
            attn_heads: 4,
            conv_width: 4,
            huber_delta: 10.0,
            mamba_blocks: 1,
            rms_eps: 1e-5,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        self.mamba().validate()?;
        if self.attn_layers == 0 {
            return Err(Error::Config("attn_layers must be >= 1".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!("huber_delta must be > 0, got {}", self.huber_delta)));
        }
        Ok(())
    }

    pub fn mamba(&self) -> MambaConfig {
        MambaConfig {
            d_model: self.embed_dim,
            expand: self.expand,
            states: self.state_dim,
            conv_width: self.conv_width,
            rms_eps: self.rms_eps,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.embed_dim,
            heads: self.attn_heads,
            rms_eps: self.rms_eps,
        }
    }
}
