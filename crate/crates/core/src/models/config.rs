use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Transformer,
    Conformer,
}

fn default_kernel() -> usize {
    7
}

/// Shape hyper-parameters shared by every architecture. Token encoders read
/// `src_vocab`; speech encoders read `feat_dim` and `block_kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub layerdrop: f64,
    #[serde(default)]
    pub src_vocab: usize,
    #[serde(default)]
    pub tgt_vocab: usize,
    pub max_positions: usize,
    #[serde(default = "block_default")]
    pub block_kind: BlockKind,
    #[serde(default = "default_kernel")]
    pub conv_kernel: usize,
    #[serde(default)]
    pub feat_dim: usize,
}

fn block_default() -> BlockKind {
    BlockKind::Transformer
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config("d_model", "must be a positive multiple of n_heads"));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim", "must be >= 1"));
        }
        if self.enc_layers == 0 {
            return Err(Error::config("enc_layers", "must be >= 1"));
        }
        if self.dec_layers == 0 {
            return Err(Error::config("dec_layers", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.layerdrop) {
            return Err(Error::config("layerdrop", "must be in [0, 1]"));
        }
        if self.max_positions == 0 {
            return Err(Error::config("max_positions", "must be >= 1"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::config("conv_kernel", "must be odd"));
        }
        Ok(())
    }

    /// Conformer encoder and Transformer decoder at the large pretraining scale
    /// (24 blocks of width 1024 on the speech side, 12+12 layers for unit mBART).
    pub fn full_scale() -> Self {
        ModelConfig {
            d_model: 1024,
            n_heads: 16,
            ffn_dim: 4096,
            enc_layers: 24,
            dec_layers: 12,
            dropout: 0.1,
            layerdrop: 0.0,
            src_vocab: 1004 + 3,
            tgt_vocab: 1004 + 3,
            max_positions: 1024,
            block_kind: BlockKind::Conformer,
            conv_kernel: 31,
            feat_dim: 80,
        }
    }
}
