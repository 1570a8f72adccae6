//! Token and speech encoders plus the stride-2 adaptor.

use super::config::{BlockKind, ModelConfig};
use super::layers::{sinusoidal_positions, ConformerBlock, EncoderLayer, LayerNorm, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Final output plus the output of every block (a skipped block passes its input on).
#[derive(Clone, Debug)]
pub struct EncoderOut {
    pub out: Var,
    pub layers: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct TokenEncoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub ln_final: LayerNorm,
    pub d: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub layerdrop: f64,
}

impl TokenEncoder {
    pub fn declare(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, vocab: usize) -> Result<Self> {
        let d = cfg.d_model;
        Ok(TokenEncoder {
            embed: store.declare(format!("{prefix}.embed_tokens"), &[vocab, d], Init::WEIGHT)?,
            pos: store.declare(format!("{prefix}.embed_positions"), &[cfg.max_positions, d], Init::WEIGHT)?,
            layers: (0..cfg.enc_layers)
                .map(|i| EncoderLayer::declare(store, &format!("{prefix}.{i}"), d, cfg.n_heads, cfg.ffn_dim))
                .collect::<Result<_>>()?,
            ln_final: LayerNorm::declare(store, &format!("{prefix}.ln_final"), d)?,
            d,
            max_positions: cfg.max_positions,
            dropout: cfg.dropout,
            layerdrop: cfg.layerdrop,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], mode: &mut Mode) -> Result<EncoderOut> {
        if ids.is_empty() || ids.len() > self.max_positions {
            return Err(Error::Contract(format!(
                "source length {} outside [1, {}]",
                ids.len(),
                self.max_positions
            )));
        }
        let x = embed_with_positions(g, store, self.embed, self.pos, ids, self.d)?;
        let mut x = g.dropout(x, self.dropout, mode.rng())?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if !mode.skip_layer(self.layerdrop) {
                x = layer.forward(g, store, x, self.dropout, mode)?;
            }
            layers.push(x);
        }
        Ok(EncoderOut { out: self.ln_final.forward(g, store, x)?, layers })
    }
}

/// Token embeddings scaled by sqrt(d) plus learned positions.
pub(crate) fn embed_with_positions(
    g: &mut Graph,
    store: &ParamStore,
    embed: ParamId,
    pos: ParamId,
    ids: &[usize],
    d: usize,
) -> Result<Var> {
    let e = g.param(store, embed);
    let tok = g.embedding(e, ids)?;
    let tok = g.scale(tok, (d as f64).sqrt());
    let p = g.param(store, pos);
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pe = g.embedding(p, &positions)?;
    g.add(tok, pe)
}

#[derive(Clone, Debug)]
pub enum Block {
    Transformer(EncoderLayer),
    Conformer(ConformerBlock),
}

impl Block {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        match self {
            Block::Transformer(l) => l.forward(g, store, x, dropout, mode),
            Block::Conformer(b) => b.forward(g, store, x, dropout, mode),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpeechEncoderOut {
    /// Frontend output before masking; the contrastive targets.
    pub latent: Var,
    pub out: Var,
    pub layers: Vec<Var>,
}

/// Convolutional feature frontend followed by context blocks.
#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub ln_input: LayerNorm,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub ln_latent: LayerNorm,
    pub mask_emb: ParamId,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub d: usize,
    pub feat_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub layerdrop: f64,
}

impl SpeechEncoder {
    pub fn declare(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        if cfg.feat_dim == 0 {
            return Err(Error::config("feat_dim", "speech encoder needs feat_dim >= 1"));
        }
        let blocks = (0..cfg.enc_layers)
            .map(|i| {
                let base = format!("encoder.{i}");
                Ok(match cfg.block_kind {
                    BlockKind::Transformer => {
                        Block::Transformer(EncoderLayer::declare(store, &base, d, cfg.n_heads, cfg.ffn_dim)?)
                    }
                    BlockKind::Conformer => Block::Conformer(ConformerBlock::declare(
                        store,
                        &base,
                        d,
                        cfg.n_heads,
                        cfg.ffn_dim,
                        cfg.conv_kernel,
                    )?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(SpeechEncoder {
            ln_input: LayerNorm::declare(store, "encoder.frontend.ln_input", cfg.feat_dim)?,
            conv_w: store.declare("encoder.frontend.conv_weight", &[d, cfg.feat_dim, 3], Init::WEIGHT)?,
            conv_b: store.declare("encoder.frontend.conv_bias", &[d], Init::Zeros)?,
            ln_latent: LayerNorm::declare(store, "encoder.frontend.ln_latent", d)?,
            mask_emb: store.declare("encoder.mask_emb", &[d], Init::WEIGHT)?,
            blocks,
            ln_final: LayerNorm::declare(store, "encoder.ln_final", d)?,
            d,
            feat_dim: cfg.feat_dim,
            max_positions: cfg.max_positions,
            dropout: cfg.dropout,
            layerdrop: cfg.layerdrop,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    /// `time_mask` rows are replaced by the learned mask embedding after the
    /// frontend; `channel_mask` zeroes feature dimensions of the input.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feats: &Tensor,
        time_mask: Option<&[bool]>,
        channel_mask: Option<&[bool]>,
        mode: &mut Mode,
    ) -> Result<SpeechEncoderOut> {
        let (t, dim) = feats.dims2()?;
        if dim != self.feat_dim {
            return Err(Error::Shape(format!("features have {dim} dims, encoder expects {}", self.feat_dim)));
        }
        if t == 0 || t > self.max_positions {
            return Err(Error::Contract(format!("speech length {t} outside [1, {}]", self.max_positions)));
        }
        let mut x = g.input(feats);
        if let Some(cm) = channel_mask {
            if cm.len() != dim {
                return Err(Error::Shape("channel mask length".into()));
            }
            let keep: Vec<f64> = (0..t * dim).map(|i| if cm[i % dim] { 0.0 } else { 1.0 }).collect();
            x = g.mul_const(x, keep)?;
        }
        let x = self.ln_input.forward(g, store, x)?;
        let w = g.param(store, self.conv_w);
        let b = g.param(store, self.conv_b);
        let z = g.conv1d(x, w, Some(b), 1, 1, 1)?;
        let z = g.gelu(z);
        let latent = self.ln_latent.forward(g, store, z)?;
        let mut x = latent;
        if let Some(tm) = time_mask {
            let m = g.param(store, self.mask_emb);
            x = g.replace_rows(x, m, tm)?;
        }
        let x = g.add_const(x, &sinusoidal_positions(t, self.d))?;
        let mut x = g.dropout(x, self.dropout, mode.rng())?;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            if !mode.skip_layer(self.layerdrop) {
                x = blk.forward(g, store, x, self.dropout, mode)?;
            }
            layers.push(x);
        }
        Ok(SpeechEncoderOut { latent, out: self.ln_final.forward(g, store, x)?, layers })
    }
}

pub const ADAPTOR_KERNEL: usize = 3;

/// Single stride-2 convolution (kernel 3, no padding) followed by GELU.
#[derive(Clone, Debug)]
pub struct Adaptor {
    pub w: ParamId,
    pub b: ParamId,
}

impl Adaptor {
    pub fn declare(store: &mut ParamStore, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Adaptor {
            w: store.declare("adaptor.conv.weight", &[d_out, d_in, ADAPTOR_KERNEL], Init::WEIGHT)?,
            b: store.declare("adaptor.conv.bias", &[d_out], Init::Zeros)?,
        })
    }

    pub fn out_len(t: usize) -> Result<usize> {
        if t < ADAPTOR_KERNEL {
            return Err(Error::Contract(format!("adaptor needs at least {ADAPTOR_KERNEL} frames, got {t}")));
        }
        Ok((t - ADAPTOR_KERNEL) / 2 + 1)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (t, _) = g.dims2(x)?;
        Self::out_len(t)?;
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.conv1d(x, w, Some(b), 2, 0, 1)?;
        Ok(g.gelu(y))
    }
}
