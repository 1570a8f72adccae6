//! Autoregressive Transformer decoder with tied input/output embeddings.

use super::config::ModelConfig;
use super::encoder::embed_with_positions;
use super::layers::{DecoderLayer, LayerNorm, Mode};
use crate::error::{Error, Result};
use crate::eval::StepScorer;
use crate::tensor::{kernels::log_sum_exp, Graph, Init, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct TokenDecoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub ln_final: LayerNorm,
    pub d: usize,
    pub vocab: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl TokenDecoder {
    /// Names live under `prefix` (e.g. `decoder` or `aux.0`). `d_mem` is the
    /// width of the memory attended to.
    pub fn declare(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        layers: usize,
        vocab: usize,
        d_mem: usize,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(TokenDecoder {
            embed: store.declare(format!("{prefix}.embed_tokens"), &[vocab, d], Init::WEIGHT)?,
            pos: store.declare(format!("{prefix}.embed_positions"), &[cfg.max_positions, d], Init::WEIGHT)?,
            layers: (0..layers)
                .map(|i| DecoderLayer::declare(store, &format!("{prefix}.{i}"), d, d_mem, cfg.n_heads, cfg.ffn_dim))
                .collect::<Result<_>>()?,
            ln_final: LayerNorm::declare(store, &format!("{prefix}.ln_final"), d)?,
            d,
            vocab,
            max_positions: cfg.max_positions,
            dropout: cfg.dropout,
        })
    }

    /// Logits [T, V] for every input position.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        tokens: &[usize],
        mode: &mut Mode,
    ) -> Result<Var> {
        if tokens.is_empty() || tokens.len() > self.max_positions {
            return Err(Error::Contract(format!(
                "target length {} outside [1, {}]",
                tokens.len(),
                self.max_positions
            )));
        }
        let x = embed_with_positions(g, store, self.embed, self.pos, tokens, self.d)?;
        let mut x = g.dropout(x, self.dropout, mode.rng())?;
        for layer in &self.layers {
            x = layer.forward(g, store, x, memory, self.dropout, mode)?;
        }
        let h = self.ln_final.forward(g, store, x)?;
        let e = g.param(store, self.embed);
        g.matmul_nt(h, e)
    }
}

/// Next-token scorer over a fixed encoder memory, for beam search.
pub struct DecoderScorer<'a> {
    pub decoder: &'a TokenDecoder,
    pub store: &'a ParamStore,
    pub memory: Tensor,
    /// Tokens that may be generated; others get -inf.
    pub allowed: Option<Vec<bool>>,
}

impl StepScorer for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.decoder.vocab
    }

    fn step(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::no_grad();
        let mem = g.input(&self.memory);
        let v = self.decoder.vocab;
        let mut out = Vec::with_capacity(prefixes.len());
        for p in prefixes {
            let logits = self.decoder.forward(&mut g, self.store, mem, p, &mut Mode::eval())?;
            let vals = g.value(logits);
            let mut row = vals[(p.len() - 1) * v..p.len() * v].to_vec();
            if let Some(a) = &self.allowed {
                for (x, &ok) in row.iter_mut().zip(a) {
                    if !ok {
                        *x = f64::NEG_INFINITY;
                    }
                }
            }
            let lse = log_sum_exp(&row);
            row.iter_mut().for_each(|x| *x -= lse);
            out.push(row);
        }
        Ok(out)
    }
}
