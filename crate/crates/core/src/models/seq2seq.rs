//! Token-to-token encoder-decoder (text MT, text-to-unit, unit mBART) and the
//! generic forward/decoding entry points shared with S2UT.

use super::config::ModelConfig;
use super::decoder::{DecoderScorer, TokenDecoder};
use super::encoder::TokenEncoder;
use super::layers::Mode;
use crate::error::{Error, Result};
use crate::eval::{beam_search, BeamConfig, Hypothesis};
use crate::tensor::{Graph, ParamStore, Var};

/// An encoder producing a memory for a [`TokenDecoder`].
pub trait EncoderDecoder {
    type Src: ?Sized;

    fn encode(&self, g: &mut Graph, store: &ParamStore, src: &Self::Src, mode: &mut Mode) -> Result<Var>;

    fn decoder(&self) -> &TokenDecoder;
}

/// Batched teacher-forced logits [B, T, V]; all targets must share one length.
pub fn seq2seq_forward<M: EncoderDecoder>(
    model: &M,
    g: &mut Graph,
    store: &ParamStore,
    srcs: &[&M::Src],
    tgt_in: &[Vec<usize>],
    mode: &mut Mode,
) -> Result<Var> {
    if srcs.len() != tgt_in.len() || srcs.is_empty() {
        return Err(Error::Contract("seq2seq_forward needs one target per source".into()));
    }
    let t = tgt_in[0].len();
    if tgt_in.iter().any(|x| x.len() != t) {
        return Err(Error::Shape("batched targets must have equal length".into()));
    }
    let mut rows = Vec::with_capacity(srcs.len());
    for (src, tgt) in srcs.iter().zip(tgt_in) {
        let mem = model.encode(g, store, src, mode)?;
        rows.push(model.decoder().forward(g, store, mem, tgt, mode)?);
    }
    let all = g.concat_rows(&rows)?;
    let v = model.decoder().vocab;
    g.reshape(all, vec![srcs.len(), t, v])
}

/// Beam search from `start` until `eos`, restricted to `allowed` tokens.
pub fn decode<M: EncoderDecoder>(
    model: &M,
    store: &ParamStore,
    src: &M::Src,
    start: &[usize],
    eos: usize,
    allowed: Option<Vec<bool>>,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    let mut g = Graph::no_grad();
    let mem = model.encode(&mut g, store, src, &mut Mode::eval())?;
    let memory = g.to_tensor(mem);
    let dec = model.decoder();
    let room = dec.max_positions.saturating_sub(start.len());
    let cfg = BeamConfig { max_len: cfg.max_len.min(room).max(1), ..cfg.clone() };
    let mut scorer = DecoderScorer { decoder: dec, store, memory, allowed };
    beam_search(&mut scorer, start, eos, &cfg)
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    pub cfg: ModelConfig,
    pub encoder: TokenEncoder,
    pub decoder: TokenDecoder,
}

impl Seq2SeqModel {
    /// Encoder over `cfg.src_vocab`, decoder over `cfg.tgt_vocab`.
    pub fn declare(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.src_vocab == 0 || cfg.tgt_vocab == 0 {
            return Err(Error::config("src_vocab", "token models need src_vocab and tgt_vocab"));
        }
        Ok(Seq2SeqModel {
            cfg: cfg.clone(),
            encoder: TokenEncoder::declare(store, "encoder", cfg, cfg.src_vocab)?,
            decoder: TokenDecoder::declare(store, "decoder", cfg, cfg.dec_layers, cfg.tgt_vocab, cfg.d_model)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        src: &[usize],
        tgt_in: &[usize],
        mode: &mut Mode,
    ) -> Result<Var> {
        let mem = self.encode(g, store, src, mode)?;
        self.decoder.forward(g, store, mem, tgt_in, mode)
    }
}

impl EncoderDecoder for Seq2SeqModel {
    type Src = [usize];

    fn encode(&self, g: &mut Graph, store: &ParamStore, src: &[usize], mode: &mut Mode) -> Result<Var> {
        Ok(self.encoder.forward(g, store, src, mode)?.out)
    }

    fn decoder(&self) -> &TokenDecoder {
        &self.decoder
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BlockKind;
    use crate::tensor::{grad_check_params, RngStream};

    pub(crate) fn tiny(src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            ffn_dim: 16,
            enc_layers: 2,
            dec_layers: 2,
            dropout: 0.1,
            layerdrop: 0.0,
            src_vocab,
            tgt_vocab,
            max_positions: 16,
            block_kind: BlockKind::Transformer,
            conv_kernel: 3,
            feat_dim: 0,
        }
    }

    fn model(seed: u64) -> (Seq2SeqModel, ParamStore) {
        let mut s = ParamStore::new();
        let m = Seq2SeqModel::declare(&mut s, &tiny(7, 10)).unwrap();
        s.materialize(&RngStream::new(seed));
        (m, s)
    }

    #[test]
    fn forward_shape_and_eval_determinism() {
        let (m, s) = model(0);
        let run = || {
            let mut g = Graph::no_grad();
            let src: &[usize] = &[1, 2, 3, 4];
            let y = seq2seq_forward(&m, &mut g, &s, &[src], &[vec![0, 5, 6]], &mut Mode::eval()).unwrap();
            (g.shape(y).to_vec(), g.value(y).to_vec())
        };
        let (shape, a) = run();
        assert_eq!(shape, vec![1, 3, 10]);
        assert_eq!(a, run().1);
        let mut g = Graph::no_grad();
        let long: Vec<usize> = vec![1; 17];
        assert!(m.forward(&mut g, &s, &long, &[0], &mut Mode::eval()).is_err());
    }

    #[test]
    fn train_mode_is_seeded() {
        let (m, s) = model(1);
        let run = |seed| {
            let mut g = Graph::no_grad();
            let y = m.forward(&mut g, &s, &[1, 2], &[0, 3], &mut Mode::train(RngStream::new(seed))).unwrap();
            g.value(y).to_vec()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn full_model_grad_check() {
        for seed in 0..3 {
            let (m, mut s) = model(seed);
            crate::models::randomize(&mut s, seed);
            let r = grad_check_params(
                |g, st| {
                    let y = m.forward(g, st, &[1, 2, 3], &[0, 4, 5], &mut Mode::eval())?;
                    g.label_smoothed_nll(y, &[4, 5, 9], 0.1, 99, None)
                },
                &s,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn decoder_causal_by_perturbation() {
        let (m, s) = model(2);
        let logits = |tgt: &[usize]| {
            let mut g = Graph::no_grad();
            let y = m.forward(&mut g, &s, &[1, 2, 3], tgt, &mut Mode::eval()).unwrap();
            g.value(y).to_vec()
        };
        let a = logits(&[0, 4, 5, 6]);
        let b = logits(&[0, 4, 8, 1]);
        assert_eq!(a[..20], b[..20]);
        assert_ne!(a[20..30], b[20..30]);
    }

    #[test]
    fn shared_embedding_single_storage() {
        let (m, mut s) = model(3);
        let before = {
            let mut g = Graph::no_grad();
            let y = m.forward(&mut g, &s, &[1], &[0], &mut Mode::eval()).unwrap();
            g.value(y).to_vec()
        };
        // Change only the output-projection row of token 9, which never appears as input.
        s.tensor_mut(m.decoder.embed).data_mut()[9 * 8] += 1.0;
        let mut g = Graph::no_grad();
        let y = m.forward(&mut g, &s, &[1], &[0], &mut Mode::eval()).unwrap();
        let after = g.value(y).to_vec();
        assert_ne!(before[9], after[9]);
        assert_eq!(before[..9], after[..9]);
        // and changing the input row of token 0 changes every logit
        s.tensor_mut(m.decoder.embed).data_mut()[0] += 1.0;
        let mut g = Graph::no_grad();
        let y = m.forward(&mut g, &s, &[1], &[0], &mut Mode::eval()).unwrap();
        assert_ne!(g.value(y)[..9], after[..9]);
    }
}
