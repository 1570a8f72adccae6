//! Speech encoder + adaptor + unit decoder, with optional auxiliary decoders
//! on intermediate encoder layers.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::decoder::TokenDecoder;
use super::encoder::{Adaptor, SpeechEncoder, SpeechEncoderOut};
use super::layers::Mode;
use super::seq2seq::EncoderDecoder;
use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Graph, ParamStore, RngStream, Tensor, Var};

fn default_aux_weight() -> f64 {
    8.0
}

fn default_aux_layers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxHeadConfig {
    /// Encoder block whose output the head reads (0-based).
    pub layer: usize,
    pub vocab: usize,
    #[serde(default = "default_aux_weight")]
    pub weight: f64,
    #[serde(default = "default_aux_layers")]
    pub dec_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S2utConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub aux: Vec<AuxHeadConfig>,
}

#[derive(Clone, Debug)]
pub struct AuxHead {
    pub layer: usize,
    pub weight: f64,
    pub decoder: TokenDecoder,
}

/// Declares one decoder per config under `aux.{k}`.
pub fn aux_multitask_heads(
    store: &mut ParamStore,
    encoder: &SpeechEncoder,
    cfg: &ModelConfig,
    heads: &[AuxHeadConfig],
) -> Result<Vec<AuxHead>> {
    heads
        .iter()
        .enumerate()
        .map(|(k, h)| {
            if h.layer >= encoder.n_layers() {
                return Err(Error::config(
                    format!("aux[{k}].layer"),
                    format!("{} is not below enc_layers {}", h.layer, encoder.n_layers()),
                ));
            }
            if h.vocab == 0 || h.dec_layers == 0 {
                return Err(Error::config(format!("aux[{k}]"), "vocab and dec_layers must be >= 1"));
            }
            if !(h.weight >= 0.0 && h.weight.is_finite()) {
                return Err(Error::config(format!("aux[{k}].weight"), "must be finite and >= 0"));
            }
            Ok(AuxHead {
                layer: h.layer,
                weight: h.weight,
                decoder: TokenDecoder::declare(store, &format!("aux.{k}"), cfg, h.dec_layers, h.vocab, encoder.d)?,
            })
        })
        .collect()
}

/// main + sum of weight * head loss.
pub fn joint_loss(g: &mut Graph, main: Var, aux: &[(f64, Var)]) -> Result<Var> {
    let mut total = main;
    for &(w, l) in aux {
        let scaled = g.scale(l, w);
        total = g.add(total, scaled)?;
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct S2utModel {
    pub cfg: S2utConfig,
    pub encoder: SpeechEncoder,
    pub adaptor: Adaptor,
    pub decoder: TokenDecoder,
    pub aux: Vec<AuxHead>,
}

pub struct S2utOut {
    pub logits: Var,
    pub enc: SpeechEncoderOut,
}

impl S2utModel {
    pub fn declare(store: &mut ParamStore, cfg: &S2utConfig) -> Result<Self> {
        let m = &cfg.model;
        m.validate()?;
        if m.tgt_vocab == 0 {
            return Err(Error::config("model.tgt_vocab", "must be >= 1"));
        }
        let encoder = SpeechEncoder::declare(store, m)?;
        let adaptor = Adaptor::declare(store, encoder.d, m.d_model)?;
        let decoder = TokenDecoder::declare(store, "decoder", m, m.dec_layers, m.tgt_vocab, m.d_model)?;
        let aux = aux_multitask_heads(store, &encoder, m, &cfg.aux)?;
        Ok(S2utModel { cfg: cfg.clone(), encoder, adaptor, decoder, aux })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feats: &Tensor,
        tgt_in: &[usize],
        mode: &mut Mode,
    ) -> Result<S2utOut> {
        let enc = self.encoder.forward(g, store, feats, None, None, mode)?;
        let mem = self.adaptor.forward(g, store, enc.out)?;
        let logits = self.decoder.forward(g, store, mem, tgt_in, mode)?;
        Ok(S2utOut { logits, enc })
    }

    /// Logits of head `k` reading its encoder layer.
    pub fn aux_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        enc: &SpeechEncoderOut,
        k: usize,
        tgt_in: &[usize],
        mode: &mut Mode,
    ) -> Result<Var> {
        let head = self
            .aux
            .get(k)
            .ok_or_else(|| Error::Contract(format!("no auxiliary head {k}")))?;
        head.decoder.forward(g, store, enc.layers[head.layer], tgt_in, mode)
    }
}

impl EncoderDecoder for S2utModel {
    type Src = Tensor;

    fn encode(&self, g: &mut Graph, store: &ParamStore, feats: &Tensor, mode: &mut Mode) -> Result<Var> {
        let enc = self.encoder.forward(g, store, feats, None, None, mode)?;
        self.adaptor.forward(g, store, enc.out)
    }

    fn decoder(&self) -> &TokenDecoder {
        &self.decoder
    }
}

/// Copies every store parameter under `prefix` from `ckpt`, reporting all
/// missing or mis-shaped names at once.
pub fn load_prefix(store: &mut ParamStore, ckpt: &Checkpoint, prefix: &str) -> Result<usize> {
    let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix)).map(String::from).collect();
    let mut bad = Vec::new();
    for n in &names {
        match ckpt.get(n) {
            None => bad.push(format!("{n} (missing)")),
            Some(t) => {
                let want = store.shape(store.id(n).expect("own name"));
                if t.shape() != want {
                    bad.push(format!("{n} (expected {want:?}, got {:?})", t.shape()));
                }
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Checkpoint(format!("incompatible parameters: {}", bad.join(", "))));
    }
    for n in &names {
        store.assign(n, ckpt.get(n).expect("checked"))?;
    }
    Ok(names.len())
}

/// Builds a fresh model and overwrites the encoder and/or decoder from
/// pretrained checkpoints. The adaptor and auxiliary heads stay fresh.
pub fn assemble_s2ut(
    cfg: &S2utConfig,
    encoder: Option<&Checkpoint>,
    decoder: Option<&Checkpoint>,
    seed: u64,
) -> Result<(S2utModel, ParamStore)> {
    let mut store = ParamStore::new();
    let model = S2utModel::declare(&mut store, cfg)?;
    store.materialize(&RngStream::new(seed).split_str("init"));
    if let Some(c) = encoder {
        load_prefix(&mut store, c, "encoder.")?;
    }
    if let Some(c) = decoder {
        load_prefix(&mut store, c, "decoder.")?;
    }
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::seq2seq::seq2seq_forward;
    use crate::models::BlockKind;
    use crate::tensor::grad_check_params;

    pub(crate) fn tiny_cfg(aux: Vec<AuxHeadConfig>) -> S2utConfig {
        S2utConfig {
            model: ModelConfig {
                d_model: 8,
                n_heads: 2,
                ffn_dim: 16,
                enc_layers: 2,
                dec_layers: 1,
                dropout: 0.1,
                layerdrop: 0.0,
                src_vocab: 0,
                tgt_vocab: 9,
                max_positions: 32,
                block_kind: BlockKind::Conformer,
                conv_kernel: 3,
                feat_dim: 4,
            },
            aux,
        }
    }

    fn feats(t: usize) -> Tensor {
        let data = (0..t * 4).map(|i| ((i * 37 % 11) as f64) / 5.0 - 1.0).collect();
        Tensor::new(vec![t, 4], data).unwrap()
    }

    #[test]
    fn forward_shapes() {
        let (m, s) = assemble_s2ut(&tiny_cfg(vec![]), None, None, 0).unwrap();
        let mut g = Graph::no_grad();
        let f = feats(10);
        let y = seq2seq_forward(&m, &mut g, &s, &[&f], &[vec![0, 1, 2]], &mut Mode::eval()).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 9]);
        let mem = m.encode(&mut g, &s, &f, &mut Mode::eval()).unwrap();
        assert_eq!(g.shape(mem), &[4, 8]);
        let mut g = Graph::no_grad();
        assert!(m.forward(&mut g, &s, &feats(2), &[0], &mut Mode::eval()).is_err());
    }

    #[test]
    fn partial_load_and_round_trip() {
        let cfg = tiny_cfg(vec![]);
        let (_, pre) = assemble_s2ut(&cfg, None, None, 1).unwrap();
        let ck = Checkpoint::from_store(&pre, serde_json::Value::Null);
        let (_, s) = assemble_s2ut(&cfg, Some(&ck), None, 2).unwrap();
        let (_, fresh) = assemble_s2ut(&cfg, None, None, 2).unwrap();
        for n in s.names() {
            let v = s.get(n).unwrap().data();
            if n.starts_with("encoder.") {
                assert_eq!(v, pre.get(n).unwrap().data(), "{n}");
            } else {
                assert_eq!(v, fresh.get(n).unwrap().data(), "{n}");
            }
        }
        let (_, both) = assemble_s2ut(&cfg, Some(&ck), Some(&ck), 3).unwrap();
        assert_eq!(
            Checkpoint::from_store(&both, serde_json::Value::Null).tensors
                .iter()
                .filter(|(n, _)| !n.starts_with("adaptor."))
                .collect::<Vec<_>>(),
            ck.tensors.iter().filter(|(n, _)| !n.starts_with("adaptor.")).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mismatch_lists_names() {
        let (_, pre) = assemble_s2ut(&tiny_cfg(vec![]), None, None, 1).unwrap();
        let ck = Checkpoint::from_store(&pre, serde_json::Value::Null);
        let mut other = tiny_cfg(vec![]);
        other.model.feat_dim = 5;
        let err = assemble_s2ut(&other, Some(&ck), None, 0).unwrap_err().to_string();
        assert!(err.contains("encoder.frontend.ln_input.gain"), "{err}");
        assert!(err.contains("encoder.frontend.conv_weight"), "{err}");
        // decoder-side checkpoint is not consulted for the encoder
        assert!(assemble_s2ut(&other, None, Some(&ck), 0).is_ok());
    }

    #[test]
    fn counts_add_up() {
        let mut s = ParamStore::new();
        S2utModel::declare(&mut s, &tiny_cfg(vec![])).unwrap();
        let part = |p: &str| s.names().filter(|n| n.starts_with(p)).count();
        assert_eq!(part("encoder.") + part("adaptor.") + part("decoder."), s.len());
        let sum: usize = ["encoder.", "adaptor.", "decoder."]
            .iter()
            .map(|p| s.count_of(&s.names().filter(|n| n.starts_with(p)).map(String::from).collect::<Vec<_>>()))
            .sum();
        assert_eq!(sum, s.count());
    }

    #[test]
    fn aux_heads_validate_and_combine() {
        let bad = tiny_cfg(vec![AuxHeadConfig { layer: 2, vocab: 5, weight: 8.0, dec_layers: 1 }]);
        assert!(matches!(assemble_s2ut(&bad, None, None, 0), Err(Error::Config { .. })));
        let heads = vec![
            AuxHeadConfig { layer: 0, vocab: 5, weight: 8.0, dec_layers: 1 },
            AuxHeadConfig { layer: 1, vocab: 6, weight: 8.0, dec_layers: 1 },
        ];
        let (m, s) = assemble_s2ut(&tiny_cfg(heads), None, None, 0).unwrap();
        assert!(s.names().any(|n| n == "aux.1.embed_tokens"));
        let mut g = Graph::no_grad();
        let out = m.forward(&mut g, &s, &feats(9), &[0, 1], &mut Mode::eval()).unwrap();
        let main = g.label_smoothed_nll(out.logits, &[1, 2], 0.0, 99, None).unwrap();
        let mut aux = Vec::new();
        for k in 0..2 {
            let l = m.aux_logits(&mut g, &s, &out.enc, k, &[0, 3], &mut Mode::eval()).unwrap();
            aux.push((8.0, g.label_smoothed_nll(l, &[3, 4], 0.0, 99, None).unwrap()));
        }
        let j = joint_loss(&mut g, main, &aux).unwrap();
        let manual = g.scalar(main) + 8.0 * g.scalar(aux[0].1) + 8.0 * g.scalar(aux[1].1);
        assert!((g.scalar(j) - manual).abs() < 1e-12);
        let none = joint_loss(&mut g, main, &[]).unwrap();
        assert_eq!(g.scalar(none), g.scalar(main));
    }

    #[test]
    fn grad_check_with_aux() {
        let cfg = tiny_cfg(vec![AuxHeadConfig { layer: 0, vocab: 5, weight: 8.0, dec_layers: 1 }]);
        let (m, mut s) = assemble_s2ut(&cfg, None, None, 4).unwrap();
        crate::models::randomize(&mut s, 4);
        let f = feats(7);
        let r = grad_check_params(
            |g, st| {
                let out = m.forward(g, st, &f, &[0, 1, 2], &mut Mode::eval())?;
                let main = g.label_smoothed_nll(out.logits, &[1, 2, 3], 0.1, 99, None)?;
                let a = m.aux_logits(g, st, &out.enc, 0, &[0, 4], &mut Mode::eval())?;
                let al = g.label_smoothed_nll(a, &[4, 1], 0.1, 99, None)?;
                joint_loss(g, main, &[(8.0, al)])
            },
            &s,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn layerdrop_one_skips_every_block() {
        let mut cfg = tiny_cfg(vec![]);
        cfg.model.layerdrop = 1.0;
        cfg.model.dropout = 0.0;
        let (m, s) = assemble_s2ut(&cfg, None, None, 0).unwrap();
        let mut g = Graph::no_grad();
        let f = feats(6);
        let out = m.encoder.forward(&mut g, &s, &f, None, None, &mut Mode::train(RngStream::new(1))).unwrap();
        let mut g2 = Graph::no_grad();
        let ev = m.encoder.forward(&mut g2, &s, &f, None, None, &mut Mode::eval()).unwrap();
        // train output equals ln_final(latent + positions)
        let x = g2.add_const(ev.latent, &crate::models::sinusoidal_positions(6, 8)).unwrap();
        let direct = m.encoder.ln_final.forward(&mut g2, &s, x).unwrap();
        let a = g.value(out.out);
        let b = g2.value(direct);
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_ne!(g2.value(ev.out), b);
    }
}
