//! Speech-only models: contrastive pretraining and CTC recognition.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoder::SpeechEncoder;
use super::layers::{Linear, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, RngStream, Tensor, Var};

/// Masked contrastive objective over cosine similarities.
///
/// For each masked position the true target competes against `n_negatives`
/// targets drawn uniformly (with replacement) from the other masked positions.
pub fn w2v_contrastive_loss(
    g: &mut Graph,
    context: Var,
    targets: Var,
    time_mask: &[bool],
    n_negatives: usize,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<Var> {
    let (t, d) = g.dims2(context)?;
    if g.dims2(targets)? != (t, d) || time_mask.len() != t {
        return Err(Error::Shape("context, targets and mask must share [T, d]".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract("temperature must be > 0".into()));
    }
    let masked: Vec<usize> = (0..t).filter(|&i| time_mask[i]).collect();
    if masked.is_empty() {
        return Err(Error::Contract("no masked positions".into()));
    }
    if n_negatives == 0 {
        return Err(Error::Contract("n_negatives must be >= 1".into()));
    }
    if masked.len() < 2 {
        return Err(Error::Contract("negatives need at least 2 masked positions".into()));
    }
    let k = n_negatives + 1;
    let mut ctx_idx = Vec::with_capacity(masked.len() * k);
    let mut tgt_idx = Vec::with_capacity(masked.len() * k);
    for &pos in &masked {
        ctx_idx.extend(std::iter::repeat(pos).take(k));
        tgt_idx.push(pos);
        for _ in 0..n_negatives {
            let neg = loop {
                let c = masked[rng.below(masked.len())];
                if c != pos {
                    break c;
                }
            };
            tgt_idx.push(neg);
        }
    }
    let c = g.l2_normalize_rows(context);
    let y = g.l2_normalize_rows(targets);
    let c = g.gather_rows(c, &ctx_idx)?;
    let y = g.gather_rows(y, &tgt_idx)?;
    let prod = g.mul(c, y)?;
    let sims = g.row_sum(prod);
    let sims = g.reshape(sims, vec![masked.len(), k])?;
    let logits = g.scale(sims, 1.0 / temperature);
    let zeros = vec![0; masked.len()];
    g.label_smoothed_nll(logits, &zeros, 0.0, usize::MAX, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveCfg {
    pub n_negatives: usize,
    pub temperature: f64,
}

/// Speech encoder plus the two projections used only during pretraining.
#[derive(Clone, Debug)]
pub struct W2vModel {
    pub encoder: SpeechEncoder,
    pub final_proj: Linear,
    pub target_proj: Linear,
}

impl W2vModel {
    pub fn declare(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = SpeechEncoder::declare(store, cfg)?;
        let d = cfg.d_model;
        Ok(W2vModel {
            final_proj: Linear::declare(store, "w2v", "final_proj", d, d, true)?,
            target_proj: Linear::declare(store, "w2v", "target_proj", d, d, true)?,
            encoder,
        })
    }

    /// Contrastive loss for one utterance under the given masks.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feats: &Tensor,
        time_mask: &[bool],
        channel_mask: Option<&[bool]>,
        cc: ContrastiveCfg,
        neg_rng: &mut RngStream,
        mode: &mut Mode,
    ) -> Result<Var> {
        let enc = self.encoder.forward(g, store, feats, Some(time_mask), channel_mask, mode)?;
        let ctx = self.final_proj.forward(g, store, enc.out)?;
        let tgt = self.target_proj.forward(g, store, enc.latent)?;
        w2v_contrastive_loss(g, ctx, tgt, time_mask, cc.n_negatives, cc.temperature, neg_rng)
    }
}

/// Speech encoder with a per-frame classifier; index 0 is the blank.
#[derive(Clone, Debug)]
pub struct CtcModel {
    pub encoder: SpeechEncoder,
    pub head: Linear,
    pub vocab: usize,
}

pub const CTC_BLANK: usize = 0;

impl CtcModel {
    /// `vocab` includes the blank.
    pub fn declare(store: &mut ParamStore, cfg: &ModelConfig, vocab: usize) -> Result<Self> {
        cfg.validate()?;
        if vocab < 2 {
            return Err(Error::config("vocab", "CTC needs a blank plus at least one label"));
        }
        let encoder = SpeechEncoder::declare(store, cfg)?;
        Ok(CtcModel { head: Linear::declare(store, "ctc_head", "proj", cfg.d_model, vocab, true)?, encoder, vocab })
    }

    /// Per-frame log-probabilities [T, V].
    pub fn log_probs(&self, g: &mut Graph, store: &ParamStore, feats: &Tensor, mode: &mut Mode) -> Result<Var> {
        let enc = self.encoder.forward(g, store, feats, None, None, mode)?;
        let logits = self.head.forward(g, store, enc.out)?;
        Ok(g.log_softmax(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BlockKind;
    use crate::tensor::{grad_check, grad_check_params};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            ffn_dim: 16,
            enc_layers: 1,
            dec_layers: 1,
            dropout: 0.0,
            layerdrop: 0.0,
            src_vocab: 0,
            tgt_vocab: 0,
            max_positions: 32,
            block_kind: BlockKind::Transformer,
            conv_kernel: 3,
            feat_dim: 3,
        }
    }

    fn run(ctx: &[Vec<f64>], tgt: &[Vec<f64>], mask: &[bool], n: usize, temp: f64) -> Result<f64> {
        let mut g = Graph::no_grad();
        let c = g.input(&Tensor::from_rows(ctx).unwrap());
        let t = g.input(&Tensor::from_rows(tgt).unwrap());
        let l = w2v_contrastive_loss(&mut g, c, t, mask, n, temp, &mut RngStream::new(0))?;
        Ok(g.scalar(l))
    }

    #[test]
    fn uniform_similarities_give_log_k() {
        let rows = vec![vec![1.0, 0.0]; 4];
        for n in 1..5 {
            let l = run(&rows, &rows, &[true; 4], n, 0.1).unwrap();
            assert!((l - ((1 + n) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_orthogonal_low_temperature_goes_to_zero() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let l = run(&rows, &rows, &[true; 3], 2, 0.01).unwrap();
        assert!(l < 1e-30, "{l}");
        let warm = run(&rows, &rows, &[true; 3], 2, 1.0).unwrap();
        assert!(warm > l);
    }

    #[test]
    fn mask_errors() {
        let rows = vec![vec![1.0, 0.5]; 3];
        assert!(run(&rows, &rows, &[true, false, false], 1, 0.1).is_err());
        assert!(run(&rows, &rows, &[false; 3], 1, 0.1).is_err());
        assert!(run(&rows, &rows, &[true; 3], 0, 0.1).is_err());
    }

    #[test]
    fn contrastive_grad_check() {
        let mut r = RngStream::new(3);
        for (t, d) in [(3, 2), (5, 4), (6, 3)] {
            let a = Tensor::new(vec![t, d], (0..t * d).map(|_| r.normal()).collect()).unwrap();
            let b = Tensor::new(vec![t, d], (0..t * d).map(|_| r.normal()).collect()).unwrap();
            let mask: Vec<bool> = (0..t).map(|i| i % 3 != 1).collect();
            let rep = grad_check(
                |g, v| w2v_contrastive_loss(g, v[0], v[1], &mask, 2, 0.5, &mut RngStream::new(9)),
                &[a, b],
                1e-6,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn w2v_model_grad_check() {
        let mut s = ParamStore::new();
        let m = W2vModel::declare(&mut s, &cfg()).unwrap();
        s.materialize(&RngStream::new(1));
        crate::models::randomize(&mut s, 1);
        assert!(s.names().any(|n| n == "w2v.final_proj_weight"));
        let f = Tensor::new(vec![6, 3], (0..18).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let mask = [false, true, true, false, true, false];
        let cc = ContrastiveCfg { n_negatives: 2, temperature: 0.5 };
        let rep = grad_check_params(
            |g, st| m.loss(g, st, &f, &mask, Some(&[false, true, false]), cc, &mut RngStream::new(2), &mut Mode::eval()),
            &s,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn ctc_model_outputs_distributions() {
        let mut s = ParamStore::new();
        let m = CtcModel::declare(&mut s, &cfg(), 5).unwrap();
        s.materialize(&RngStream::new(1));
        let f = Tensor::new(vec![4, 3], vec![0.1; 12]).unwrap();
        let mut g = Graph::no_grad();
        let lp = m.log_probs(&mut g, &s, &f, &mut Mode::eval()).unwrap();
        assert_eq!(g.shape(lp), &[4, 5]);
        for row in g.value(lp).chunks(5) {
            assert!((row.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(CtcModel::declare(&mut ParamStore::new(), &cfg(), 1).is_err());
    }
}
