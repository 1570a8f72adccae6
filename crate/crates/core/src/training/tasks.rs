//! Per-example objectives for each training task.

use super::trainer::Task;
use crate::error::Result;
use crate::models::{joint_loss, ContrastiveCfg, CtcModel, Mode, S2utModel, Seq2SeqModel, W2vModel, CTC_BLANK};
use crate::noising::{apply_unit_noise, span_mask, w2v_time_channel_mask, NoiseConfig, W2vMaskConfig};
use crate::tensor::{ctc_min_frames, Graph, ParamStore, RngStream, Tensor, Var};
use crate::units::{UnitSequence, UnitVocab};

/// Teacher-forced pair: decoder input and the shifted targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPair {
    pub src: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
}

/// Sequence-to-sequence pair from source ids and target ids, with
/// `start` prepended to the decoder input and `eos` appended to the output.
pub fn token_pair(src: Vec<usize>, tgt: &[usize], start: usize, eos: usize) -> TokenPair {
    let mut tgt_in = vec![start];
    tgt_in.extend_from_slice(tgt);
    let mut tgt_out = tgt.to_vec();
    tgt_out.push(eos);
    TokenPair { src, tgt_in, tgt_out }
}

/// Supervised text-to-text or text-to-unit training.
pub struct Seq2SeqTask<'a> {
    pub model: &'a Seq2SeqModel,
    pub pairs: Vec<TokenPair>,
    pub smoothing: f64,
}

impl Task for Seq2SeqTask<'_> {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn size(&self, i: usize) -> usize {
        self.pairs[i].src.len() + self.pairs[i].tgt_in.len()
    }

    fn targets(&self, i: usize) -> f64 {
        self.pairs[i].tgt_out.len() as f64
    }

    fn loss(&self, g: &mut Graph, store: &ParamStore, i: usize, mode: &mut Mode, _: &mut RngStream) -> Result<Var> {
        let p = &self.pairs[i];
        let logits = self.model.forward(g, store, &p.src, &p.tgt_in, mode)?;
        g.label_smoothed_nll(logits, &p.tgt_out, self.smoothing, usize::MAX, Some(1.0))
    }
}

/// Encoder input of the denoising format: noised units, then eos and the language tag.
pub fn mbart_source(noised: &[usize], vocab: &UnitVocab, lang: usize) -> Vec<usize> {
    let mut src = noised.to_vec();
    src.push(vocab.eos());
    src.push(lang);
    src
}

/// Span-masked reconstruction of reduced unit sequences, noise redrawn every visit.
pub struct MbartTask<'a> {
    pub model: &'a Seq2SeqModel,
    pub seqs: Vec<UnitSequence>,
    pub vocab: &'a UnitVocab,
    pub noise: NoiseConfig,
    pub smoothing: f64,
}

impl MbartTask<'_> {
    /// Noised pair for sequence `i` under `rng`.
    pub fn pair(&self, i: usize, rng: &mut RngStream) -> Result<TokenPair> {
        let seq = &self.seqs[i];
        let spec = span_mask(seq.len(), &self.noise, rng)?;
        let noised = apply_unit_noise(seq, &spec, self.vocab)?;
        let lang = self.vocab.lang(&seq.lang_tag)?;
        Ok(token_pair(mbart_source(&noised.tokens, self.vocab, lang), &seq.units, lang, self.vocab.eos()))
    }
}

impl Task for MbartTask<'_> {
    fn len(&self) -> usize {
        self.seqs.len()
    }

    fn size(&self, i: usize) -> usize {
        2 * self.seqs[i].len() + 3
    }

    fn targets(&self, i: usize) -> f64 {
        (self.seqs[i].len() + 1) as f64
    }

    fn loss(&self, g: &mut Graph, store: &ParamStore, i: usize, mode: &mut Mode, rng: &mut RngStream) -> Result<Var> {
        let p = self.pair(i, rng)?;
        let logits = self.model.forward(g, store, &p.src, &p.tgt_in, mode)?;
        g.label_smoothed_nll(logits, &p.tgt_out, self.smoothing, usize::MAX, Some(1.0))
    }
}

/// Masked contrastive pretraining on unlabeled speech features.
pub struct W2vTask<'a> {
    pub model: &'a W2vModel,
    pub feats: Vec<Tensor>,
    pub mask: W2vMaskConfig,
    pub contrastive: ContrastiveCfg,
}

/// Draws time and channel masks, extending the time mask so at least two
/// positions are masked.
pub fn w2v_masks(t: usize, d: usize, cfg: &W2vMaskConfig, rng: &mut RngStream) -> Result<(Vec<bool>, Vec<bool>)> {
    let (mut time, channel) = w2v_time_channel_mask(t, d, cfg, rng)?;
    let mut i = 0;
    while time.iter().filter(|&&m| m).count() < 2 && i < t {
        if !time[i] && (time.get(i + 1) == Some(&true) || (i > 0 && time[i - 1])) {
            time[i] = true;
            i = 0;
        } else {
            i += 1;
        }
    }
    if time.iter().filter(|&&m| m).count() < 2 {
        for m in time.iter_mut().take(2) {
            *m = true;
        }
    }
    Ok((time, channel))
}

impl Task for W2vTask<'_> {
    fn len(&self) -> usize {
        self.feats.len()
    }

    fn size(&self, i: usize) -> usize {
        self.feats[i].shape()[0]
    }

    fn targets(&self, _: usize) -> f64 {
        1.0
    }

    fn loss(&self, g: &mut Graph, store: &ParamStore, i: usize, mode: &mut Mode, rng: &mut RngStream) -> Result<Var> {
        let f = &self.feats[i];
        let (t, d) = f.dims2()?;
        if t < 2 {
            return g.constant(vec![], vec![0.0]);
        }
        let (time, channel) = w2v_masks(t, d, &self.mask, rng)?;
        let mut neg = rng.split_str("negatives");
        self.model.loss(g, store, f, &time, Some(&channel), self.contrastive, &mut neg, mode)
    }
}

/// One speech-to-unit example with optional auxiliary targets (one per head).
#[derive(Clone, Debug)]
pub struct S2utItem {
    pub feats: Tensor,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    pub aux: Vec<(Vec<usize>, Vec<usize>)>,
    /// Per-example loss multiplier (weak examples may be down-weighted).
    pub weight: f64,
}

pub struct S2utTask<'a> {
    pub model: &'a S2utModel,
    pub items: Vec<S2utItem>,
    pub smoothing: f64,
}

impl Task for S2utTask<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn size(&self, i: usize) -> usize {
        self.items[i].feats.shape()[0] + self.items[i].tgt_in.len()
    }

    fn targets(&self, i: usize) -> f64 {
        self.items[i].tgt_out.len() as f64
    }

    fn loss(&self, g: &mut Graph, store: &ParamStore, i: usize, mode: &mut Mode, _: &mut RngStream) -> Result<Var> {
        let it = &self.items[i];
        let out = self.model.forward(g, store, &it.feats, &it.tgt_in, mode)?;
        let main = g.label_smoothed_nll(out.logits, &it.tgt_out, self.smoothing, usize::MAX, Some(1.0))?;
        let mut aux = Vec::with_capacity(self.model.aux.len());
        for (k, (a_in, a_out)) in it.aux.iter().enumerate().take(self.model.aux.len()) {
            let logits = self.model.aux_logits(g, store, &out.enc, k, a_in, mode)?;
            aux.push((self.model.aux[k].weight, g.label_smoothed_nll(logits, a_out, self.smoothing, usize::MAX, Some(1.0))?));
        }
        let total = joint_loss(g, main, &aux)?;
        Ok(if it.weight == 1.0 { total } else { g.scale(total, it.weight) })
    }
}

/// Frame-level recognition with CTC. Examples too short for their label
/// sequence are dropped at construction and counted.
pub struct CtcTask<'a> {
    pub model: &'a CtcModel,
    pub items: Vec<(Tensor, Vec<usize>)>,
    pub dropped: usize,
}

impl<'a> CtcTask<'a> {
    pub fn new(model: &'a CtcModel, items: Vec<(Tensor, Vec<usize>)>) -> Self {
        let n = items.len();
        let items: Vec<_> = items
            .into_iter()
            .filter(|(f, y)| !y.is_empty() && f.shape()[0] >= ctc_min_frames(y))
            .collect();
        CtcTask { model, dropped: n - items.len(), items }
    }
}

impl Task for CtcTask<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn size(&self, i: usize) -> usize {
        self.items[i].0.shape()[0]
    }

    fn targets(&self, i: usize) -> f64 {
        self.items[i].1.len() as f64
    }

    fn loss(&self, g: &mut Graph, store: &ParamStore, i: usize, mode: &mut Mode, _: &mut RngStream) -> Result<Var> {
        let (f, y) = &self.items[i];
        let lp = self.model.log_probs(g, store, f, mode)?;
        Ok(g.ctc_loss(lp, y, CTC_BLANK)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_have_two_positions() {
        let cfg = W2vMaskConfig { mask_prob: 0.0, mask_length: 1, channel_mask_prob: 0.0, mask_channel_length: 1 };
        let mut r = RngStream::new(0);
        for t in 2..8 {
            let (m, c) = w2v_masks(t, 3, &cfg, &mut r).unwrap();
            assert!(m.iter().filter(|&&x| x).count() >= 2);
            assert_eq!(c, vec![false; 3]);
        }
        let cfg = W2vMaskConfig { mask_prob: 0.01, mask_length: 1, ..cfg };
        for _ in 0..50 {
            let (m, _) = w2v_masks(9, 3, &cfg, &mut r).unwrap();
            assert!(m.iter().filter(|&&x| x).count() >= 2);
        }
    }

    #[test]
    fn mbart_format() {
        let v = UnitVocab::new(5, &["en"]);
        let p = token_pair(mbart_source(&[1, v.mask(), 3], &v, v.lang("en").unwrap()), &[1, 2, 3], 9, v.eos());
        assert_eq!(p.src, vec![1, v.mask(), 3, v.eos(), 9]);
        assert_eq!(p.tgt_in, vec![9, 1, 2, 3]);
        assert_eq!(p.tgt_out, vec![1, 2, 3, v.eos()]);
    }
}
