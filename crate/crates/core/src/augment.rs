//! Weak supervision from source-only speech: recognize, translate, then
//! generate target units.

use crate::error::{Error, Result};
use crate::eval::BeamConfig;
use crate::models::{decode, CtcModel, Mode, S2utModel, Seq2SeqModel, CTC_BLANK};
use crate::signal::{extract_features, Example, SourceUtterance, Split, Waveform};
use crate::tensor::{Graph, ParamStore, Tensor};
use crate::units::{reduce_units, UnitSequence, UnitVocab, WordVocab};

/// Framewise argmax, adjacent repeats collapsed, blanks dropped.
pub fn ctc_greedy_decode(log_probs: &Tensor, blank: usize) -> Vec<usize> {
    let (t, v) = match log_probs.dims2() {
        Ok(d) => d,
        Err(_) => return Vec::new(),
    };
    let mut out = Vec::new();
    let mut prev = None;
    for i in 0..t {
        let row = &log_probs.data()[i * v..(i + 1) * v];
        let best = row
            .iter()
            .enumerate()
            .fold(0, |b, (j, &x)| if x > row[b] { j } else { b });
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

/// CTC word recognizer over speech features.
#[derive(Clone, Debug)]
pub struct AsrSystem {
    pub model: CtcModel,
    pub store: ParamStore,
    pub vocab: WordVocab,
    pub feat_dim: usize,
}

impl AsrSystem {
    pub fn transcribe_feats(&self, feats: &Tensor) -> Result<Vec<String>> {
        if feats.shape()[0] == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::no_grad();
        let lp = self.model.log_probs(&mut g, &self.store, feats, &mut Mode::eval())?;
        Ok(self.vocab.decode(&ctc_greedy_decode(&g.to_tensor(lp), CTC_BLANK)))
    }

    pub fn transcribe(&self, wave: &Waveform) -> Result<Vec<String>> {
        if wave.frames() == 0 {
            return Ok(Vec::new());
        }
        self.transcribe_feats(&extract_features(wave, self.feat_dim)?)
    }
}

/// Only `eos` and real words may be generated.
fn word_mask(vocab: &WordVocab) -> Vec<bool> {
    (0..vocab.size()).map(|i| i == WordVocab::EOS || vocab.is_word(i)).collect()
}

fn beam_for(cfg: &BeamConfig, src_len: usize) -> BeamConfig {
    BeamConfig { max_len: cfg.max_len.min(3 * src_len + 10), ..cfg.clone() }
}

/// Text translation model over word vocabularies.
#[derive(Clone, Debug)]
pub struct MtSystem {
    pub model: Seq2SeqModel,
    pub store: ParamStore,
    pub src: WordVocab,
    pub tgt: WordVocab,
}

impl MtSystem {
    pub fn translate<S: AsRef<str>>(&self, words: &[S], beam: &BeamConfig) -> Result<Vec<String>> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let mut src = self.src.encode(words)?;
        src.push(WordVocab::EOS);
        let hyp = decode(
            &self.model,
            &self.store,
            src.as_slice(),
            &[WordVocab::BOS],
            WordVocab::EOS,
            Some(word_mask(&self.tgt)),
            &beam_for(beam, src.len()),
        )?;
        Ok(self.tgt.decode(&hyp.tokens))
    }
}

fn unit_mask(vocab: &UnitVocab) -> Vec<bool> {
    (0..vocab.size()).map(|i| i == vocab.eos() || vocab.is_unit(i)).collect()
}

/// Keeps unit ids and collapses repeats.
fn to_reduced(tokens: &[usize], vocab: &UnitVocab, lang: &str) -> UnitSequence {
    let units = tokens.iter().copied().filter(|&t| vocab.is_unit(t)).collect();
    reduce_units(&UnitSequence::raw(lang, units))
}

/// Text-to-unit model.
#[derive(Clone, Debug)]
pub struct T2uSystem {
    pub model: Seq2SeqModel,
    pub store: ParamStore,
    pub text: WordVocab,
    pub units: UnitVocab,
    pub lang: String,
}

impl T2uSystem {
    pub fn generate<S: AsRef<str>>(&self, words: &[S], beam: &BeamConfig) -> Result<UnitSequence> {
        if words.is_empty() {
            return Ok(to_reduced(&[], &self.units, &self.lang));
        }
        let mut src = self.text.encode(words)?;
        src.push(WordVocab::EOS);
        let lang = self.units.lang(&self.lang)?;
        let cfg = BeamConfig { max_len: beam.max_len.min(8 * src.len() + 10), ..beam.clone() };
        let hyp = decode(&self.model, &self.store, src.as_slice(), &[lang], self.units.eos(), Some(unit_mask(&self.units)), &cfg)?;
        Ok(to_reduced(&hyp.tokens, &self.units, &self.lang))
    }
}

/// Speech-to-unit translation model.
#[derive(Clone, Debug)]
pub struct S2utSystem {
    pub model: S2utModel,
    pub store: ParamStore,
    pub units: UnitVocab,
    pub lang: String,
    pub feat_dim: usize,
}

impl S2utSystem {
    pub fn translate_feats(&self, feats: &Tensor, beam: &BeamConfig) -> Result<UnitSequence> {
        let lang = self.units.lang(&self.lang)?;
        let hyp = decode(&self.model, &self.store, feats, &[lang], self.units.eos(), Some(unit_mask(&self.units)), beam)?;
        Ok(to_reduced(&hyp.tokens, &self.units, &self.lang))
    }

    pub fn translate(&self, wave: &Waveform, beam: &BeamConfig) -> Result<UnitSequence> {
        self.translate_feats(&extract_features(wave, self.feat_dim)?, beam)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Asr,
    Mt,
    T2u,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakCorpus {
    pub examples: Vec<Example>,
    /// (utterance id, stage that produced empty output)
    pub skipped: Vec<(String, Stage)>,
}

/// Recognize, translate and synthesize units for every utterance; examples
/// with an empty stage output are skipped and recorded.
pub fn build_weak_corpus(
    utts: &[SourceUtterance],
    asr: &AsrSystem,
    mt: &MtSystem,
    t2u: &T2uSystem,
    beam: &BeamConfig,
) -> Result<WeakCorpus> {
    let mut out = WeakCorpus { examples: Vec::new(), skipped: Vec::new() };
    for u in utts {
        let words = asr.transcribe(&u.src_wave)?;
        if words.is_empty() {
            out.skipped.push((u.id.clone(), Stage::Asr));
            continue;
        }
        let tgt = mt.translate(&words, beam)?;
        if tgt.is_empty() {
            out.skipped.push((u.id.clone(), Stage::Mt));
            continue;
        }
        let units = t2u.generate(&tgt, beam)?;
        if units.is_empty() {
            out.skipped.push((u.id.clone(), Stage::T2u));
            continue;
        }
        out.examples.push(Example {
            id: u.id.clone(),
            split: Split::Train,
            duration_s: u.src_wave.duration_s(),
            src_wave: u.src_wave.clone(),
            src_text: words.join(" "),
            tgt_text: tgt.join(" "),
            tgt_units: units,
            weak: true,
            domain: u.domain.clone(),
        });
    }
    if out.examples.iter().any(|e| e.tgt_units.units.windows(2).any(|w| w[0] == w[1])) {
        return Err(Error::Contract("weak example with unreduced units".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(path: &[usize], v: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&b| (0..v).map(|j| if j == b { -0.1 } else { -3.0 }).collect())
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn greedy_ctc_rules() {
        assert_eq!(ctc_greedy_decode(&lp(&[1, 1, 0, 2], 3), 0), vec![1, 2]);
        assert_eq!(ctc_greedy_decode(&lp(&[0, 0, 0], 3), 0), Vec::<usize>::new());
        assert_eq!(ctc_greedy_decode(&lp(&[1, 0, 1], 3), 0), vec![1, 1]);
    }

    #[test]
    fn reduction_is_enforced() {
        let v = UnitVocab::new(4, &["en"]);
        let s = to_reduced(&[1, 1, v.eos(), 2, 2, 3, 9], &v, "en");
        assert_eq!(s.units, vec![1, 2, 3]);
    }
}
