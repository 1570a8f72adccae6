//! Training and evaluation of every model in an experiment.

use serde::{Deserialize, Serialize};

use super::data::{TargetUtterance, TextPair, Vocabs};
use crate::augment::{AsrSystem, MtSystem, S2utSystem, T2uSystem};
use crate::error::{Error, Result};
use crate::eval::{asr_bleu_from_units, AsrBleuReport, BeamConfig, UnitOutput};
use crate::models::{
    assemble_s2ut, AuxHeadConfig, ContrastiveCfg, CtcModel, Mode, ModelConfig, S2utConfig, Seq2SeqModel, W2vModel,
};
use crate::noising::{NoiseConfig, W2vMaskConfig};
use crate::signal::{extract_features, render_units_to_audio, spoken_words, Example, SourceUtterance};
use crate::tensor::{Checkpoint, Graph, ParamStore, RngStream, Tensor};
use crate::training::{
    select_finetune_params, token_pair, train, CtcTask, FinetuneStrategy, MbartTask, S2utItem, S2utTask,
    Seq2SeqTask, Task, TrainConfig, TrainOutcome, Trainable, W2vTask,
};
use crate::units::{UnitSequence, WordVocab};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Applies the training config's dropout and layerdrop overrides.
pub(super) fn with_overrides(shape: &ModelConfig, train: &TrainConfig) -> ModelConfig {
    let mut m = shape.clone();
    if let Some(p) = train.dropout {
        m.dropout = p;
    }
    if let Some(p) = train.layerdrop {
        m.layerdrop = p;
    }
    m
}

fn materialized<M>(
    seed: u64,
    declare: impl FnOnce(&mut ParamStore) -> Result<M>,
) -> Result<(M, ParamStore)> {
    let mut store = ParamStore::new();
    let m = declare(&mut store)?;
    store.materialize(&RngStream::new(seed).split_str("init"));
    Ok((m, store))
}

/// Keeps the dev-best parameters when a dev evaluation ran.
fn best_of(store: ParamStore, outcome: &mut TrainOutcome) -> ParamStore {
    outcome.best.take().unwrap_or(store)
}

/// Word error rate over a corpus, in [0, inf).
pub fn word_error_rate(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let errors: usize = hyps.iter().zip(refs).map(|(h, r)| strsim::generic_levenshtein(h, r)).sum();
    let total: usize = refs.iter().map(Vec::len).sum();
    errors as f64 / total.max(1) as f64
}

/// Features of target speech rendered from reduced units, one frame per unit.
pub fn unit_speech_features(units: &[usize], k: usize, feat_dim: usize) -> Result<Tensor> {
    extract_features(&render_units_to_audio(units, k)?, feat_dim)
}

/// CTC training pairs for the target recognizer used by ASR-BLEU.
pub fn target_asr_items(utts: &[TargetUtterance], v: &Vocabs, feat_dim: usize) -> Result<Vec<(Tensor, Vec<usize>)>> {
    utts.iter()
        .map(|u| {
            Ok((
                unit_speech_features(&u.units.units, v.units.k, feat_dim)?,
                v.tgt_words.encode(&spoken_words(&words(&u.text)))?,
            ))
        })
        .collect()
}

/// CTC training pairs for the source recognizer used by augmentation.
pub fn source_asr_items(utts: &[SourceUtterance], v: &Vocabs, feat_dim: usize) -> Result<Vec<(Tensor, Vec<usize>)>> {
    utts.iter()
        .map(|u| {
            Ok((extract_features(&u.src_wave, feat_dim)?, v.src_words.encode(&spoken_words(&words(&u.src_text)))?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| e.at("model"))?;
        self.train.validate().map_err(|e| e.at("train"))
    }
}

/// Trains a CTC word recognizer; the dev metric is 1 - WER.
pub fn train_asr(
    items: Vec<(Tensor, Vec<usize>)>,
    dev: &[(Tensor, Vec<usize>)],
    vocab: &WordVocab,
    stage: &StageConfig,
) -> Result<(AsrSystem, TrainOutcome)> {
    let feat_dim = items.first().map(|(f, _)| f.shape()[1]).unwrap_or(stage.model.feat_dim);
    let cfg = ModelConfig { feat_dim, ..with_overrides(&stage.model, &stage.train) };
    let (model, mut store) = materialized(stage.train.seed, |s| CtcModel::declare(s, &cfg, vocab.size()))?;
    let task = CtcTask::new(&model, items);
    let refs: Vec<Vec<String>> = dev.iter().map(|(_, y)| vocab.decode(y)).collect();
    let mut dev_fn = |s: &ParamStore| -> Result<f64> {
        let sys = AsrSystem { model: model.clone(), store: s.clone(), vocab: vocab.clone(), feat_dim };
        let hyps = dev.iter().map(|(f, _)| sys.transcribe_feats(f)).collect::<Result<Vec<_>>>()?;
        Ok(1.0 - word_error_rate(&hyps, &refs))
    };
    let mut outcome = train(&task, &mut store, &stage.train, Trainable::All, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok((AsrSystem { model, store, vocab: vocab.clone(), feat_dim }, outcome))
}

fn text_pairs(pairs: &[TextPair], v: &Vocabs) -> Result<Vec<crate::training::TokenPair>> {
    pairs
        .iter()
        .map(|p| {
            let mut src = v.src_words.encode(&spoken_words(&words(&p.src)))?;
            src.push(WordVocab::EOS);
            Ok(token_pair(src, &v.tgt_text.encode(&words(&p.tgt))?, WordVocab::BOS, WordVocab::EOS))
        })
        .collect()
}

fn seq2seq_model(stage: &StageConfig, src_vocab: usize, tgt_vocab: usize) -> Result<(Seq2SeqModel, ParamStore)> {
    let cfg = ModelConfig { src_vocab, tgt_vocab, ..with_overrides(&stage.model, &stage.train) };
    materialized(stage.train.seed, |s| Seq2SeqModel::declare(s, &cfg))
}

fn dev_beam() -> BeamConfig {
    BeamConfig { beam_size: 1, ..BeamConfig::default() }
}

/// Spoken source words to written target text; the dev metric is exact match.
pub fn train_mt(pairs: &[TextPair], dev: &[TextPair], v: &Vocabs, stage: &StageConfig) -> Result<(MtSystem, TrainOutcome)> {
    let (model, mut store) = seq2seq_model(stage, v.src_words.size(), v.tgt_text.size())?;
    let task = Seq2SeqTask { model: &model, pairs: text_pairs(pairs, v)?, smoothing: stage.train.label_smoothing };
    let mut dev_fn = |s: &ParamStore| -> Result<f64> {
        let sys = MtSystem { model: model.clone(), store: s.clone(), src: v.src_words.clone(), tgt: v.tgt_text.clone() };
        let mut hits = 0;
        for p in dev {
            if sys.translate(&spoken_words(&words(&p.src)), &dev_beam())? == words(&p.tgt) {
                hits += 1;
            }
        }
        Ok(hits as f64 / dev.len().max(1) as f64)
    };
    let mut outcome = train(&task, &mut store, &stage.train, Trainable::All, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok((MtSystem { model, store, src: v.src_words.clone(), tgt: v.tgt_text.clone() }, outcome))
}

/// Written target text to reduced units; the dev metric is exact match.
pub fn train_t2u(
    utts: &[TargetUtterance],
    dev: &[TargetUtterance],
    v: &Vocabs,
    stage: &StageConfig,
) -> Result<(T2uSystem, TrainOutcome)> {
    let (model, mut store) = seq2seq_model(stage, v.tgt_text.size(), v.units.size())?;
    let lang = v.units.lang(&v.tgt_lang)?;
    let pairs = utts
        .iter()
        .map(|u| {
            let mut src = v.tgt_text.encode(&words(&u.text))?;
            src.push(WordVocab::EOS);
            Ok(token_pair(src, &u.units.units, lang, v.units.eos()))
        })
        .collect::<Result<_>>()?;
    let task = Seq2SeqTask { model: &model, pairs, smoothing: stage.train.label_smoothing };
    let sys = |s: &ParamStore| T2uSystem {
        model: model.clone(),
        store: s.clone(),
        text: v.tgt_text.clone(),
        units: v.units.clone(),
        lang: v.tgt_lang.clone(),
    };
    let mut dev_fn = |s: &ParamStore| -> Result<f64> {
        let t2u = sys(s);
        let mut hits = 0;
        for u in dev {
            if t2u.generate(&words(&u.text), &dev_beam())?.units == u.units.units {
                hits += 1;
            }
        }
        Ok(hits as f64 / dev.len().max(1) as f64)
    };
    let mut outcome = train(&task, &mut store, &stage.train, Trainable::All, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok((sys(&store), outcome))
}

/// Mean loss of `task` over all examples in eval mode with fixed task randomness.
fn mean_loss<T: Task + ?Sized>(task: &T, store: &ParamStore, seed: u64) -> Result<f64> {
    let root = RngStream::new(seed).split_str("dev-loss");
    let (mut sum, mut n) = (0.0, 0.0);
    for i in 0..task.len() {
        let mut g = Graph::no_grad();
        let l = task.loss(&mut g, store, i, &mut Mode::eval(), &mut root.split(i as u64))?;
        sum += g.scalar(l);
        n += task.targets(i);
    }
    Ok(sum / f64::max(n, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbartConfig {
    pub lambda: f64,
    pub p: f64,
    pub train: TrainConfig,
}

/// Denoising pretraining of a unit encoder-decoder; the dev metric is the
/// negated dev loss.
pub fn pretrain_mbart(
    seqs: &[UnitSequence],
    dev: &[UnitSequence],
    v: &Vocabs,
    shape: &ModelConfig,
    cfg: &MbartConfig,
) -> Result<(Seq2SeqModel, ParamStore, TrainOutcome)> {
    let stage = StageConfig { model: shape.clone(), train: cfg.train.clone() };
    let (model, mut store) = seq2seq_model(&stage, v.units.size(), v.units.size())?;
    let noise = NoiseConfig { lambda: cfg.lambda, p: cfg.p, mask_symbol: v.units.mask() };
    noise.validate()?;
    let task = |seqs: &[UnitSequence]| MbartTask {
        model: &model,
        seqs: seqs.to_vec(),
        vocab: &v.units,
        noise: noise.clone(),
        smoothing: cfg.train.label_smoothing,
    };
    let (train_task, dev_task) = (task(seqs), task(dev));
    let mut dev_fn = |s: &ParamStore| -> Result<f64> { Ok(-mean_loss(&dev_task, s, cfg.train.seed)?) };
    let mut outcome = train(&train_task, &mut store, &cfg.train, Trainable::All, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok((model, store, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W2vConfig {
    pub mask: W2vMaskConfig,
    pub contrastive: ContrastiveCfg,
    pub train: TrainConfig,
}

/// Masked contrastive pretraining of the speech encoder; the dev metric is
/// the negated dev loss.
pub fn pretrain_w2v(
    feats: Vec<Tensor>,
    dev: Vec<Tensor>,
    shape: &ModelConfig,
    cfg: &W2vConfig,
) -> Result<(W2vModel, ParamStore, TrainOutcome)> {
    cfg.mask.validate()?;
    let feat_dim = feats.first().map(|f| f.shape()[1]).unwrap_or(shape.feat_dim);
    let m = ModelConfig { feat_dim, ..with_overrides(shape, &cfg.train) };
    let (model, mut store) = materialized(cfg.train.seed, |s| W2vModel::declare(s, &m))?;
    let task = |feats: Vec<Tensor>| W2vTask { model: &model, feats, mask: cfg.mask.clone(), contrastive: cfg.contrastive };
    let (train_task, dev_task) = (task(feats), task(dev));
    let mut dev_fn = |s: &ParamStore| -> Result<f64> { Ok(-mean_loss(&dev_task, s, cfg.train.seed)?) };
    let mut outcome = train(&train_task, &mut store, &cfg.train, Trainable::All, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok((model, store, outcome))
}

/// Which transcript an auxiliary decoder predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxTarget {
    SourceWords,
    TargetWords,
}

fn aux_weight() -> f64 {
    8.0
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSpec {
    pub layer: usize,
    pub target: AuxTarget,
    #[serde(default = "aux_weight")]
    pub weight: f64,
    #[serde(default = "one")]
    pub dec_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S2utStageConfig {
    #[serde(default)]
    pub aux: Vec<AuxSpec>,
    pub train: TrainConfig,
    /// Required when starting from pretrained weights.
    #[serde(default)]
    pub strategy: Option<FinetuneStrategy>,
    /// Loss multiplier for weakly supervised examples.
    #[serde(default = "unit_weight")]
    pub weak_weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl S2utStageConfig {
    pub fn model_config(&self, shape: &ModelConfig, v: &Vocabs, feat_dim: usize) -> S2utConfig {
        let aux = self
            .aux
            .iter()
            .map(|a| AuxHeadConfig {
                layer: a.layer,
                vocab: match a.target {
                    AuxTarget::SourceWords => v.src_words.size(),
                    AuxTarget::TargetWords => v.tgt_words.size(),
                },
                weight: a.weight,
                dec_layers: a.dec_layers,
            })
            .collect();
        let model = ModelConfig { feat_dim, tgt_vocab: v.units.size(), ..with_overrides(shape, &self.train) };
        S2utConfig { model, aux }
    }
}

/// Teacher-forced S2UT items with auxiliary word targets.
pub fn s2ut_items(examples: &[&Example], v: &Vocabs, aux: &[AuxSpec], feat_dim: usize, weak_weight: f64) -> Result<Vec<S2utItem>> {
    let lang = v.units.lang(&v.tgt_lang)?;
    examples
        .iter()
        .map(|e| {
            let p = token_pair(Vec::new(), &e.tgt_units.units, lang, v.units.eos());
            let aux = aux
                .iter()
                .map(|a| {
                    let ids = match a.target {
                        AuxTarget::SourceWords => v.src_words.encode(&spoken_words(&words(&e.src_text)))?,
                        AuxTarget::TargetWords => v.tgt_words.encode(&spoken_words(&words(&e.tgt_text)))?,
                    };
                    let w = token_pair(Vec::new(), &ids, WordVocab::BOS, WordVocab::EOS);
                    Ok((w.tgt_in, w.tgt_out))
                })
                .collect::<Result<_>>()?;
            Ok(S2utItem {
                feats: extract_features(&e.src_wave, feat_dim)?,
                tgt_in: p.tgt_in,
                tgt_out: p.tgt_out,
                aux,
                weight: if e.weak { weak_weight } else { 1.0 },
            })
        })
        .collect()
}

/// ASR-BLEU of an S2UT system on `examples`.
pub fn evaluate_s2ut(sys: &S2utSystem, asr: &AsrSystem, examples: &[&Example], beam: &BeamConfig) -> Result<AsrBleuReport> {
    let units = examples
        .iter()
        .map(|e| Ok(sys.translate(&e.src_wave, beam)?.units))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<UnitOutput> = examples
        .iter()
        .zip(&units)
        .map(|(e, u)| UnitOutput { id: &e.id, units: u, reference: &e.tgt_text })
        .collect();
    let mut transcribe = |w: &crate::signal::Waveform| Ok(asr.transcribe(w)?.join(" "));
    asr_bleu_from_units(&outputs, sys.units.k, &mut transcribe)
}

/// Pretrained weights an S2UT model starts from.
#[derive(Clone, Copy, Debug, Default)]
pub struct Init<'a> {
    pub encoder: Option<&'a Checkpoint>,
    pub decoder: Option<&'a Checkpoint>,
}

#[derive(Debug)]
pub struct S2utRun {
    pub system: S2utSystem,
    pub outcome: TrainOutcome,
    pub trainable_params: usize,
}

/// Trains or finetunes an S2UT model with dev ASR-BLEU (greedy) for
/// checkpoint selection.
pub fn train_s2ut(
    stage: &S2utStageConfig,
    shape: &ModelConfig,
    train_set: &[&Example],
    dev: &[&Example],
    v: &Vocabs,
    asr: &AsrSystem,
    init: Init<'_>,
    dev_beam: &BeamConfig,
) -> Result<S2utRun> {
    stage.train.validate().map_err(|e| e.at("train"))?;
    let feat_dim = asr.feat_dim;
    let cfg = stage.model_config(shape, v, feat_dim);
    let pretrained = init.encoder.is_some() || init.decoder.is_some();
    let strategy = match (stage.strategy, pretrained) {
        (Some(s), _) => Some(s),
        (None, true) => return Err(Error::config("strategy", "finetuning pretrained weights needs a strategy")),
        (None, false) => None,
    };
    let (model, mut store) = assemble_s2ut(&cfg, init.encoder, init.decoder, stage.train.seed)?;
    let partition = strategy.map(|s| select_finetune_params(store.names(), s.kind)).transpose()?;
    let trainable = match (&strategy, &partition) {
        (Some(s), Some(p)) => Trainable::Partition(s, p),
        _ => Trainable::All,
    };
    let trainable_params = match &partition {
        Some(p) => store.count_of(&p.trainable),
        None => store.count(),
    };
    let task = S2utTask {
        model: &model,
        items: s2ut_items(train_set, v, &stage.aux, feat_dim, stage.weak_weight)?,
        smoothing: stage.train.label_smoothing,
    };
    let system = |s: &ParamStore| S2utSystem {
        model: model.clone(),
        store: s.clone(),
        units: v.units.clone(),
        lang: v.tgt_lang.clone(),
        feat_dim,
    };
    let mut dev_fn = |s: &ParamStore| -> Result<f64> { Ok(evaluate_s2ut(&system(s), asr, dev, dev_beam)?.bleu.score) };
    let mut outcome = train(&task, &mut store, &stage.train, trainable, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok(S2utRun { system: system(&store), outcome, trainable_params })
}

/// Reduced units of speech under `codebook`.
pub fn speech_units(wave: &crate::signal::Waveform, codebook: &crate::units::Codebook, lang: &str) -> Result<UnitSequence> {
    let feats = extract_features(wave, codebook.dim())?;
    Ok(crate::units::reduce_units(&crate::units::kmeans_assign(&feats, codebook, lang)?))
}

/// Encoder input for a unit sequence: units, eos, language tag.
fn unit_source(seq: &UnitSequence, v: &Vocabs) -> Result<Vec<usize>> {
    Ok(crate::training::mbart_source(&seq.units, &v.units, v.units.lang(&seq.lang_tag)?))
}

/// Source units to target units with a pretrained unit encoder-decoder.
#[derive(Clone, Debug)]
pub struct UnitTranslator {
    pub model: Seq2SeqModel,
    pub store: ParamStore,
    pub vocabs: Vocabs,
}

impl UnitTranslator {
    pub fn translate(&self, src: &UnitSequence, beam: &BeamConfig) -> Result<UnitSequence> {
        let v = &self.vocabs;
        let ids = unit_source(src, v)?;
        let allowed = (0..v.units.size()).map(|i| i == v.units.eos() || v.units.is_unit(i)).collect();
        let hyp = crate::models::decode(
            &self.model,
            &self.store,
            ids.as_slice(),
            &[v.units.lang(&v.tgt_lang)?],
            v.units.eos(),
            Some(allowed),
            beam,
        )?;
        let units = hyp.tokens.into_iter().filter(|&t| v.units.is_unit(t)).collect();
        Ok(crate::units::reduce_units(&UnitSequence::raw(v.tgt_lang.clone(), units)))
    }
}

/// ASR-BLEU of unit-to-unit translation on (id, source units, reference text).
pub fn evaluate_unit_translation(
    sys: &UnitTranslator,
    asr: &AsrSystem,
    items: &[(String, UnitSequence, String)],
    beam: &BeamConfig,
) -> Result<AsrBleuReport> {
    let hyps = items.iter().map(|(_, s, _)| sys.translate(s, beam)).collect::<Result<Vec<_>>>()?;
    let outputs: Vec<UnitOutput> = items
        .iter()
        .zip(&hyps)
        .map(|((id, _, r), h)| UnitOutput { id, units: &h.units, reference: r })
        .collect();
    let mut transcribe = |w: &crate::signal::Waveform| Ok(asr.transcribe(w)?.join(" "));
    asr_bleu_from_units(&outputs, sys.vocabs.units.k, &mut transcribe)
}

/// Finetunes a denoising-pretrained model on unit-to-unit translation;
/// the dev metric is greedy ASR-BLEU.
pub fn train_unit_translation(
    pairs: &[(UnitSequence, UnitSequence)],
    dev: &[(String, UnitSequence, String)],
    v: &Vocabs,
    shape: &ModelConfig,
    pretrained: &Checkpoint,
    train_cfg: &TrainConfig,
    asr: &AsrSystem,
    dev_beam: &BeamConfig,
) -> Result<(UnitTranslator, TrainOutcome)> {
    let m = ModelConfig { src_vocab: v.units.size(), tgt_vocab: v.units.size(), ..with_overrides(shape, train_cfg) };
    let mut store = ParamStore::new();
    let model = Seq2SeqModel::declare(&mut store, &m)?;
    store.materialize(&RngStream::new(train_cfg.seed).split_str("init"));
    crate::models::load_prefix(&mut store, pretrained, "")?;
    let tgt_lang = v.units.lang(&v.tgt_lang)?;
    let pairs = pairs
        .iter()
        .map(|(s, t)| Ok(token_pair(unit_source(s, v)?, &t.units, tgt_lang, v.units.eos())))
        .collect::<Result<_>>()?;
    let task = Seq2SeqTask { model: &model, pairs, smoothing: train_cfg.label_smoothing };
    let sys = |s: &ParamStore| UnitTranslator { model: model.clone(), store: s.clone(), vocabs: v.clone() };
    let mut dev_fn = |s: &ParamStore| -> Result<f64> {
        Ok(evaluate_unit_translation(&sys(s), asr, dev, dev_beam)?.bleu.score)
    };
    let mut outcome = train(&task, &mut store, train_cfg, Trainable::All, &mut dev_fn, None)?;
    let store = best_of(store, &mut outcome);
    Ok((sys(&store), outcome))
}
