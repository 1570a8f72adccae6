//! Stage runners that read and write artifacts under an output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::ToyData;
use super::recipe::Recipe;
use super::stages::{
    evaluate_s2ut, evaluate_unit_translation, pretrain_mbart, pretrain_w2v, source_asr_items, speech_units,
    target_asr_items, train_asr, with_overrides, train_mt, train_s2ut, train_t2u, train_unit_translation, Init, StageConfig,
};
use crate::augment::{build_weak_corpus, AsrSystem, MtSystem, S2utSystem, T2uSystem};
use crate::error::{Error, Result};
use crate::eval::AsrBleuReport;
use crate::models::{load_prefix, CtcModel, ModelConfig, S2utConfig, S2utModel, Seq2SeqModel};
use crate::signal::{extract_features, fit_unit_codebook, Corpus, Example, Split};
use crate::tensor::{load_checkpoint, save_checkpoint, Checkpoint, ParamStore, RngStream};
use crate::training::{metrics_tsv, FinetuneStrategy, TrainConfig, TrainOutcome};
use crate::units::{Codebook, UnitSequence};

/// Shared artifacts live under `root`; the S2UT model, its evaluation and
/// report under `run`.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub run: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelMeta {
    Ctc { model: ModelConfig, vocab: usize },
    Seq2seq { model: ModelConfig },
    W2v { model: ModelConfig },
    S2ut { config: S2utConfig, strategy: Option<FinetuneStrategy>, trainable_params: usize },
}

/// Deterministic run summary; timing lives in `timing.json` beside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub strategy: String,
    pub dev_bleu: f64,
    pub test_bleu: f64,
    pub trainable_params: usize,
    pub dev_excluded: usize,
    pub test_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: u64,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes parameters, metrics log and timing for one trained model.
fn save_model(dir: &Path, store: &ParamStore, meta: &ModelMeta, outcome: &TrainOutcome, started: Instant) -> Result<()> {
    save_checkpoint(dir, &Checkpoint::from_store(store, serde_json::to_value(meta)?))?;
    fs::write(dir.join("metrics.tsv"), metrics_tsv(&outcome.log, false))?;
    write_json(&dir.join("timing.json"), &Timing { wall_ms: started.elapsed().as_millis() as u64 })
}

/// Declares from the saved config and copies every parameter back.
fn restore<M>(ckpt: &Checkpoint, declare: impl FnOnce(&mut ParamStore) -> Result<M>) -> Result<(M, ParamStore)> {
    let mut store = ParamStore::new();
    let m = declare(&mut store)?;
    store.materialize(&RngStream::new(0));
    load_prefix(&mut store, ckpt, "")?;
    Ok((m, store))
}

fn load_meta(dir: &Path) -> Result<(Checkpoint, ModelMeta)> {
    let ckpt = load_checkpoint(dir)?;
    let meta = serde_json::from_value(ckpt.meta.clone())?;
    Ok((ckpt, meta))
}

fn wrong_kind(dir: &Path) -> Error {
    Error::Checkpoint(format!("{} holds a different kind of model", dir.display()))
}

/// Splits off a dev tail of at most 50 items (a tenth of the data).
fn holdout<T>(items: &[T]) -> (&[T], &[T]) {
    let n_dev = (items.len() / 10).clamp(1, 50).min(items.len().saturating_sub(1));
    items.split_at(items.len() - n_dev)
}

fn with_seed(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..train.clone() }
}

impl Workspace {
    pub fn new(out: &Path) -> Self {
        Workspace { root: out.to_path_buf(), run: out.to_path_buf() }
    }

    /// Shared artifacts in `root`, run artifacts in `run`.
    pub fn with_run(root: &Path, run: &Path) -> Self {
        Workspace { root: root.to_path_buf(), run: run.to_path_buf() }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        match stage {
            "s2ut" | "eval" => self.run.join(stage),
            _ => self.root.join(stage),
        }
    }

    pub fn load_data(&self) -> Result<ToyData> {
        ToyData::load(&self.dir("data"))
    }

    pub fn gen_data(&self, r: &Recipe) -> Result<ToyData> {
        let data = ToyData::generate(&r.data, r.seed)?;
        data.save(&self.dir("data"))?;
        Ok(data)
    }

    /// Fits the unit codebook on rendered unit signatures.
    pub fn quantize_fit(&self, r: &Recipe) -> Result<Codebook> {
        let cb = fit_unit_codebook(r.data.lang.k_units, r.data.lang.feat_dim, r.seed)?;
        cb.save(&self.dir("codebook"))?;
        Ok(cb)
    }

    /// Quantizes every corpus utterance's source speech to reduced units,
    /// one TSV per split.
    pub fn quantize_encode(&self) -> Result<usize> {
        let data = self.load_data()?;
        let cb_dir = self.dir("codebook");
        let cb = if cb_dir.exists() { Codebook::load(&cb_dir)? } else { data.renderer.codebook.clone() };
        let out = self.dir("units");
        fs::create_dir_all(&out)?;
        let mut n = 0;
        for split in Split::ALL {
            let mut tsv = String::from("id\tunits\n");
            for e in data.corpus.split(split) {
                let u = speech_units(&e.src_wave, &cb, &data.corpus.meta.src_lang)?;
                tsv.push_str(&format!("{}\t{}\n", e.id, u.to_text()));
                n += 1;
            }
            fs::write(out.join(format!("{}.tsv", split.as_str())), tsv)?;
        }
        Ok(n)
    }

    fn stage_cfg(r: &Recipe, name: &str, s: &StageConfig) -> StageConfig {
        StageConfig { model: s.model.clone(), train: with_seed(&s.train, r.stage_seed(name, s.train.seed)) }
    }

    /// Target recognizer on target-only utterances rendered from their units.
    pub fn train_target_asr(&self, r: &Recipe) -> Result<AsrSystem> {
        let started = Instant::now();
        let data = self.load_data()?;
        let v = data.vocabs();
        let feat_dim = data.corpus.meta.feat_dim;
        let (tr, dv) = holdout(&data.target_only);
        if tr.is_empty() {
            return Err(Error::config("data.n_target_only", "the target recognizer needs target-only data"));
        }
        let stage = Self::stage_cfg(r, "asr", &r.asr);
        let (sys, outcome) = train_asr(target_asr_items(tr, &v, feat_dim)?, &target_asr_items(dv, &v, feat_dim)?, &v.tgt_words, &stage)?;
        let meta = ModelMeta::Ctc { model: ModelConfig { feat_dim, ..with_overrides(&stage.model, &stage.train) }, vocab: sys.vocab.size() };
        save_model(&self.dir("asr"), &sys.store, &meta, &outcome, started)?;
        Ok(sys)
    }

    pub fn train_source_asr(&self, r: &Recipe) -> Result<AsrSystem> {
        let started = Instant::now();
        let stage = r.source_asr.as_ref().ok_or_else(|| Error::config("source_asr", "section missing"))?;
        let data = self.load_data()?;
        let v = data.vocabs();
        let feat_dim = data.corpus.meta.feat_dim;
        let (tr, dv) = holdout(&data.source_only);
        if tr.is_empty() {
            return Err(Error::config("data.n_source_only", "the source recognizer needs source-only data"));
        }
        let stage = Self::stage_cfg(r, "source_asr", stage);
        let (sys, outcome) = train_asr(source_asr_items(tr, &v, feat_dim)?, &source_asr_items(dv, &v, feat_dim)?, &v.src_words, &stage)?;
        let meta = ModelMeta::Ctc { model: ModelConfig { feat_dim, ..with_overrides(&stage.model, &stage.train) }, vocab: sys.vocab.size() };
        save_model(&self.dir("source_asr"), &sys.store, &meta, &outcome, started)?;
        Ok(sys)
    }

    pub fn train_mt(&self, r: &Recipe) -> Result<MtSystem> {
        let started = Instant::now();
        let stage = r.mt.as_ref().ok_or_else(|| Error::config("mt", "section missing"))?;
        let data = self.load_data()?;
        let (tr, dv) = holdout(&data.text);
        if tr.is_empty() {
            return Err(Error::config("data.n_text", "the text translation model needs parallel text"));
        }
        let (sys, outcome) = train_mt(tr, dv, &data.vocabs(), &Self::stage_cfg(r, "mt", stage))?;
        save_model(&self.dir("mt"), &sys.store, &ModelMeta::Seq2seq { model: sys.model.cfg.clone() }, &outcome, started)?;
        Ok(sys)
    }

    pub fn train_t2u(&self, r: &Recipe) -> Result<T2uSystem> {
        let started = Instant::now();
        let stage = r.t2u.as_ref().ok_or_else(|| Error::config("t2u", "section missing"))?;
        let data = self.load_data()?;
        let (tr, dv) = holdout(&data.target_only);
        if tr.is_empty() {
            return Err(Error::config("data.n_target_only", "the text-to-unit model needs target-only data"));
        }
        let (sys, outcome) = train_t2u(tr, dv, &data.vocabs(), &Self::stage_cfg(r, "t2u", stage))?;
        save_model(&self.dir("t2u"), &sys.store, &ModelMeta::Seq2seq { model: sys.model.cfg.clone() }, &outcome, started)?;
        Ok(sys)
    }

    /// Contrastive pretraining on source-only speech.
    pub fn pretrain_w2v(&self, r: &Recipe) -> Result<()> {
        let started = Instant::now();
        let cfg = r.w2v.as_ref().ok_or_else(|| Error::config("w2v", "section missing"))?;
        let data = self.load_data()?;
        let feat_dim = data.corpus.meta.feat_dim;
        let feats = data
            .source_only
            .iter()
            .map(|u| extract_features(&u.src_wave, feat_dim))
            .collect::<Result<Vec<_>>>()?;
        let (tr, dv) = holdout(&feats);
        if tr.is_empty() {
            return Err(Error::config("data.n_source_only", "contrastive pretraining needs source-only speech"));
        }
        let mut cfg = cfg.clone();
        cfg.train.seed = r.stage_seed("w2v", cfg.train.seed);
        let shape = ModelConfig { feat_dim, ..r.model.clone() };
        let (_, store, outcome) = pretrain_w2v(tr.to_vec(), dv.to_vec(), &shape, &cfg)?;
        save_model(&self.dir("w2v"), &store, &ModelMeta::W2v { model: with_overrides(&shape, &cfg.train) }, &outcome, started)
    }

    /// Denoising pretraining on target-only units and quantized source-only speech.
    pub fn pretrain_mbart(&self, r: &Recipe) -> Result<()> {
        let cfg = r.mbart.as_ref().ok_or_else(|| Error::config("mbart", "section missing"))?;
        self.pretrain_mbart_with(r, cfg.lambda, cfg.p, &self.dir("mbart"))
    }

    fn unit_corpus(data: &ToyData) -> Result<Vec<UnitSequence>> {
        let mut seqs: Vec<UnitSequence> = data.target_only.iter().map(|u| u.units.clone()).collect();
        for u in &data.source_only {
            seqs.push(speech_units(&u.src_wave, &data.renderer.codebook, &data.corpus.meta.src_lang)?);
        }
        Ok(seqs)
    }

    fn pretrain_mbart_with(&self, r: &Recipe, lambda: f64, p: f64, dir: &Path) -> Result<()> {
        let started = Instant::now();
        let base = r.mbart.as_ref().ok_or_else(|| Error::config("mbart", "section missing"))?;
        let data = self.load_data()?;
        let seqs = Self::unit_corpus(&data)?;
        // Interleave so the dev tail covers both languages.
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        RngStream::new(r.seed).split_str("mbart-order").shuffle(&mut order);
        let seqs: Vec<UnitSequence> = order.into_iter().map(|i| seqs[i].clone()).collect();
        let (tr, dv) = holdout(&seqs);
        if tr.is_empty() {
            return Err(Error::config("data.n_target_only", "denoising pretraining needs unit data"));
        }
        let cfg = super::stages::MbartConfig {
            lambda,
            p,
            train: with_seed(&base.train, r.stage_seed("mbart", base.train.seed)),
        };
        let (model, store, outcome) = pretrain_mbart(tr, dv, &data.vocabs(), &r.model, &cfg)?;
        save_model(dir, &store, &ModelMeta::Seq2seq { model: model.cfg.clone() }, &outcome, started)
    }

    pub fn load_asr(&self, stage: &str, data: &ToyData) -> Result<AsrSystem> {
        let dir = self.dir(stage);
        let (ckpt, meta) = load_meta(&dir)?;
        let ModelMeta::Ctc { model, vocab } = meta else { return Err(wrong_kind(&dir)) };
        let (m, store) = restore(&ckpt, |s| CtcModel::declare(s, &model, vocab))?;
        let v = data.vocabs();
        let words = if stage == "source_asr" { v.src_words } else { v.tgt_words };
        if words.size() != vocab {
            return Err(Error::Checkpoint(format!("{} was trained with a different vocabulary", dir.display())));
        }
        Ok(AsrSystem { model: m, store, vocab: words, feat_dim: model.feat_dim })
    }

    fn load_seq2seq(&self, stage: &str) -> Result<(Seq2SeqModel, ParamStore)> {
        let dir = self.dir(stage);
        let (ckpt, meta) = load_meta(&dir)?;
        let ModelMeta::Seq2seq { model } = meta else { return Err(wrong_kind(&dir)) };
        restore(&ckpt, |s| Seq2SeqModel::declare(s, &model))
    }

    pub fn load_s2ut(&self, data: &ToyData) -> Result<(S2utSystem, ModelMeta)> {
        let dir = self.dir("s2ut");
        let (ckpt, meta) = load_meta(&dir)?;
        let ModelMeta::S2ut { config, .. } = &meta else { return Err(wrong_kind(&dir)) };
        let (model, store) = restore(&ckpt, |s| S2utModel::declare(s, config))?;
        let v = data.vocabs();
        let sys = S2utSystem { model, store, units: v.units, lang: v.tgt_lang, feat_dim: config.model.feat_dim };
        Ok((sys, meta))
    }

    /// Weak S2UT examples from source-only speech via recognition,
    /// translation and unit generation.
    pub fn augment(&self, r: &Recipe) -> Result<Corpus> {
        let data = self.load_data()?;
        let asr = self.load_asr("source_asr", &data)?;
        let v = data.vocabs();
        let (mt_model, mt_store) = self.load_seq2seq("mt")?;
        let mt = MtSystem { model: mt_model, store: mt_store, src: v.src_words.clone(), tgt: v.tgt_text.clone() };
        let (t2u_model, t2u_store) = self.load_seq2seq("t2u")?;
        let t2u = T2uSystem { model: t2u_model, store: t2u_store, text: v.tgt_text.clone(), units: v.units.clone(), lang: v.tgt_lang.clone() };
        let count = if r.weak_count == 0 { data.corpus.count(Split::Train) } else { r.weak_count };
        let utts = &data.source_only[..count.min(data.source_only.len())];
        let weak = build_weak_corpus(utts, &asr, &mt, &t2u, &r.eval.test_beam)?;
        let corpus = Corpus { meta: data.corpus.meta.clone(), examples: weak.examples };
        let dir = self.dir("weak");
        corpus.save(&dir)?;
        let mut skipped = String::from("id\tstage\n");
        for (id, stage) in &weak.skipped {
            skipped.push_str(&format!("{id}\t{stage:?}\n"));
        }
        fs::write(dir.join("skipped.tsv"), skipped)?;
        Ok(corpus)
    }

    /// Gold training examples within the duration budget, plus weak ones when enabled.
    pub fn s2ut_train_set(&self, r: &Recipe, data: &ToyData) -> Result<Vec<Example>> {
        let corpus = if r.train_fraction < 1.0 {
            data.corpus.with_train_budget(data.corpus.total_duration(Split::Train) * r.train_fraction, r.seed)
        } else {
            data.corpus.clone()
        };
        let mut train: Vec<Example> = corpus.split(Split::Train).cloned().collect();
        if r.weak {
            let weak = Corpus::load(&self.dir("weak"))?;
            train.extend(weak.examples);
        }
        Ok(train)
    }

    /// Trains the S2UT model, from scratch or from the pretrained parts the
    /// recipe names.
    pub fn train_s2ut(&self, r: &Recipe, use_pretrained: bool) -> Result<S2utRunInfo> {
        let started = Instant::now();
        let data = self.load_data()?;
        let asr = self.load_asr("asr", &data)?;
        let v = data.vocabs();
        let train = self.s2ut_train_set(r, &data)?;
        let train: Vec<&Example> = train.iter().collect();
        let dev: Vec<&Example> = data.corpus.split(Split::Dev).collect();
        let enc = (use_pretrained && r.pretrained.encoder).then(|| load_checkpoint(&self.dir("w2v"))).transpose()?;
        let dec = (use_pretrained && r.pretrained.decoder).then(|| load_checkpoint(&self.dir("mbart"))).transpose()?;
        let mut stage = r.s2ut.clone();
        stage.train.seed = r.stage_seed("s2ut", stage.train.seed);
        if !use_pretrained {
            stage.strategy = None;
        }
        let shape = ModelConfig { feat_dim: data.corpus.meta.feat_dim, ..r.model.clone() };
        let init = Init { encoder: enc.as_ref(), decoder: dec.as_ref() };
        let run = train_s2ut(&stage, &shape, &train, &dev, &v, &asr, init, &r.eval.dev_beam)?;
        let meta = ModelMeta::S2ut {
            config: run.system.model.cfg.clone(),
            strategy: stage.strategy,
            trainable_params: run.trainable_params,
        };
        save_model(&self.dir("s2ut"), &run.system.store, &meta, &run.outcome, started)?;
        Ok(S2utRunInfo { system: run.system, best_step: run.outcome.best_step, examples: train.len() })
    }

    /// Scores dev and test with the recipe's test beam and writes the run report.
    pub fn evaluate(&self, r: &Recipe) -> Result<RunReport> {
        let data = self.load_data()?;
        let asr = self.load_asr("asr", &data)?;
        let (sys, meta) = self.load_s2ut(&data)?;
        let ModelMeta::S2ut { strategy, trainable_params, .. } = meta else { unreachable!() };
        let dir = self.dir("eval");
        let mut scores = Vec::new();
        for split in [Split::Dev, Split::Test] {
            let ex: Vec<&Example> = data.corpus.split(split).collect();
            let rep: AsrBleuReport = evaluate_s2ut(&sys, &asr, &ex, &r.eval.test_beam)?;
            rep.save(&dir, split.as_str())?;
            scores.push(rep);
        }
        let report = RunReport {
            name: r.name.clone(),
            strategy: strategy.map(|s| s.kind.as_str().to_string()).unwrap_or_else(|| "supervised".into()),
            dev_bleu: scores[0].bleu.score,
            test_bleu: scores[1].bleu.score,
            trainable_params,
            dev_excluded: scores[0].excluded,
            test_excluded: scores[1].excluded,
        };
        write_json(&self.run.join("report.json"), &report)?;
        Ok(report)
    }

    /// Denoising pretraining and unit-to-unit finetuning for every (lambda, p)
    /// cell; returns rows of (p, lambda, dev ASR-BLEU).
    pub fn sweep(&self, r: &Recipe) -> Result<Vec<SweepCell>> {
        if r.mbart.is_none() {
            return Err(Error::config("mbart", "section missing"));
        }
        let data = self.load_data()?;
        let asr = self.load_asr("asr", &data)?;
        let v = data.vocabs();
        let cb = &data.renderer.codebook;
        let src = &data.corpus.meta.src_lang;
        let pairs = data
            .corpus
            .split(Split::Train)
            .map(|e| Ok((speech_units(&e.src_wave, cb, src)?, e.tgt_units.clone())))
            .collect::<Result<Vec<_>>>()?;
        let dev = data
            .corpus
            .split(Split::Dev)
            .map(|e| Ok((e.id.clone(), speech_units(&e.src_wave, cb, src)?, e.tgt_text.clone())))
            .collect::<Result<Vec<_>>>()?;
        let train_cfg = with_seed(&r.s2ut.train, r.stage_seed("sweep", r.s2ut.train.seed));
        let mut cells = Vec::new();
        for &p in &r.sweep.p {
            for &lambda in &r.sweep.lambda {
                let dir = self.root.join("sweep").join(format!("lambda{lambda}_p{p}"));
                self.pretrain_mbart_with(r, lambda, p, &dir)?;
                let ckpt = load_checkpoint(&dir)?;
                let (sys, outcome) = train_unit_translation(&pairs, &dev, &v, &r.model, &ckpt, &train_cfg, &asr, &r.eval.dev_beam)?;
                let rep = evaluate_unit_translation(&sys, &asr, &dev, &r.eval.test_beam)?;
                fs::write(dir.join("finetune_metrics.tsv"), metrics_tsv(&outcome.log, false))?;
                cells.push(SweepCell { p, lambda, dev_bleu: rep.bleu.score });
            }
        }
        fs::write(self.root.join("sweep.tsv"), sweep_tsv(&r.sweep.lambda, &r.sweep.p, &cells))?;
        Ok(cells)
    }
}

#[derive(Clone, Debug)]
pub struct S2utRunInfo {
    pub system: S2utSystem,
    pub best_step: Option<usize>,
    pub examples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub p: f64,
    pub lambda: f64,
    pub dev_bleu: f64,
}

/// Rows are mask ratios, columns span-length means.
pub fn sweep_tsv(lambdas: &[f64], ps: &[f64], cells: &[SweepCell]) -> String {
    let mut s = String::from("p");
    for l in lambdas {
        s.push_str(&format!("\tlambda={l}"));
    }
    s.push('\n');
    for &p in ps {
        s.push_str(&p.to_string());
        for &l in lambdas {
            match cells.iter().find(|c| c.p == p && c.lambda == l) {
                Some(c) => s.push_str(&format!("\t{:.2}", c.dev_bleu)),
                None => s.push('\t'),
            }
        }
        s.push('\n');
    }
    s
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dir: PathBuf,
    pub report: Option<RunReport>,
    pub wall_s: Option<f64>,
}

/// Reads each run directory; a missing or unreadable report leaves the row flagged.
pub fn collect_reports(dirs: &[PathBuf]) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = dirs
        .iter()
        .map(|d| ReportRow {
            dir: d.clone(),
            report: read_json(&d.join("report.json")).ok(),
            wall_s: read_json::<Timing>(&d.join("s2ut").join("timing.json")).ok().map(|t| t.wall_ms as f64 / 1000.0),
        })
        .collect();
    rows.sort_by(|a, b| match (&a.report, &b.report) {
        (Some(x), Some(y)) => y.test_bleu.total_cmp(&x.test_bleu).then_with(|| x.name.cmp(&y.name)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.dir.cmp(&b.dir),
    });
    rows
}

const REPORT_COLUMNS: [&str; 6] = ["name", "strategy", "dev_bleu", "test_bleu", "params_m", "wall_s"];

fn cells(r: &ReportRow) -> Vec<String> {
    match &r.report {
        Some(x) => vec![
            x.name.clone(),
            x.strategy.clone(),
            format!("{:.2}", x.dev_bleu),
            format!("{:.2}", x.test_bleu),
            format!("{:.4}", x.trainable_params as f64 / 1e6),
            r.wall_s.map(|w| format!("{w:.1}")).unwrap_or_default(),
        ],
        None => vec![format!("MISSING {}", r.dir.display()), String::new(), String::new(), String::new(), String::new(), String::new()],
    }
}

pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut s = REPORT_COLUMNS.join("\t") + "\n";
    for r in rows {
        s.push_str(&(cells(r).join("\t") + "\n"));
    }
    s
}

/// Space-aligned version of [`report_tsv`].
pub fn report_text(rows: &[ReportRow]) -> String {
    let table: Vec<Vec<String>> = std::iter::once(REPORT_COLUMNS.iter().map(|c| c.to_string()).collect())
        .chain(rows.iter().map(cells))
        .collect();
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len()).map(|j| table.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    table
        .iter()
        .map(|r| {
            r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string() + "\n"
        })
        .collect()
}
