//! Every dataset an experiment needs, generated from one toy language.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Corpus, SourceUtterance, ToyLanguageSpec, ToyRenderer, Waveform};
use crate::tensor::RngStream;
use crate::units::{Codebook, UnitSequence, UnitVocab, WordVocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub lang: ToyLanguageSpec,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Transcribed source speech without translations.
    #[serde(default)]
    pub n_source_only: usize,
    /// Target text with its units and no source side.
    #[serde(default)]
    pub n_target_only: usize,
    /// Parallel text for the text translation model.
    #[serde(default)]
    pub n_text: usize,
    #[serde(default)]
    pub domains: Vec<String>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.lang.validate().map_err(|e| e.at("lang"))?;
        for (name, n) in [("n_train", self.n_train), ("n_dev", self.n_dev), ("n_test", self.n_test)] {
            if n == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetUtterance {
    pub id: String,
    pub text: String,
    pub units: UnitSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextPair {
    pub src: String,
    pub tgt: String,
}

/// Word and unit vocabularies shared by all models of one language pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabs {
    /// Source transcripts, numbers spelled out.
    pub src_words: WordVocab,
    /// Target transcripts, numbers spelled out.
    pub tgt_words: WordVocab,
    /// Written target text with digits.
    pub tgt_text: WordVocab,
    /// Units of both languages, target tag first.
    pub units: UnitVocab,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl Vocabs {
    pub fn new(spec: &ToyLanguageSpec) -> Self {
        Vocabs {
            src_words: WordVocab::new(spec.src_spoken_vocab()),
            tgt_words: WordVocab::new(spec.tgt_spoken_vocab()),
            tgt_text: WordVocab::new(spec.tgt_text_vocab()),
            units: UnitVocab::new(spec.k_units, &[spec.tgt_lang.as_str(), spec.src_lang.as_str()]),
            src_lang: spec.src_lang.clone(),
            tgt_lang: spec.tgt_lang.clone(),
        }
    }
}

pub struct ToyData {
    pub renderer: ToyRenderer,
    pub corpus: Corpus,
    pub source_only: Vec<SourceUtterance>,
    pub target_only: Vec<TargetUtterance>,
    pub text: Vec<TextPair>,
}

#[derive(Serialize, Deserialize)]
struct SourceRecord {
    id: String,
    src_text: String,
    src_audio: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TargetRecord {
    id: String,
    text: String,
    units: String,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

impl ToyData {
    pub fn generate(cfg: &DataConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let renderer = ToyRenderer::new(&cfg.lang, seed)?;
        let corpus = renderer.corpus(cfg.n_train, cfg.n_dev, cfg.n_test, seed, &cfg.domains)?;
        let source_only = renderer.source_only(cfg.n_source_only, seed, &cfg.domains)?;
        let root = RngStream::new(seed);
        let tgt_root = root.split_str("target-only");
        let target_only = (0..cfg.n_target_only)
            .map(|i| {
                let src = cfg.lang.sample_sentence(&mut tgt_root.split(i as u64));
                let tgt = cfg.lang.translate(&src)?;
                Ok(TargetUtterance { id: format!("tgt-{i:05}"), units: renderer.target_units(&tgt)?, text: tgt.join(" ") })
            })
            .collect::<Result<_>>()?;
        let text_root = root.split_str("text");
        let text = (0..cfg.n_text)
            .map(|i| {
                let src = cfg.lang.sample_sentence(&mut text_root.split(i as u64));
                Ok(TextPair { tgt: cfg.lang.translate(&src)?.join(" "), src: src.join(" ") })
            })
            .collect::<Result<_>>()?;
        Ok(ToyData { renderer, corpus, source_only, target_only, text })
    }

    pub fn vocabs(&self) -> Vocabs {
        Vocabs::new(&self.renderer.spec)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("source_audio"))?;
        fs::write(dir.join("lang.json"), serde_json::to_string_pretty(&self.renderer.spec)? + "\n")?;
        self.renderer.codebook.save(&dir.join("codebook"))?;
        self.corpus.save(&dir.join("corpus"))?;
        let mut recs = Vec::with_capacity(self.source_only.len());
        for u in &self.source_only {
            let rel = format!("source_audio/{}.f32", u.id);
            fs::write(dir.join(&rel), u.src_wave.to_le_bytes())?;
            recs.push(SourceRecord { id: u.id.clone(), src_text: u.src_text.clone(), src_audio: rel, domain: u.domain.clone() });
        }
        write_jsonl(&dir.join("source_only.jsonl"), recs)?;
        write_jsonl(
            &dir.join("target_only.jsonl"),
            self.target_only.iter().map(|t| TargetRecord { id: t.id.clone(), text: t.text.clone(), units: t.units.to_text() }),
        )?;
        write_jsonl(&dir.join("text.jsonl"), &self.text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec: ToyLanguageSpec = serde_json::from_str(&fs::read_to_string(dir.join("lang.json"))?)?;
        let renderer = ToyRenderer::with_codebook(&spec, Codebook::load(&dir.join("codebook"))?)?;
        let corpus = Corpus::load(&dir.join("corpus"))?;
        let source_only = read_jsonl::<SourceRecord>(&dir.join("source_only.jsonl"))?
            .into_iter()
            .map(|r| {
                Ok(SourceUtterance {
                    src_wave: Waveform::from_le_bytes(&fs::read(dir.join(&r.src_audio))?)?,
                    id: r.id,
                    src_text: r.src_text,
                    domain: r.domain,
                })
            })
            .collect::<Result<_>>()?;
        let target_only = read_jsonl::<TargetRecord>(&dir.join("target_only.jsonl"))?
            .into_iter()
            .map(|r| {
                Ok(TargetUtterance {
                    units: UnitSequence::reduced(spec.tgt_lang.clone(), UnitSequence::parse_ids(&r.units)?)?,
                    id: r.id,
                    text: r.text,
                })
            })
            .collect::<Result<_>>()?;
        let text = read_jsonl(&dir.join("text.jsonl"))?;
        Ok(ToyData { renderer, corpus, source_only, target_only, text })
    }
}
