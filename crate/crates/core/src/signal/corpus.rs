//! Parallel corpus records, toy corpus generation, JSONL storage and
//! duration-budgeted subsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::audio::{extract_features, fit_unit_codebook, render_units_to_audio, Waveform};
use super::toy::{spoken_words, MotifBank, ToyLanguageSpec};
use crate::error::{Error, Result};
use crate::tensor::RngStream;
use crate::units::{kmeans_assign, reduce_units, Codebook, UnitForm, UnitSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub split: Split,
    pub src_wave: Waveform,
    pub src_text: String,
    pub tgt_text: String,
    pub tgt_units: UnitSequence,
    pub duration_s: f64,
    pub weak: bool,
    pub domain: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub src_lang: String,
    pub tgt_lang: String,
    pub k_units: usize,
    pub feat_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub examples: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    split: Split,
    src_text: String,
    tgt_text: String,
    tgt_units: String,
    src_audio: String,
    duration_s: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    weak: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<String>,
}

/// Source speech without a translation, used for weak supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceUtterance {
    pub id: String,
    pub src_text: String,
    pub src_wave: Waveform,
    pub domain: Option<String>,
}

impl Corpus {
    pub fn empty(meta: CorpusMeta) -> Self {
        Corpus { meta, examples: Vec::new() }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn total_duration(&self, split: Split) -> f64 {
        self.split(split).map(|e| e.duration_s).sum()
    }

    /// Unique ids, populated fields, reduced units within range.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.examples {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate example id `{}`", e.id)));
            }
            if e.src_text.trim().is_empty() || e.tgt_text.trim().is_empty() || e.tgt_units.is_empty() || e.src_wave.is_empty() {
                return Err(Error::Data(format!("example `{}` has an empty field", e.id)));
            }
            if e.tgt_units.form != UnitForm::Reduced
                || e.tgt_units.units.windows(2).any(|w| w[0] == w[1])
                || e.tgt_units.units.iter().any(|&u| u >= self.meta.k_units)
            {
                return Err(Error::Data(format!("example `{}` has invalid target units", e.id)));
            }
            if (e.duration_s - e.src_wave.duration_s()).abs() > 1e-9 {
                return Err(Error::Data(format!("example `{}` duration disagrees with its audio", e.id)));
            }
        }
        Ok(())
    }

    /// Writes `corpus.json`, `corpus.jsonl` and one `audio/<id>.f32` per example.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir.join("audio"))?;
        fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        let mut out = Vec::new();
        for e in &self.examples {
            let rel = format!("audio/{}.f32", e.id);
            fs::write(dir.join(&rel), e.src_wave.to_le_bytes())?;
            let rec = Record {
                id: e.id.clone(),
                split: e.split,
                src_text: e.src_text.clone(),
                tgt_text: e.tgt_text.clone(),
                tgt_units: e.tgt_units.to_text(),
                src_audio: rel,
                duration_s: e.duration_s,
                weak: e.weak,
                domain: e.domain.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        fs::File::create(dir.join("corpus.jsonl"))?.write_all(&out)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CorpusMeta = serde_json::from_str(&fs::read_to_string(dir.join("corpus.json"))?)?;
        let text = fs::read_to_string(dir.join("corpus.jsonl"))?;
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("corpus.jsonl line {}: {e}", i + 1)))?;
            let src_wave = Waveform::from_le_bytes(&fs::read(dir.join(&rec.src_audio))?)?;
            examples.push(Example {
                tgt_units: UnitSequence::reduced(meta.tgt_lang.clone(), UnitSequence::parse_ids(&rec.tgt_units)?)?,
                id: rec.id,
                split: rec.split,
                src_wave,
                src_text: rec.src_text,
                tgt_text: rec.tgt_text,
                duration_s: rec.duration_s,
                weak: rec.weak,
                domain: rec.domain,
            });
        }
        let c = Corpus { meta, examples };
        c.validate()?;
        Ok(c)
    }

    /// Keeps dev and test, replacing train by a duration-budgeted subset.
    pub fn with_train_budget(&self, budget_s: f64, seed: u64) -> Corpus {
        let train: Vec<Example> = self.split(Split::Train).cloned().collect();
        let keep: BTreeSet<String> = sample_duration_subset(&train, budget_s, seed).into_iter().map(|e| e.id).collect();
        Corpus {
            meta: self.meta.clone(),
            examples: self
                .examples
                .iter()
                .filter(|e| e.split != Split::Train || keep.contains(&e.id))
                .cloned()
                .collect(),
        }
    }
}

/// Everything needed to render and quantize toy speech.
pub struct ToyRenderer {
    pub spec: ToyLanguageSpec,
    pub codebook: Codebook,
    pub src_motifs: MotifBank,
    pub tgt_motifs: MotifBank,
}

impl ToyRenderer {
    pub fn new(spec: &ToyLanguageSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let codebook = fit_unit_codebook(spec.k_units, spec.feat_dim, seed)?;
        Self::with_codebook(spec, codebook)
    }

    pub fn with_codebook(spec: &ToyLanguageSpec, codebook: Codebook) -> Result<Self> {
        spec.validate()?;
        if codebook.k() != spec.k_units || codebook.dim() != spec.feat_dim {
            return Err(Error::Data("codebook shape does not match the language spec".into()));
        }
        Ok(ToyRenderer {
            src_motifs: MotifBank::new(spec, &spec.src_lang, &spec.src_spoken_vocab())?,
            tgt_motifs: MotifBank::new(spec, &spec.tgt_lang, &spec.tgt_spoken_vocab())?,
            spec: spec.clone(),
            codebook,
        })
    }

    pub fn source_speech(&self, src_words: &[String]) -> Result<Waveform> {
        render_units_to_audio(&self.src_motifs.raw_units(&spoken_words(src_words))?, self.spec.k_units)
    }

    /// Target text -> target speech -> features -> units -> reduced units.
    pub fn target_units(&self, tgt_words: &[String]) -> Result<UnitSequence> {
        let raw = self.tgt_motifs.raw_units(&spoken_words(tgt_words))?;
        let wave = render_units_to_audio(&raw, self.spec.k_units)?;
        let feats = extract_features(&wave, self.spec.feat_dim)?;
        Ok(reduce_units(&kmeans_assign(&feats, &self.codebook, &self.spec.tgt_lang)?))
    }

    fn domain(&self, rng: &mut RngStream, domains: &[String]) -> Option<String> {
        (!domains.is_empty()).then(|| domains[rng.below(domains.len())].clone())
    }

    pub fn example(&self, id: String, split: Split, rng: &mut RngStream, domains: &[String]) -> Result<Example> {
        let src = self.spec.sample_sentence(rng);
        let tgt = self.spec.translate(&src)?;
        let src_wave = self.source_speech(&src)?;
        Ok(Example {
            id,
            split,
            duration_s: src_wave.duration_s(),
            src_wave,
            src_text: src.join(" "),
            tgt_text: tgt.join(" "),
            tgt_units: self.target_units(&tgt)?,
            weak: false,
            domain: self.domain(rng, domains),
        })
    }

    pub fn meta(&self) -> CorpusMeta {
        CorpusMeta {
            src_lang: self.spec.src_lang.clone(),
            tgt_lang: self.spec.tgt_lang.clone(),
            k_units: self.spec.k_units,
            feat_dim: self.spec.feat_dim,
        }
    }

    pub fn corpus(&self, n_train: usize, n_dev: usize, n_test: usize, seed: u64, domains: &[String]) -> Result<Corpus> {
        let root = RngStream::new(seed);
        let mut examples = Vec::with_capacity(n_train + n_dev + n_test);
        for (split, n) in [(Split::Train, n_train), (Split::Dev, n_dev), (Split::Test, n_test)] {
            for i in 0..n {
                let mut rng = root.split_str(&format!("{}:{i}", split.as_str()));
                examples.push(self.example(format!("{}-{i:05}", split.as_str()), split, &mut rng, domains)?);
            }
        }
        Ok(Corpus { meta: self.meta(), examples })
    }

    /// Source-only utterances drawn from a stream disjoint from `corpus`.
    pub fn source_only(&self, n: usize, seed: u64, domains: &[String]) -> Result<Vec<SourceUtterance>> {
        let root = RngStream::new(seed).split_str("source-only");
        (0..n)
            .map(|i| {
                let mut rng = root.split(i as u64);
                let src = self.spec.sample_sentence(&mut rng);
                Ok(SourceUtterance {
                    id: format!("asr-{i:05}"),
                    src_wave: self.source_speech(&src)?,
                    src_text: src.join(" "),
                    domain: self.domain(&mut rng, domains),
                })
            })
            .collect()
    }
}

/// Generates a deterministic toy corpus, fitting the unit codebook from `seed`.
pub fn gen_toy_corpus(spec: &ToyLanguageSpec, n_train: usize, n_dev: usize, n_test: usize, seed: u64) -> Result<Corpus> {
    ToyRenderer::new(spec, seed)?.corpus(n_train, n_dev, n_test, seed, &[])
}

/// Per domain, walks a seeded permutation and keeps examples until the
/// domain's share of the budget is reached. Larger budgets extend the same
/// prefixes, so subsets are nested. Output keeps input order.
pub fn sample_duration_subset(examples: &[Example], budget_s: f64, seed: u64) -> Vec<Example> {
    let total: f64 = examples.iter().map(|e| e.duration_s).sum();
    if budget_s <= 0.0 || total <= 0.0 {
        return Vec::new();
    }
    let mut by_domain: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_domain.entry(e.domain.as_deref()).or_default().push(i);
    }
    let root = RngStream::new(seed);
    let mut keep = vec![false; examples.len()];
    for (domain, mut idx) in by_domain {
        let dur: f64 = idx.iter().map(|&i| examples[i].duration_s).sum();
        let share = budget_s * dur / total;
        root.split_str(domain.unwrap_or("")).shuffle(&mut idx);
        let mut acc = 0.0;
        for i in idx {
            if acc >= share {
                break;
            }
            keep[i] = true;
            acc += examples[i].duration_s;
        }
    }
    examples.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Corpus {
        gen_toy_corpus(&ToyLanguageSpec::default(), 30, 5, 5, 1).unwrap()
    }

    #[test]
    fn empty_corpus() {
        let c = gen_toy_corpus(&ToyLanguageSpec::default(), 0, 0, 0, 1).unwrap();
        assert!(c.examples.is_empty());
        for s in Split::ALL {
            assert_eq!(c.count(s), 0);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let c = small();
        c.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        assert_eq!(Corpus::load(dir.path()).unwrap(), c);
        let first = fs::read(dir.path().join("corpus.jsonl")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        small().save(dir2.path()).unwrap();
        assert_eq!(fs::read(dir2.path().join("corpus.jsonl")).unwrap(), first);
    }

    #[test]
    fn frames_match_motif_units() {
        let r = ToyRenderer::new(&ToyLanguageSpec::default(), 1).unwrap();
        let words: Vec<String> = ["gato", "come"].iter().map(|s| s.to_string()).collect();
        let raw = r.src_motifs.raw_units(&words).unwrap();
        assert_eq!(r.source_speech(&words).unwrap().frames(), raw.len());
    }

    #[test]
    fn subset_edges_and_nesting() {
        let c = small();
        let train: Vec<Example> = c.split(Split::Train).cloned().collect();
        assert!(sample_duration_subset(&train, 0.0, 3).is_empty());
        assert_eq!(sample_duration_subset(&train, 1e9, 3).len(), train.len());
        let total = c.total_duration(Split::Train);
        let mut prev: BTreeSet<String> = BTreeSet::new();
        for frac in [0.1, 0.3, 0.5, 1.0] {
            let s = sample_duration_subset(&train, frac * total, 3);
            let ids: BTreeSet<String> = s.iter().map(|e| e.id.clone()).collect();
            assert!(prev.is_subset(&ids));
            let dur: f64 = s.iter().map(|e| e.duration_s).sum();
            let max = train.iter().map(|e| e.duration_s).fold(0.0, f64::max);
            assert!(dur >= frac * total - 1e-9 || ids.len() == train.len());
            assert!(dur <= frac * total + max + 1e-9);
            prev = ids;
        }
    }
}
