//! Synthetic parallel language pair with a word map and one reordering rule.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::number_to_words;
use crate::tensor::{fnv1a, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordClass {
    Noun,
    Adj,
    Verb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexEntry {
    pub src: String,
    pub tgt: String,
    pub class: WordClass,
    /// Relative frequency within its class.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguageSpec {
    pub src_lang: String,
    pub tgt_lang: String,
    pub lexicon: Vec<LexEntry>,
    /// Fraction of sentences that contain one number token.
    pub digit_rate: f64,
    pub max_number: u64,
    /// Inclusive word-count range.
    pub length_range: (usize, usize),
    /// Probability that a noun is followed by an adjective.
    pub adj_rate: f64,
    pub k_units: usize,
    pub feat_dim: usize,
    /// Inclusive range of distinct units per word motif.
    pub motif_units: (usize, usize),
    /// Frames per motif unit, 1..=max.
    pub max_unit_frames: usize,
}

fn entry(src: &str, tgt: &str, class: WordClass, weight: f64) -> LexEntry {
    LexEntry { src: src.into(), tgt: tgt.into(), class, weight }
}

impl Default for ToyLanguageSpec {
    fn default() -> Self {
        use WordClass::*;
        ToyLanguageSpec {
            src_lang: "es".into(),
            tgt_lang: "en".into(),
            lexicon: vec![
                entry("gato", "cat", Noun, 3.0),
                entry("perro", "dog", Noun, 3.0),
                entry("casa", "house", Noun, 2.0),
                entry("libro", "book", Noun, 1.0),
                entry("mesa", "table", Noun, 1.0),
                entry("rojo", "red", Adj, 2.0),
                entry("grande", "big", Adj, 1.0),
                entry("nuevo", "new", Adj, 1.0),
                entry("come", "eats", Verb, 2.0),
                entry("mira", "sees", Verb, 2.0),
                entry("tiene", "has", Verb, 1.0),
            ],
            digit_rate: 0.2,
            max_number: 12,
            length_range: (3, 6),
            adj_rate: 0.5,
            k_units: 32,
            feat_dim: 16,
            motif_units: (2, 3),
            max_unit_frames: 2,
        }
    }
}

impl ToyLanguageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lexicon.is_empty() {
            return Err(Error::config("lexicon", "vocabulary is empty"));
        }
        for class in [WordClass::Noun, WordClass::Verb] {
            if !self.lexicon.iter().any(|e| e.class == class) {
                return Err(Error::config("lexicon", format!("needs at least one {class:?}")));
            }
        }
        let mut src = BTreeSet::new();
        let mut tgt = BTreeSet::new();
        for (i, e) in self.lexicon.iter().enumerate() {
            for w in [&e.src, &e.tgt] {
                if w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase()) {
                    return Err(Error::config(format!("lexicon[{i}]"), format!("word `{w}` must be lowercase letters")));
                }
            }
            if !(e.weight > 0.0) {
                return Err(Error::config(format!("lexicon[{i}].weight"), "must be > 0"));
            }
            if !src.insert(e.src.clone()) || !tgt.insert(e.tgt.clone()) {
                return Err(Error::config(format!("lexicon[{i}]"), "word map must be one-to-one"));
            }
        }
        let (lo, hi) = self.length_range;
        if lo < 2 || hi < lo {
            return Err(Error::config("length_range", "need 2 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.digit_rate) {
            return Err(Error::config("digit_rate", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.adj_rate) {
            return Err(Error::config("adj_rate", "must be in [0, 1]"));
        }
        if self.k_units < 2 {
            return Err(Error::config("k_units", "must be >= 2"));
        }
        let (mlo, mhi) = self.motif_units;
        if mlo == 0 || mhi < mlo {
            return Err(Error::config("motif_units", "need 1 <= min <= max"));
        }
        if self.max_unit_frames == 0 {
            return Err(Error::config("max_unit_frames", "must be >= 1"));
        }
        Ok(())
    }

    pub fn class_of_src(&self, w: &str) -> Option<WordClass> {
        self.lexicon.iter().find(|e| e.src == w).map(|e| e.class)
    }

    fn class_of_tgt(&self, w: &str) -> Option<WordClass> {
        self.lexicon.iter().find(|e| e.tgt == w).map(|e| e.class)
    }

    /// Number words that can appear in speech for numbers up to `max_number`.
    pub fn number_words(&self) -> BTreeSet<String> {
        (0..=self.max_number)
            .flat_map(|n| number_to_words(n).split(' ').map(String::from).collect::<Vec<_>>())
            .collect()
    }

    /// Words that can occur in source-language speech transcripts.
    pub fn src_spoken_vocab(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = self.lexicon.iter().map(|e| e.src.clone()).collect();
        v.extend(self.number_words());
        v.into_iter().collect()
    }

    /// Words that can occur in target-language speech transcripts.
    pub fn tgt_spoken_vocab(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = self.lexicon.iter().map(|e| e.tgt.clone()).collect();
        v.extend(self.number_words());
        v.into_iter().collect()
    }

    /// Written target tokens: words plus digit strings.
    pub fn tgt_text_vocab(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = self.lexicon.iter().map(|e| e.tgt.clone()).collect();
        v.extend((0..=self.max_number).map(|n| n.to_string()));
        v.into_iter().collect()
    }

    fn pick(&self, class: WordClass, rng: &mut RngStream) -> &LexEntry {
        let items: Vec<&LexEntry> = self.lexicon.iter().filter(|e| e.class == class).collect();
        let total: f64 = items.iter().map(|e| e.weight).sum();
        let mut r = rng.next_f64() * total;
        for e in &items {
            if r < e.weight {
                return e;
            }
            r -= e.weight;
        }
        items[items.len() - 1]
    }

    /// Alternating noun phrases and verbs, truncated to a sampled length.
    /// A noun phrase is an optional number, a noun and an optional adjective.
    pub fn sample_sentence(&self, rng: &mut RngStream) -> Vec<String> {
        let (lo, hi) = self.length_range;
        let n = lo + rng.below(hi - lo + 1);
        let with_digit = rng.bernoulli(self.digit_rate);
        let has_adj = self.lexicon.iter().any(|e| e.class == WordClass::Adj);
        let mut words = Vec::new();
        let mut phrase = 0;
        while words.len() < n {
            if phrase % 2 == 0 {
                if phrase == 0 && with_digit {
                    words.push(rng.below(self.max_number as usize + 1).to_string());
                }
                words.push(self.pick(WordClass::Noun, rng).src.clone());
                if has_adj && rng.bernoulli(self.adj_rate) {
                    words.push(self.pick(WordClass::Adj, rng).src.clone());
                }
            } else {
                words.push(self.pick(WordClass::Verb, rng).src.clone());
            }
            phrase += 1;
        }
        words.truncate(n);
        words
    }

    /// Word map plus swapping every source noun-adjective pair.
    pub fn translate(&self, src: &[String]) -> Result<Vec<String>> {
        let map: BTreeMap<&str, &LexEntry> = self.lexicon.iter().map(|e| (e.src.as_str(), e)).collect();
        let word = |w: &str| -> Result<String> {
            if w.bytes().all(|b| b.is_ascii_digit()) {
                return Ok(w.to_string());
            }
            map.get(w).map(|e| e.tgt.clone()).ok_or_else(|| Error::Data(format!("`{w}` not in source vocabulary")))
        };
        let mut out = Vec::with_capacity(src.len());
        let mut i = 0;
        while i < src.len() {
            let swap = i + 1 < src.len()
                && self.class_of_src(&src[i]) == Some(WordClass::Noun)
                && self.class_of_src(&src[i + 1]) == Some(WordClass::Adj);
            if swap {
                out.push(word(&src[i + 1])?);
                out.push(word(&src[i])?);
                i += 2;
            } else {
                out.push(word(&src[i])?);
                i += 1;
            }
        }
        Ok(out)
    }

    /// Inverse of [`translate`](Self::translate) on generated sentences.
    pub fn back_translate(&self, tgt: &[String]) -> Result<Vec<String>> {
        let map: BTreeMap<&str, &LexEntry> = self.lexicon.iter().map(|e| (e.tgt.as_str(), e)).collect();
        let word = |w: &str| -> Result<String> {
            if w.bytes().all(|b| b.is_ascii_digit()) {
                return Ok(w.to_string());
            }
            map.get(w).map(|e| e.src.clone()).ok_or_else(|| Error::Data(format!("`{w}` not in target vocabulary")))
        };
        let mut out = Vec::with_capacity(tgt.len());
        let mut i = 0;
        while i < tgt.len() {
            let swap = i + 1 < tgt.len()
                && self.class_of_tgt(&tgt[i]) == Some(WordClass::Adj)
                && self.class_of_tgt(&tgt[i + 1]) == Some(WordClass::Noun);
            if swap {
                out.push(word(&tgt[i + 1])?);
                out.push(word(&tgt[i])?);
                i += 2;
            } else {
                out.push(word(&tgt[i])?);
                i += 1;
            }
        }
        Ok(out)
    }
}

/// Replaces digit tokens by their English spoken form.
pub fn spoken_words(words: &[String]) -> Vec<String> {
    words
        .iter()
        .flat_map(|w| match w.parse::<u64>() {
            Ok(n) if w.bytes().all(|b| b.is_ascii_digit()) => {
                number_to_words(n).split(' ').map(String::from).collect()
            }
            _ => vec![w.clone()],
        })
        .collect()
}

/// A word's fixed audio motif: distinct consecutive units with per-unit frame counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub units: Vec<usize>,
    pub frames: Vec<usize>,
}

impl Motif {
    pub fn raw(&self) -> impl Iterator<Item = usize> + '_ {
        self.units.iter().zip(&self.frames).flat_map(|(&u, &f)| std::iter::repeat_n(u, f))
    }
}

/// Per-language motif table; motifs of distinct words differ in their unit strings.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifBank {
    lang: String,
    table: BTreeMap<String, Motif>,
}

impl MotifBank {
    pub fn new(spec: &ToyLanguageSpec, lang: &str, words: &[String]) -> Result<Self> {
        let (lo, hi) = spec.motif_units;
        let mut table = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for w in words {
            let mut salt = 0u64;
            let motif = loop {
                let mut rng = RngStream::new(fnv1a(format!("{lang}:{w}:{salt}").as_bytes()));
                let n = lo + rng.below(hi - lo + 1);
                let mut units: Vec<usize> = Vec::with_capacity(n);
                while units.len() < n {
                    let u = rng.below(spec.k_units);
                    if units.last() != Some(&u) {
                        units.push(u);
                    }
                }
                let frames = (0..n).map(|_| 1 + rng.below(spec.max_unit_frames)).collect();
                if seen.insert(units.clone()) {
                    break Motif { units, frames };
                }
                salt += 1;
                if salt > 10_000 {
                    return Err(Error::Data(format!("cannot find a distinct motif for `{w}`")));
                }
            };
            table.insert(w.clone(), motif);
        }
        Ok(MotifBank { lang: lang.into(), table })
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn get(&self, w: &str) -> Result<&Motif> {
        self.table.get(w).ok_or_else(|| Error::Data(format!("no {} motif for `{w}`", self.lang)))
    }

    /// Raw framewise units of a spoken word sequence.
    pub fn raw_units(&self, words: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for w in words {
            out.extend(self.get(w)?.raw());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn translation_rule() {
        let spec = ToyLanguageSpec::default();
        let t = spec.translate(&words("3 gato rojo come perro")).unwrap();
        assert_eq!(t, words("3 red cat eats dog"));
        assert!(spec.translate(&words("gato azul")).is_err());
    }

    #[test]
    fn spoken_form() {
        assert_eq!(spoken_words(&words("11 gato")), words("eleven gato"));
    }

    #[test]
    fn invalid_specs() {
        let mut s = ToyLanguageSpec::default();
        s.lexicon.clear();
        assert!(s.validate().is_err());
        let mut s = ToyLanguageSpec::default();
        s.lexicon[1].tgt = "cat".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn motifs_distinct() {
        let spec = ToyLanguageSpec::default();
        let vocab = spec.src_spoken_vocab();
        let bank = MotifBank::new(&spec, "es", &vocab).unwrap();
        let set: BTreeSet<Vec<usize>> = vocab.iter().map(|w| bank.get(w).unwrap().units.clone()).collect();
        assert_eq!(set.len(), vocab.len());
    }

    proptest! {
        #[test]
        fn translation_invertible(seed in 0u64..5000) {
            let spec = ToyLanguageSpec::default();
            let s = spec.sample_sentence(&mut RngStream::new(seed));
            let (lo, hi) = spec.length_range;
            prop_assert!(s.len() >= lo && s.len() <= hi);
            let t = spec.translate(&s).unwrap();
            prop_assert_eq!(spec.back_translate(&t).unwrap(), s);
        }
    }
}
