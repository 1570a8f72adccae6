//! Speech output scored by transcribing it and computing BLEU on text.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu, sentence_bleu, BleuScore};
use super::text::normalize_text;
use crate::error::Result;
use crate::signal::{render_units_to_audio, Waveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrBleuRecord {
    pub id: String,
    pub hyp: String,
    pub reference: String,
    pub sentence_bleu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrBleuReport {
    pub bleu: BleuScore,
    pub scored: usize,
    /// Examples whose normalized reference is empty.
    pub excluded: usize,
    #[serde(skip)]
    pub records: Vec<AsrBleuRecord>,
}

/// One system output: example id, generated units and the reference text.
pub struct UnitOutput<'a> {
    pub id: &'a str,
    pub units: &'a [usize],
    pub reference: &'a str,
}

/// Renders each unit sequence to audio, transcribes it and scores the
/// normalized transcripts against the normalized references.
pub fn asr_bleu_from_units(
    outputs: &[UnitOutput<'_>],
    k_units: usize,
    transcribe: &mut dyn FnMut(&Waveform) -> Result<String>,
) -> Result<AsrBleuReport> {
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut records = Vec::new();
    let mut excluded = 0;
    for o in outputs {
        let reference = normalize_text(o.reference);
        if reference.is_empty() {
            excluded += 1;
            continue;
        }
        let wave = render_units_to_audio(o.units, k_units)?;
        let hyp = normalize_text(&transcribe(&wave)?);
        records.push(AsrBleuRecord {
            id: o.id.to_string(),
            sentence_bleu: sentence_bleu(&hyp, &reference),
            hyp: hyp.clone(),
            reference: reference.clone(),
        });
        hyps.push(hyp);
        refs.push(reference);
    }
    Ok(AsrBleuReport { bleu: corpus_bleu(&hyps, &refs)?, scored: records.len(), excluded, records })
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl AsrBleuReport {
    pub fn records_tsv(&self) -> String {
        let mut out = String::from("id\thyp\tref\tsentence_bleu\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{:.4}\n", clean(&r.id), clean(&r.hyp), clean(&r.reference), r.sentence_bleu));
        }
        out
    }

    /// Writes `{stem}.json` and `{stem}.tsv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(dir.join(format!("{stem}.tsv")), self.records_tsv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exclusion_count_is_exact() {
        let outs = [
            UnitOutput { id: "a", units: &[1, 2], reference: "one two" },
            UnitOutput { id: "b", units: &[3], reference: "(Applause)" },
            UnitOutput { id: "c", units: &[], reference: " ,. " },
        ];
        let mut asr = |w: &Waveform| Ok(if w.frames() == 2 { "One, two!".to_string() } else { String::new() });
        let r = asr_bleu_from_units(&outs, 8, &mut asr).unwrap();
        assert_eq!(r.excluded, 2);
        assert_eq!(r.scored, 1);
        assert!((r.bleu.score - 0.0).abs() < 1e-12);
        assert_eq!(r.records[0].hyp, "one two");
        assert!(r.records_tsv().starts_with("id\thyp\tref\tsentence_bleu\na\tone two\tone two\t"));
    }
}
