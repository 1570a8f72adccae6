//! Decoding, normalization and scoring.

mod asr_bleu;
mod beam;
mod bleu;
mod text;

pub use asr_bleu::{asr_bleu_from_units, AsrBleuRecord, AsrBleuReport, UnitOutput};
pub use beam::{beam_search, greedy_decode, BeamConfig, Hypothesis, StepScorer};
pub use bleu::{corpus_bleu, sentence_bleu, BleuScore, MAX_ORDER};
pub use text::{normalize_text, number_to_words};
