//! Toy corpora, the unit renderer and framewise features.

mod audio;
mod corpus;
mod toy;

pub use audio::{
    extract_features, fit_unit_codebook, render_units_to_audio, unit_frequency, unit_signatures,
    FeatureExtractor, Waveform, FRAME, SAMPLE_RATE,
};
pub use corpus::{
    gen_toy_corpus, sample_duration_subset, Corpus, CorpusMeta, Example, SourceUtterance, Split, ToyRenderer,
};
pub use toy::{spoken_words, LexEntry, Motif, MotifBank, ToyLanguageSpec, WordClass};
