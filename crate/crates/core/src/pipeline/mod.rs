//! Experiment plumbing: data generation, stage training and evaluation.

mod data;
mod recipe;
mod stages;
mod workspace;

pub use data::{DataConfig, TargetUtterance, TextPair, ToyData, Vocabs};
pub use recipe::{EvalConfig, PretrainedParts, Recipe, SweepGrid};
pub use stages::{
    evaluate_s2ut, evaluate_unit_translation, pretrain_mbart, pretrain_w2v, s2ut_items, source_asr_items, speech_units,
    target_asr_items, train_asr, train_mt, train_s2ut, train_t2u, train_unit_translation, unit_speech_features,
    word_error_rate, AuxSpec, AuxTarget, Init, MbartConfig, S2utRun, S2utStageConfig, StageConfig, UnitTranslator,
    W2vConfig,
};
pub use workspace::{
    collect_reports, report_text, report_tsv, sweep_tsv, ModelMeta, ReportRow, RunReport, S2utRunInfo, SweepCell, Timing,
    Workspace,
};
